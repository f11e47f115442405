"""Named seed-stream derivation.

Every random draw in the toolkit flows from a single user seed. Stages and
sub-tasks derive independent child streams by name, so any stage can be re-run
in isolation and reproduce its output exactly, and parallel schedules cannot
change results (each unit of work owns its own stream).
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, int):
        return name & 0xFFFFFFFF
    return zlib.crc32(name.encode("utf-8"))


def child_sequence(seed: int, *names: str | int) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by (seed, *names)."""
    return np.random.SeedSequence([int(seed)] + [_key(n) for n in names])


def rng(seed: int, *names: str | int) -> np.random.Generator:
    """Generator for the named stream."""
    return np.random.default_rng(child_sequence(seed, *names))


def derive_seed(seed: int, *names: str | int) -> int:
    """Collapse a named stream into a plain integer seed (for sub-stages)."""
    return int(child_sequence(seed, *names).generate_state(1, np.uint64)[0])
