"""Uncertainty machinery for route-level risk control.

Two interchangeable mechanisms quantify how much slack a route needs so that
its realised duration stays within the shift with probability at least
1 - alpha:

* a concentration buffer assuming independent sub-Gaussian prediction
  residuals with per-activity proxy variances (estimated per activity class
  as mean squared validation residuals), and
* distribution-free one-sided conformal upper widths combined across a route
  with a Bonferroni correction.

Natural logarithms throughout: the buffer comes from inverting an
exp(-u^2 / (2 sum sigma^2)) tail bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .model import InvalidInputError


@dataclass(frozen=True)
class DurationEstimate:
    """Planning-time view of one activity: point forecast and proxy variance
    in minutes / minutes^2, plus an optional one-sided conformal width."""

    mu: float
    sigma_sq: float = 0.0
    conformal_width: float | None = None


@dataclass
class VarianceTable:
    """Per-class proxy variances (minutes^2) with a pooled fallback.

    Classes never seen during estimation resolve to ``fallback_variance``
    (the pooled mean squared residual), so new activity classes degrade
    gracefully instead of failing.
    """

    per_class: dict[str, float] = field(default_factory=dict)
    sample_counts: dict[str, int] = field(default_factory=dict)
    fallback_variance: float = 0.0

    def variance_for(self, type_code: str) -> float:
        if self.sample_counts.get(type_code, 0) > 0:
            return self.per_class[type_code]
        return self.fallback_variance

    def to_dict(self) -> dict:
        return {
            "per_class": dict(sorted(self.per_class.items())),
            "sample_counts": dict(sorted(self.sample_counts.items())),
            "fallback_variance": self.fallback_variance,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "VarianceTable":
        return cls(
            per_class={str(k): float(v) for k, v in d["per_class"].items()},
            sample_counts={str(k): int(v) for k, v in d["sample_counts"].items()},
            fallback_variance=float(d["fallback_variance"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "VarianceTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_variances(
    records: Iterable[tuple[str, float, float]],
) -> VarianceTable:
    """Mean squared residual per class from (class, y, y_hat) records.

    The fallback is the pooled mean squared residual over all records.
    """
    sq_sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    total_sq = 0.0
    total_n = 0
    for type_code, y, mu_hat in records:
        r2 = (float(y) - float(mu_hat)) ** 2
        sq_sums[type_code] = sq_sums.get(type_code, 0.0) + r2
        counts[type_code] = counts.get(type_code, 0) + 1
        total_sq += r2
        total_n += 1
    if total_n == 0:
        raise InvalidInputError("estimate_variances: no records")
    per_class = {c: sq_sums[c] / counts[c] for c in sq_sums}
    return VarianceTable(
        per_class=per_class,
        sample_counts=counts,
        fallback_variance=total_sq / total_n,
    )


def route_buffer(sigma_sqs: Sequence[float], alpha: float) -> float:
    """Risk buffer sqrt(2 * sum(sigma^2) * ln(1/alpha)) in minutes.

    Adding this many minutes of slack bounds the probability that the sum of
    independent sub-Gaussian residuals with the given proxy variances exceeds
    the reserve by alpha. Empty routes and alpha = 1 both give 0.
    """
    if not 0.0 < alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1], got {alpha}")
    total = 0.0
    for s in sigma_sqs:
        if s < 0:
            raise InvalidInputError("variances must be nonnegative")
        total += float(s)
    return math.sqrt(2.0 * total * math.log(1.0 / alpha))


@dataclass(frozen=True)
class ChanceCheck:
    feasible: bool
    slack: float
    buffer: float


def check_route_chance_feasible(
    mu_sum: float,
    travel_sum: float,
    sigma_sqs: Sequence[float],
    alpha: float,
    shift_length: float,
) -> ChanceCheck:
    """Sufficient chance-feasibility test for one route.

    Feasible iff predicted service + travel + risk buffer fits the shift:
    mu_sum + travel_sum + buffer <= H. ``slack`` is H minus the left-hand
    side and may be negative.
    """
    buf = route_buffer(sigma_sqs, alpha)
    lhs = float(mu_sum) + float(travel_sum) + buf
    slack = float(shift_length) - lhs
    return ChanceCheck(feasible=slack >= 0.0, slack=slack, buffer=buf)


class ConformalTable:
    """Per-class one-sided conformal calibration.

    Stores sorted nonconformity scores (y - y_hat) per class plus a pooled
    store used as fallback for uncalibrated classes. ``upper_width`` follows
    the split-conformal convention: the ceil((n+1)(1-level))-th smallest
    score, clamped to the maximum when the rank exceeds n.
    """

    def __init__(self, scores_by_class: Mapping[str, Sequence[float]]) -> None:
        self._scores = {
            c: np.sort(np.asarray(s, dtype=float))
            for c, s in scores_by_class.items()
            if len(s) > 0
        }
        pooled = [x for s in self._scores.values() for x in s]
        if not pooled:
            raise InvalidInputError("conformal calibration requires at least one record")
        self._pooled = np.sort(np.asarray(pooled, dtype=float))

    def classes(self) -> list[str]:
        return sorted(self._scores)

    def _store(self, type_code: str | None) -> np.ndarray:
        if type_code is not None and type_code in self._scores:
            return self._scores[type_code]
        return self._pooled

    def upper_width(self, type_code: str | None, level: float) -> float:
        """Upper width U at miscoverage ``level`` for one activity class."""
        if not 0.0 <= level < 1.0:
            raise InvalidInputError(f"miscoverage level must lie in [0, 1), got {level}")
        scores = self._store(type_code)
        n = len(scores)
        rank = math.ceil((n + 1) * (1.0 - level))
        rank = min(rank, n)
        return float(scores[rank - 1])

    def to_dict(self) -> dict:
        return {"scores_by_class": {c: self._scores[c].tolist() for c in sorted(self._scores)}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConformalTable":
        return cls(d["scores_by_class"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "ConformalTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def conformal_calibrate(
    records: Iterable[tuple[str, float, float]],
) -> ConformalTable:
    """Build a ConformalTable from (class, y, y_hat) calibration records."""
    scores: dict[str, list[float]] = {}
    for type_code, y, mu_hat in records:
        scores.setdefault(type_code, []).append(float(y) - float(mu_hat))
    if not scores:
        raise InvalidInputError("conformal_calibrate: no records")
    return ConformalTable(scores)


def conformal_route_bound(
    table: ConformalTable, route_classes: Sequence[str], alpha: float
) -> float:
    """Bonferroni route reserve: sum of per-stop widths at level alpha/|R|.

    Splitting alpha across the route's stops makes the summed per-stop upper
    bounds cover the route total with probability at least 1 - alpha,
    distribution-free.
    """
    if not route_classes:
        raise InvalidInputError("conformal_route_bound: empty route")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    per_stop = alpha / len(route_classes)
    return float(sum(table.upper_width(c, per_stop) for c in route_classes))


def monte_carlo_violation_rate(
    mu_sum: float,
    travel_sum: float,
    shift_length: float,
    residual_sampler: Callable[[np.random.Generator, int], np.ndarray],
    trials: int,
    seed: int = 0,
) -> float:
    """Empirical probability that a route overruns its shift.

    ``residual_sampler(rng, n)`` must return n independent route residual
    sums (zero-mean). The draw is vectorised from a single generator seeded
    per call, so the result is a pure function of the arguments.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sums = np.asarray(residual_sampler(rng, trials), dtype=float)
    realized = float(mu_sum) + float(travel_sum) + sums
    return float(np.mean(realized > float(shift_length)))


def gaussian_route_sampler(
    sigma_sqs: Sequence[float],
) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Sampler of route residual sums with independent N(0, sigma_i^2) stops."""
    sigmas = np.sqrt(np.asarray(sigma_sqs, dtype=float))

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        if sigmas.size == 0:
            return np.zeros(n)
        return rng.normal(0.0, 1.0, size=(n, sigmas.size)) @ sigmas

    return sample
