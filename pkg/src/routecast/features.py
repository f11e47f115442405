"""Feature engineering for duration forecasting.

Raw records (dicts as produced by the data generator / CSV corpus) are turned
into a fixed 31-dimensional numeric vector: cyclical encodings of the three
periodic time fields, municipality-level geography, ordinal codes for the six
categorical fields, and a documented set of derived interactions. Cyclical
pairs always satisfy sin^2 + cos^2 = 1.

The encoder is stateful: numeric medians (for imputation) and categorical
vocabularies are learned from the training split and serialised with the
model so inference applies identical transformations. Unknown categories map
to an explicit reserved code, never silently dropped.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import InvalidInputError

NUMERIC_FIELDS = ("hour", "dow", "month", "altitude", "population",
                  "surface_area", "urbanization")
CATEGORICAL_FIELDS = ("class", "meter_class", "accessibility",
                      "reading_difficulty", "protocol", "client_source")

FEATURE_NAMES: tuple[str, ...] = (
    # cyclical time encodings
    "hour_sin", "hour_cos",
    "dow_sin", "dow_cos",
    "month_sin", "month_cos",
    # municipality geography
    "altitude", "population", "surface_area", "urbanization", "density",
    # ordinal category codes
    "activity_code", "meter_code", "accessibility_code",
    "reading_difficulty_code", "protocol_code", "client_source_code",
    # derived interactions
    "hour_sin_dow_sin", "hour_sin_dow_cos", "hour_cos_dow_sin", "hour_cos_dow_cos",
    "hour_sin_month_sin", "hour_cos_month_cos",
    "log_population", "log_surface_area",
    "altitude_urbanization", "density_urbanization",
    "meter_activity", "meter_protocol", "meter_accessibility",
    "accessibility_reading",
)

N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 31

_PERIODS = {"hour": 24.0, "dow": 7.0, "month": 12.0}


def cyclical(value: float, period: float) -> tuple[float, float]:
    """(sin, cos) encoding of a periodic value."""
    angle = 2.0 * math.pi * float(value) / float(period)
    return math.sin(angle), math.cos(angle)


def _as_float(value: object) -> float:
    if value is None or value == "":
        return math.nan
    return float(value)  # type: ignore[arg-type]


class FeatureEncoder:
    """Maps raw records to the fixed 31-feature vector."""

    def __init__(
        self,
        medians: Mapping[str, float] | None = None,
        vocabularies: Mapping[str, Sequence[str]] | None = None,
    ) -> None:
        self.medians: dict[str, float] = dict(medians or {})
        self.vocabularies: dict[str, list[str]] = {
            k: list(v) for k, v in (vocabularies or {}).items()
        }

    @property
    def fitted(self) -> bool:
        return bool(self.medians) and bool(self.vocabularies)

    def fit(self, records: Iterable[Mapping[str, object]]) -> "FeatureEncoder":
        rows = list(records)
        if not rows:
            raise InvalidInputError("FeatureEncoder.fit: no records")
        for f in NUMERIC_FIELDS:
            vals = np.asarray(
                [v for v in (_as_float(r.get(f)) for r in rows) if not math.isnan(v)]
            )
            self.medians[f] = float(np.median(vals)) if vals.size else 0.0
        for f in CATEGORICAL_FIELDS:
            seen = sorted({str(r[f]) for r in rows if r.get(f) not in (None, "")})
            self.vocabularies[f] = seen
        return self

    def _numeric(self, record: Mapping[str, object], f: str) -> float:
        v = _as_float(record.get(f))
        if math.isnan(v):
            v = self.medians.get(f, 0.0)
        return v

    def _code(self, record: Mapping[str, object], f: str) -> float:
        vocab = self.vocabularies.get(f, [])
        raw = record.get(f)
        if raw in (None, ""):
            return float(len(vocab))  # reserved unknown code
        try:
            return float(vocab.index(str(raw)))
        except ValueError:
            return float(len(vocab))

    def encode(self, record: Mapping[str, object]) -> np.ndarray:
        if not self.fitted:
            raise InvalidInputError("FeatureEncoder must be fitted before encoding")
        hour = self._numeric(record, "hour")
        dow = self._numeric(record, "dow")
        month = self._numeric(record, "month")
        hs, hc = cyclical(hour, _PERIODS["hour"])
        ds, dc = cyclical(dow, _PERIODS["dow"])
        ms, mc = cyclical(month, _PERIODS["month"])
        altitude = self._numeric(record, "altitude")
        population = self._numeric(record, "population")
        surface = self._numeric(record, "surface_area")
        urban = self._numeric(record, "urbanization")
        density = population / surface if surface > 0 else 0.0
        act = self._code(record, "class")
        meter = self._code(record, "meter_class")
        access = self._code(record, "accessibility")
        reading = self._code(record, "reading_difficulty")
        protocol = self._code(record, "protocol")
        client = self._code(record, "client_source")
        return np.array(
            [
                hs, hc, ds, dc, ms, mc,
                altitude, population, surface, urban, density,
                act, meter, access, reading, protocol, client,
                hs * ds, hs * dc, hc * ds, hc * dc,
                hs * ms, hc * mc,
                math.log1p(max(population, 0.0)), math.log1p(max(surface, 0.0)),
                altitude * urban, density * urban,
                meter * act, meter * protocol, meter * access,
                access * reading,
            ],
            dtype=float,
        )

    def encode_batch(self, records: Sequence[Mapping[str, object]]) -> np.ndarray:
        out = np.empty((len(records), N_FEATURES), dtype=float)
        for i, r in enumerate(records):
            out[i] = self.encode(r)
        return out

    def to_dict(self) -> dict:
        return {
            "medians": dict(sorted(self.medians.items())),
            "vocabularies": {k: list(v) for k, v in sorted(self.vocabularies.items())},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureEncoder":
        return cls(medians=d["medians"], vocabularies=d["vocabularies"])


def encode_features(
    encoder: FeatureEncoder, record: Mapping[str, object]
) -> np.ndarray:
    """Encode one raw record with a fitted encoder."""
    return encoder.encode(record)
