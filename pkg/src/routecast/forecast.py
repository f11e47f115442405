"""Duration forecasting models.

Four architectures over the same boosting engine:

* ``standard``       one ensemble, unit weights
* ``weighted``       one ensemble, inverse-frequency class weights
* ``dual``           two ensembles split on the meter-replacement class (Z),
                     routed by activity class at prediction time
* ``dual_weighted``  the dual split where each component additionally applies
                     inverse-frequency weighting within its own partition
                     (by equipment subtype on the Z side, by activity class
                     on the other side)

A fitted model carries its feature encoder and a per-class residual variance
table so a single artifact serves both prediction and risk buffering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import seeds
from .features import FEATURE_NAMES, FeatureEncoder
from .gbt import Ensemble, GbtParams, fit_gbt, gain_importance
from .model import InvalidInputError
from .risk import VarianceTable, estimate_variances

VARIANTS = ("standard", "weighted", "dual", "dual_weighted")
Z_CLASS = "Z"

MODEL_FORMAT = "routecast-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainingRecord:
    """One labelled example: raw feature fields, duration, class and day."""

    raw: Mapping[str, object]
    y: float
    type_code: str
    date: str


def records_from_rows(rows: Iterable[Mapping[str, object]]) -> list[TrainingRecord]:
    """Adapt corpus rows (dicts with 'duration', 'class', 'date') to records."""
    out = []
    for r in rows:
        out.append(
            TrainingRecord(
                raw=dict(r),
                y=float(r["duration"]),  # type: ignore[arg-type]
                type_code=str(r["class"]),
                date=str(r["date"]),
            )
        )
    return out


def class_weights(counts: Mapping[str, int]) -> dict[str, float]:
    """Inverse-frequency weights w_c = n / (n_c * |C|).

    They satisfy sum_c n_c * w_c = n, so total sample mass is preserved.
    """
    if not counts:
        raise InvalidInputError("class_weights: empty counts")
    n = sum(counts.values())
    k = len(counts)
    out = {}
    for c, n_c in counts.items():
        if n_c < 1:
            raise InvalidInputError(f"class_weights: class {c!r} has zero count")
        out[c] = n / (n_c * k)
    return out


def _weights_by_key(records: Sequence[TrainingRecord], key: str | None) -> np.ndarray:
    """Per-record inverse-frequency weights keyed by class or a raw field."""
    if key is None:
        return np.ones(len(records), dtype=float)
    if key == "class":
        labels = [r.type_code for r in records]
    else:
        labels = [str(r.raw.get(key, "")) for r in records]
    counts: dict[str, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    table = class_weights(counts)
    return np.asarray([table[lab] for lab in labels], dtype=float)


class ForecastModel:
    """A trained duration forecaster (one or two boosting ensembles)."""

    def __init__(
        self,
        variant: str,
        encoder: FeatureEncoder,
        ensembles: dict[str, Ensemble],
        params: GbtParams,
        variance_table: VarianceTable | None = None,
        z_class: str = Z_CLASS,
    ) -> None:
        if variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {variant!r}")
        self.variant = variant
        self.encoder = encoder
        self.ensembles = ensembles
        self.params = params
        self.variance_table = variance_table or VarianceTable()
        self.z_class = z_class

    def _ensemble_for(self, type_code: str) -> Ensemble:
        if self.variant in ("dual", "dual_weighted"):
            return self.ensembles["z" if type_code == self.z_class else "other"]
        return self.ensembles["main"]

    def predict(self, raw: Mapping[str, object], type_code: str | None = None) -> float:
        """Point forecast in minutes for one raw record."""
        code = type_code if type_code is not None else str(raw.get("class"))
        x = self.encoder.encode(raw)
        return float(self._ensemble_for(code).predict(x.reshape(1, -1))[0])

    def predict_records(self, records: Sequence[TrainingRecord]) -> np.ndarray:
        out = np.empty(len(records), dtype=float)
        if self.variant in ("dual", "dual_weighted"):
            is_z = np.asarray([r.type_code == self.z_class for r in records])
            X = self.encoder.encode_batch([r.raw for r in records])
            if is_z.any():
                out[is_z] = self.ensembles["z"].predict(X[is_z])
            if (~is_z).any():
                out[~is_z] = self.ensembles["other"].predict(X[~is_z])
        else:
            X = self.encoder.encode_batch([r.raw for r in records])
            out[:] = self.ensembles["main"].predict(X)
        return out

    def importances(self) -> dict[str, dict[str, float]]:
        """Gain importance per ensemble, keyed by feature name."""
        out: dict[str, dict[str, float]] = {}
        for name, ens in self.ensembles.items():
            scores = gain_importance(ens)
            out[name] = {FEATURE_NAMES[j]: float(scores[j]) for j in range(len(scores))}
        return out

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "variant": self.variant,
            "z_class": self.z_class,
            "hyperparams": self.params.to_dict(),
            "encoder": self.encoder.to_dict(),
            "ensembles": {k: v.to_dict() for k, v in sorted(self.ensembles.items())},
            "variance_table": self.variance_table.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ForecastModel":
        if d.get("format") != MODEL_FORMAT:
            raise InvalidInputError("not a forecast model file")
        if int(d.get("version", -1)) != MODEL_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model version {d.get('version')}")
        return cls(
            variant=str(d["variant"]),
            encoder=FeatureEncoder.from_dict(d["encoder"]),
            ensembles={k: Ensemble.from_dict(v) for k, v in d["ensembles"].items()},
            params=GbtParams.from_dict(d["hyperparams"]),
            variance_table=VarianceTable.from_dict(d["variance_table"]),
            z_class=str(d.get("z_class", Z_CLASS)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ForecastModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_architecture(
    variant: str,
    records: Sequence[TrainingRecord],
    params: GbtParams,
    encoder: FeatureEncoder | None = None,
    z_class: str = Z_CLASS,
) -> ForecastModel:
    """Train one of the four architectures on the given records."""
    if variant not in VARIANTS:
        raise InvalidInputError(f"unknown variant {variant!r}")
    if not records:
        raise InvalidInputError("fit_architecture: no records")
    if encoder is None:
        encoder = FeatureEncoder().fit([r.raw for r in records])
    y = np.asarray([r.y for r in records], dtype=float)
    X = encoder.encode_batch([r.raw for r in records])

    if variant in ("standard", "weighted"):
        w = _weights_by_key(records, "class" if variant == "weighted" else None)
        ensembles = {"main": fit_gbt(X, y, w, params)}
    else:
        is_z = np.asarray([r.type_code == z_class for r in records])
        if not is_z.any() or is_z.all():
            raise InvalidInputError(
                "dual architectures need at least one record on each side of "
                f"the {z_class!r} split"
            )
        z_records = [r for r, flag in zip(records, is_z) if flag]
        other_records = [r for r, flag in zip(records, is_z) if not flag]
        if variant == "dual_weighted":
            # within-partition weighting: equipment subtype on the Z side,
            # activity class on the other side
            wz = _weights_by_key(z_records, "meter_class")
            wo = _weights_by_key(other_records, "class")
        else:
            wz = _weights_by_key(z_records, None)
            wo = _weights_by_key(other_records, None)
        ensembles = {
            "z": fit_gbt(X[is_z], y[is_z], wz, params),
            "other": fit_gbt(X[~is_z], y[~is_z], wo, params),
        }
    return ForecastModel(variant, encoder, ensembles, params)


def attach_variances(
    model: ForecastModel, validation: Sequence[TrainingRecord]
) -> VarianceTable:
    """Estimate the per-class residual variance table on a validation split."""
    preds = model.predict_records(validation)
    table = estimate_variances(
        (r.type_code, r.y, float(p)) for r, p in zip(validation, preds)
    )
    model.variance_table = table
    return table


@dataclass(frozen=True)
class MetricsEntry:
    mae: float
    rmse: float
    mape: float
    n: int
    mape_excluded: int = 0


def evaluate_metrics(y: Sequence[float], y_hat: Sequence[float]) -> MetricsEntry:
    """MAE, RMSE and MAPE (in percent) for paired predictions.

    Pairs with y == 0 are excluded from MAPE and counted in
    ``mape_excluded`` (generated durations are >= 10 minutes, so this is a
    guard rather than an expected path).
    """
    y_arr = np.asarray(y, dtype=float)
    p_arr = np.asarray(y_hat, dtype=float)
    if y_arr.size == 0 or y_arr.shape != p_arr.shape:
        raise InvalidInputError("evaluate_metrics: need matching nonempty arrays")
    err = y_arr - p_arr
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    nz = y_arr != 0
    excluded = int(np.sum(~nz))
    if nz.any():
        mape = float(100.0 * np.mean(np.abs(err[nz] / y_arr[nz])))
    else:
        mape = float("nan")
    return MetricsEntry(mae=mae, rmse=rmse, mape=mape, n=int(y_arr.size),
                        mape_excluded=excluded)


def metrics_by_split(
    model: ForecastModel,
    splits: Mapping[str, Sequence[TrainingRecord]],
) -> dict[str, MetricsEntry]:
    out = {}
    for name, recs in splits.items():
        if not recs:
            continue
        preds = model.predict_records(recs)
        out[name] = evaluate_metrics([r.y for r in recs], preds)
    return out


def write_metrics_csv(
    path: str | Path,
    rows: Sequence[tuple[str, str, MetricsEntry]],
) -> None:
    """Write the model,set,mae,rmse,mape table."""
    lines = ["model,set,mae,rmse,mape"]
    for model_name, split_name, m in rows:
        lines.append(
            f"{model_name},{split_name},{m.mae:.6f},{m.rmse:.6f},{m.mape:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def split_by_date(
    records: Sequence[TrainingRecord],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[TrainingRecord], list[TrainingRecord], list[TrainingRecord]]:
    """Assign whole calendar days to train/validation/test.

    Days are shuffled with a named seed stream and assigned greedily against
    the target record-count boundaries, so proportions are met up to one
    day's worth of records. Deterministic in (records-as-set, seed): the
    result does not depend on the incoming record order.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidInputError("ratios must sum to 1")
    by_date: dict[str, list[TrainingRecord]] = {}
    for r in records:
        by_date.setdefault(r.date, []).append(r)
    dates = sorted(by_date)
    if len(dates) < 3:
        raise InvalidInputError("split_by_date needs at least 3 distinct dates")
    order = [dates[i] for i in seeds.rng(seed, "date-split").permutation(len(dates))]
    n = len(records)
    cut_train = ratios[0] * n
    cut_val = (ratios[0] + ratios[1]) * n
    buckets: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
    cum = 0
    for d in order:
        if cum < cut_train:
            buckets["train"].append(d)
        elif cum < cut_val:
            buckets["validation"].append(d)
        else:
            buckets["test"].append(d)
        cum += len(by_date[d])
    # guarantee nonempty splits by stealing from the largest bucket
    for name in ("validation", "test"):
        if not buckets[name]:
            donor = max(buckets, key=lambda b: len(buckets[b]))
            buckets[name].append(buckets[donor].pop())
    out = []
    for name in ("train", "validation", "test"):
        recs: list[TrainingRecord] = []
        for d in sorted(buckets[name]):
            recs.extend(by_date[d])
        out.append(recs)
    return out[0], out[1], out[2]


DEFAULT_GRID = {
    "n_trees": (50, 100, 200),
    "max_depth": (3, 4, 6),
    "learning_rate": (0.05, 0.1, 0.3),
}


def grid_search(
    variant: str,
    train: Sequence[TrainingRecord],
    validation: Sequence[TrainingRecord],
    base_params: GbtParams,
    grid: Mapping[str, Sequence] = DEFAULT_GRID,
    encoder: FeatureEncoder | None = None,
) -> tuple[GbtParams, list[dict]]:
    """Deterministic full grid search selecting by validation MAE.

    Configurations are visited in sorted order and ties keep the first, so
    the selection is reproducible.
    """
    names = sorted(grid)
    combos: list[dict] = [{}]
    for name in names:
        combos = [dict(c, **{name: v}) for c in combos for v in grid[name]]
    results = []
    best: tuple[float, GbtParams] | None = None
    for combo in combos:
        params = GbtParams(**{**base_params.to_dict(), **combo})
        model = fit_architecture(variant, train, params, encoder=encoder)
        preds = model.predict_records(validation)
        mae = evaluate_metrics([r.y for r in validation], preds).mae
        results.append({**combo, "validation_mae": mae})
        if best is None or mae < best[0]:
            best = (mae, params)
    assert best is not None
    return best[1], results
