"""Calibrated synthetic intervention data.

The confidential operational dataset is replaced by a generator calibrated to
the published per-class duration statistics (count, mean, std, min, max for
16 activity classes; the two classes with fewer than 20 historical examples
are excluded). Durations are lognormal conditioned on operational context:

    ln X = mu_c + sum_f s_{c,f} * curve_f(context_f) + s_res * N(0, 1)

clipped to the class [min, max] range. The context factors (hour of day,
day of week, month, accessibility, meter class, protocol, client) have
mean-zero unit-variance curves under the corpus reference distribution, so
class-conditional corpus means reproduce the table means; the per-class
effect scale is chosen so the marginal spread reproduces the table std while
leaving a small conditional (residual) spread that a forecaster can actually
reach. Locations mu_c are fitted clip-aware (analytic clipped-lognormal means
integrated over the discrete effect distribution), so post-clip means match
the table, not just pre-clip moments.

The meter-replacement class Z is bimodal: a latent short/long mode with the
long mode a tight lognormal around 60 minutes. Mode odds depend on equipment
protocol (full-replacement protocol almost always long) and meter class, so
the mode is largely predictable from features while Z keeps the highest
residual variance of all classes.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from . import seeds
from .model import Activity, Instance, InvalidInputError, Vehicle

# code -> (label, count, mean, std, min, max), minutes
ACTIVITY_STATS: dict[str, tuple[str, int, float, float, float, float]] = {
    "A": ("Work quotation", 10319, 55.79, 21.71, 10, 119),
    "C": ("Work execution", 5112, 32.55, 28.04, 10, 119),
    "E": ("Supply activation", 255288, 24.57, 10.41, 10, 119),
    "F": ("Supply deactivation", 131657, 19.01, 9.12, 10, 118),
    "H": ("Metrological verification", 1550, 45.59, 20.36, 10, 119),
    "I": ("Pressure verification", 4, 80.00, 17.94, 54, 95),
    "J": ("Meter reading", 1676, 45.53, 22.34, 10, 119),
    "L": ("Reading request", 1261, 18.42, 10.38, 10, 106),
    "M": ("Closure for arrears", 38744, 20.75, 10.96, 10, 119),
    "N": ("Meter closure", 137, 24.39, 15.08, 10, 98),
    "O": ("Meter reading", 50487, 18.33, 12.64, 10, 118),
    "Q": ("Removal of sensors", 1605, 25.09, 13.72, 10, 114),
    "R": ("Meter removal", 6159, 23.40, 16.63, 10, 119),
    "S": ("Safety shutdown", 360, 26.85, 19.82, 10, 105),
    "T": ("Data provision", 15972, 23.46, 9.33, 10, 119),
    "W": ("Administrative termination", 11, 25.36, 12.73, 14, 60),
    "X": ("Interruption for arrears", 705, 31.56, 20.63, 10, 117),
    "Z": ("Meter replacement", 233143, 26.73, 19.94, 10, 119),
}

MIN_CLASS_COUNT = 20  # classes below this are not generated or trained on
Z_CLASS = "Z"

HOURS = tuple(range(8, 18))

# context factor levels and corpus reference probabilities
FACTOR_LEVELS: dict[str, tuple[tuple[str, float], ...]] = {
    "accessibility": (("easy", 0.5), ("medium", 0.3), ("hard", 0.2)),
    "meter_class": (("residential", 0.7), ("commercial", 0.3)),
    "protocol": (("P1", 0.40), ("P2", 0.30), ("P3", 0.15), ("P4", 0.15)),
    "client_source": tuple((f"C{i}", 0.2) for i in range(1, 6)),
}

# raw (un-normalised) effect shapes per factor level; normalised to mean 0 /
# variance 1 under the reference probabilities at module load
_RAW_SHAPES: dict[str, tuple[float, ...]] = {
    "accessibility": (0.0, 1.0, 2.5),
    "meter_class": (0.0, 1.0),
    "protocol": (0.0, 0.6, 1.2, 2.0),
    "client_source": (0.0, 0.5, 1.0, 1.5, 2.0),
}

# share of each class's effect variance carried by each factor
EFFECT_SHARES: dict[str, float] = {
    "hour": 0.45,
    "accessibility": 0.15,
    "meter_class": 0.10,
    "protocol": 0.10,
    "dow": 0.10,
    "month": 0.05,
    "client_source": 0.05,
}

# Z latent long-mode probability by (protocol == P4, meter class): the
# full-replacement protocol almost always runs long, other protocols
# rarely do, so the mode is close to feature-determined
Z_P_LONG = {"P4": 0.95, "commercial": 0.02, "residential": 0.005}
Z_LONG_MEDIAN = 60.0
Z_LONG_SIGMA = 0.12

# Classes with at least this many historical records keep the full residual
# noise; the rarer, procedure-standardised operations are almost fully
# context-determined (their spread lives in the effect terms instead), which
# also keeps frequency-weighted training from chasing unlearnable noise.
FREQUENT_COUNT = 15000
RARE_RESIDUAL_SIGMA = 0.04


def _normalize(values: Sequence[float], probs: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    mean = float(np.dot(p, v))
    var = float(np.dot(p, (v - mean) ** 2))
    return (v - mean) / math.sqrt(var)


def _factor_curves() -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """(normalised values, reference probs) per factor."""
    curves: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    # hour: mornings short, afternoons long
    hv = np.asarray([-1.0 if h <= 12 else 1.0 for h in HOURS])
    hp = np.full(len(HOURS), 1.0 / len(HOURS))
    curves["hour"] = (_normalize(hv, hp), hp)
    # day of week: weekends slower
    dv = np.asarray([0.0] * 5 + [1.0, 1.0])
    dp = np.full(7, 1.0 / 7.0)
    curves["dow"] = (_normalize(dv, dp), dp)
    # month: mild seasonality
    mv = np.cos(2.0 * math.pi * (np.arange(12)) / 12.0)
    mp = np.full(12, 1.0 / 12.0)
    curves["month"] = (_normalize(mv, mp), mp)
    for name, levels in FACTOR_LEVELS.items():
        probs = np.asarray([p for _, p in levels])
        curves[name] = (_normalize(_RAW_SHAPES[name], probs), probs)
    return curves


FACTOR_CURVES = _factor_curves()


@dataclass(frozen=True)
class ActivityClassSpec:
    """Sampling recipe for one activity class."""

    code: str
    label: str
    mix_weight: float
    mean_target: float
    std_target: float
    clip_lo: float
    clip_hi: float
    residual_sigma: float
    effect_scales: Mapping[str, float]  # factor -> ln-space scale
    location: float  # fitted ln-space location (short mode for Z)
    bimodal: bool = False
    long_median: float = Z_LONG_MEDIAN
    long_sigma: float = Z_LONG_SIGMA
    p_long_marginal: float = 0.0

    def to_dict(self) -> dict:
        d = {
            "code": self.code,
            "label": self.label,
            "mix_weight": self.mix_weight,
            "mean_target": self.mean_target,
            "std_target": self.std_target,
            "clip": [self.clip_lo, self.clip_hi],
            "residual_sigma": self.residual_sigma,
            "effect_scales": dict(sorted(self.effect_scales.items())),
            "location": self.location,
        }
        if self.bimodal:
            d["bimodal"] = {
                "long_median": self.long_median,
                "long_sigma": self.long_sigma,
                "p_long_marginal": self.p_long_marginal,
                "p_long": dict(Z_P_LONG),
            }
        return d


def _clipped_lognormal_mean(
    mu: np.ndarray | float, sigma: float, lo: float, hi: float
) -> np.ndarray:
    """E[clip(X, lo, hi)] for X ~ Lognormal(mu, sigma), vectorised over mu."""
    mu = np.asarray(mu, dtype=float)
    z_lo = (math.log(lo) - mu) / sigma
    z_hi = (math.log(hi) - mu) / sigma
    interior = np.exp(mu + 0.5 * sigma**2) * (ndtr(z_hi - sigma) - ndtr(z_lo - sigma))
    return lo * ndtr(z_lo) + interior + hi * (1.0 - ndtr(z_hi))


def _effect_distribution(
    scales: Mapping[str, float], grid: float = 0.004
) -> tuple[np.ndarray, np.ndarray]:
    """Discrete distribution of the summed ln-space effect u.

    Exact convolution of the independent factor distributions, consolidated
    onto a small grid after each step to keep the support compact.
    """
    values = np.zeros(1)
    probs = np.ones(1)
    for name in sorted(scales):
        s = scales[name]
        if s == 0.0:
            continue
        fv, fp = FACTOR_CURVES[name]
        values = np.add.outer(values, s * fv).ravel()
        probs = np.multiply.outer(probs, fp).ravel()
        keys = np.round(values / grid).astype(np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        probs = np.bincount(inv, weights=probs)
        values = uniq * grid
    return values, probs


def _fit_location(
    target_mean: float,
    sigma_res: float,
    scales: Mapping[str, float],
    lo: float,
    hi: float,
    fixed_term: float = 0.0,
    fixed_weight: float = 0.0,
) -> float:
    """Solve for mu so the post-clip, effect-marginalised mean hits target.

    ``fixed_term``/``fixed_weight`` fold in a constant mixture component
    (the Z long mode) that does not depend on mu.
    """
    u_vals, u_probs = _effect_distribution(scales)
    free_weight = 1.0 - fixed_weight

    def mean_at(mu: float) -> float:
        comp = float(np.dot(u_probs, _clipped_lognormal_mean(mu + u_vals, sigma_res, lo, hi)))
        return free_weight * comp + fixed_weight * fixed_term

    lo_mu, hi_mu = math.log(lo) - 3.0, math.log(hi) + 1.0
    for _ in range(80):
        mid = 0.5 * (lo_mu + hi_mu)
        if mean_at(mid) < target_mean:
            lo_mu = mid
        else:
            hi_mu = mid
    return 0.5 * (lo_mu + hi_mu)


def _effect_scales(code: str, s_eff_total: float) -> dict[str, float]:
    shares = dict(EFFECT_SHARES)
    if code == Z_CLASS:
        # protocol drives the Z mode instead of a smooth effect
        shares.pop("protocol")
        total = sum(shares.values())
        shares = {k: v / total for k, v in shares.items()}
    scales = {k: math.sqrt(share) * s_eff_total for k, share in shares.items()}
    if code == Z_CLASS:
        # replacements run long in the morning, opposite to routine work:
        # the compositional two-step job dominates early slots
        scales["hour"] = -scales["hour"]
    return scales


def _z_marginal_p_long() -> float:
    p4 = dict(FACTOR_LEVELS["protocol"])["P4"]
    meter = dict(FACTOR_LEVELS["meter_class"])
    rest = (
        meter["commercial"] * Z_P_LONG["commercial"]
        + meter["residential"] * Z_P_LONG["residential"]
    )
    return p4 * Z_P_LONG["P4"] + (1.0 - p4) * rest


@lru_cache(maxsize=4)
def default_class_specs(residual_sigma: float = 0.18) -> dict[str, ActivityClassSpec]:
    """The 16 generated activity classes, calibrated to the stats table."""
    included = {
        c: row for c, row in ACTIVITY_STATS.items() if row[1] >= MIN_CLASS_COUNT
    }
    total = sum(row[1] for row in included.values())
    specs: dict[str, ActivityClassSpec] = {}
    for code in sorted(included):
        label, count, mean, std, lo, hi = included[code]
        s_total_sq = math.log(1.0 + (std / mean) ** 2)
        class_sigma = residual_sigma if count >= FREQUENT_COUNT else RARE_RESIDUAL_SIGMA
        if code == Z_CLASS:
            p_long = _z_marginal_p_long()
            long_mean = Z_LONG_MEDIAN * math.exp(0.5 * Z_LONG_SIGMA**2)
            long_e2 = Z_LONG_MEDIAN**2 * math.exp(2.0 * Z_LONG_SIGMA**2)
            w1 = 1.0 - p_long
            short_mean = (mean - p_long * long_mean) / w1
            short_e2 = (mean**2 + std**2 - p_long * long_e2) / w1
            short_var = short_e2 - short_mean**2
            s1_sq = math.log(1.0 + short_var / short_mean**2)
            s_res = min(class_sigma, 0.8 * math.sqrt(s1_sq))
            s_eff = math.sqrt(max(s1_sq - s_res**2, 0.0))
            scales = _effect_scales(code, s_eff)
            long_clip_mean = float(
                _clipped_lognormal_mean(math.log(Z_LONG_MEDIAN), Z_LONG_SIGMA, lo, hi)
            )
            location = _fit_location(
                mean, s_res, scales, lo, hi,
                fixed_term=long_clip_mean, fixed_weight=p_long,
            )
            specs[code] = ActivityClassSpec(
                code=code, label=label, mix_weight=count / total,
                mean_target=mean, std_target=std, clip_lo=lo, clip_hi=hi,
                residual_sigma=s_res, effect_scales=scales, location=location,
                bimodal=True, p_long_marginal=p_long,
            )
        else:
            s_res = min(class_sigma, 0.8 * math.sqrt(s_total_sq))
            s_eff = math.sqrt(max(s_total_sq - s_res**2, 0.0))
            scales = _effect_scales(code, s_eff)
            location = _fit_location(mean, s_res, scales, lo, hi)
            specs[code] = ActivityClassSpec(
                code=code, label=label, mix_weight=count / total,
                mean_target=mean, std_target=std, clip_lo=lo, clip_hi=hi,
                residual_sigma=s_res, effect_scales=scales, location=location,
            )
    return specs


def default_duration_table(
    specs: Mapping[str, ActivityClassSpec] | None = None,
) -> dict[str, float]:
    """Static per-class duration estimates (historical class means)."""
    specs = specs or default_class_specs()
    return {c: s.mean_target for c, s in specs.items()}


def class_std_table(
    specs: Mapping[str, ActivityClassSpec] | None = None,
) -> dict[str, float]:
    specs = specs or default_class_specs()
    return {c: s.std_target for c, s in specs.items()}


def _context_effect(spec: ActivityClassSpec, context: Mapping[str, object]) -> float:
    u = 0.0
    for name, scale in spec.effect_scales.items():
        values, _ = FACTOR_CURVES[name]
        if name == "hour":
            idx = HOURS.index(int(context["hour"]))  # type: ignore[arg-type]
        elif name == "dow":
            idx = int(context["dow"])  # type: ignore[arg-type]
        elif name == "month":
            idx = int(context["month"]) - 1  # type: ignore[arg-type]
        else:
            idx = [lvl for lvl, _ in FACTOR_LEVELS[name]].index(str(context[name]))
        u += scale * float(values[idx])
    return u


def _z_p_long(context: Mapping[str, object]) -> float:
    if str(context["protocol"]) == "P4":
        return Z_P_LONG["P4"]
    return Z_P_LONG[str(context["meter_class"])]


def sample_context(rng: np.random.Generator, hour_weights: Sequence[float] | None = None,
                   date: _dt.date | None = None) -> dict[str, object]:
    """Draw the categorical context for one record."""
    ctx: dict[str, object] = {}
    hw = np.asarray(hour_weights if hour_weights is not None
                    else FACTOR_CURVES["hour"][1], dtype=float)
    ctx["hour"] = int(HOURS[rng.choice(len(HOURS), p=hw / hw.sum())])
    if date is None:
        ctx["dow"] = int(rng.integers(0, 7))
        ctx["month"] = int(rng.integers(1, 13))
    else:
        ctx["dow"] = date.weekday()
        ctx["month"] = date.month
    for name, levels in FACTOR_LEVELS.items():
        probs = np.asarray([p for _, p in levels])
        ctx[name] = levels[int(rng.choice(len(levels), p=probs))][0]
    # reading difficulty is a pure noise field (no duration effect)
    ctx["reading_difficulty"] = ("low", "medium", "high")[int(rng.integers(0, 3))]
    return ctx


def sample_duration(
    spec: ActivityClassSpec,
    rng: np.random.Generator,
    context: Mapping[str, object] | None = None,
) -> float:
    """One duration draw in minutes, clipped to the class range.

    Without a context the latent context is drawn from the corpus reference
    distribution, so repeated calls reproduce the class marginal law.
    """
    ctx = context if context is not None else sample_context(rng)
    if spec.bimodal:
        if rng.random() < _z_p_long(ctx):
            x = math.exp(math.log(spec.long_median) + spec.long_sigma * rng.standard_normal())
            return float(min(max(x, spec.clip_lo), spec.clip_hi))
    u = _context_effect(spec, ctx)
    x = math.exp(spec.location + u + spec.residual_sigma * rng.standard_normal())
    return float(min(max(x, spec.clip_lo), spec.clip_hi))


def sample_durations(
    spec: ActivityClassSpec, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorised marginal draws: latent contexts from the reference mix."""
    u = np.zeros(n)
    level_idx: dict[str, np.ndarray] = {}
    for name in sorted(spec.effect_scales):
        values, probs = FACTOR_CURVES[name]
        idx = rng.choice(len(values), size=n, p=probs)
        level_idx[name] = idx
        u += spec.effect_scales[name] * values[idx]
    x = np.exp(spec.location + u + spec.residual_sigma * rng.standard_normal(n))
    if spec.bimodal:
        # mode odds follow protocol and meter class, drawn independently of
        # the smooth effects (protocol carries no smooth effect for Z)
        proto_vals, proto_probs = FACTOR_CURVES["protocol"]
        proto = rng.choice(len(proto_vals), size=n, p=proto_probs)
        meter_idx = level_idx.get("meter_class")
        if meter_idx is None:
            _, meter_probs = FACTOR_CURVES["meter_class"]
            meter_idx = rng.choice(2, size=n, p=meter_probs)
        p4 = dict(FACTOR_LEVELS["protocol"])
        is_p4 = proto == list(p4).index("P4")
        meters = np.asarray([lvl for lvl, _ in FACTOR_LEVELS["meter_class"]])
        p_long = np.where(
            is_p4, Z_P_LONG["P4"],
            np.where(meters[meter_idx] == "commercial",
                     Z_P_LONG["commercial"], Z_P_LONG["residential"]),
        )
        long_mask = rng.random(n) < p_long
        x_long = np.exp(
            math.log(spec.long_median)
            + spec.long_sigma * rng.standard_normal(int(long_mask.sum()))
        )
        x[long_mask] = x_long
    return np.clip(x, spec.clip_lo, spec.clip_hi)


@dataclass(frozen=True)
class Municipality:
    name: str
    altitude: float
    population: float
    surface_area: float
    urbanization: int


def sample_municipalities(n: int, rng: np.random.Generator) -> list[Municipality]:
    out = []
    for i in range(n):
        out.append(
            Municipality(
                name=f"M{i:02d}",
                altitude=float(np.round(rng.uniform(20.0, 800.0), 1)),
                population=float(int(math.exp(rng.uniform(math.log(2e3), math.log(2e5))))),
                surface_area=float(np.round(rng.uniform(5.0, 150.0), 2)),
                urbanization=int(rng.choice([1, 2, 3], p=[0.3, 0.4, 0.3])),
            )
        )
    return out


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for corpus and instance generation. ``seed`` is mandatory."""

    seed: int
    n_days: int = 364
    per_day_mean: float = 275.0
    per_day_spread: float = 25.0
    start_date: str = "2024-01-01"
    n_municipalities: int = 12
    # None = corpus reference mix (uniform); operational days skew to mornings
    hour_weights: tuple[float, ...] | None = None
    residual_sigma: float = 0.18
    map_extent_km: float = 30.0
    speed_km_per_min: float = 0.5
    window_width: float = 240.0
    day_length: float = 480.0

    def __post_init__(self) -> None:
        if self.n_days < 1 or self.per_day_mean <= 0:
            raise InvalidInputError("n_days and per_day_mean must be positive")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_days": self.n_days,
            "per_day_mean": self.per_day_mean,
            "per_day_spread": self.per_day_spread,
            "start_date": self.start_date,
            "n_municipalities": self.n_municipalities,
            "hour_weights": list(self.hour_weights) if self.hour_weights else None,
            "residual_sigma": self.residual_sigma,
            "map_extent_km": self.map_extent_km,
            "speed_km_per_min": self.speed_km_per_min,
            "window_width": self.window_width,
            "day_length": self.day_length,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorConfig":
        kwargs = dict(d)
        if kwargs.get("hour_weights") is not None:
            kwargs["hour_weights"] = tuple(kwargs["hour_weights"])
        return cls(**kwargs)


# operational planning dispatches all interventions into the morning slots
# (overnight route generation fills the day front-to-back), while the
# historical corpus spans the whole service window uniformly
OPERATIONAL_HOUR_WEIGHTS: tuple[float, ...] = (
    0.2, 0.2, 0.2, 0.2, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0
)

CORPUS_COLUMNS = (
    "date", "class", "hour", "dow", "month", "municipality",
    "altitude", "population", "surface_area", "urbanization",
    "meter_class", "accessibility", "reading_difficulty", "protocol",
    "client_source", "duration",
)


def generate_day_records(
    config: GeneratorConfig,
    specs: Mapping[str, ActivityClassSpec],
    date: _dt.date,
    rng: np.random.Generator,
    municipalities: Sequence[Municipality],
) -> list[dict[str, object]]:
    """All intervention records for one calendar day."""
    n = max(1, int(round(rng.normal(config.per_day_mean, config.per_day_spread))))
    codes = sorted(specs)
    mix = np.asarray([specs[c].mix_weight for c in codes])
    mix = mix / mix.sum()
    rows: list[dict[str, object]] = []
    for _ in range(n):
        code = codes[int(rng.choice(len(codes), p=mix))]
        spec = specs[code]
        ctx = sample_context(rng, hour_weights=config.hour_weights, date=date)
        muni = municipalities[int(rng.integers(0, len(municipalities)))]
        duration = sample_duration(spec, rng, context=ctx)
        rows.append(
            {
                "date": date.isoformat(),
                "class": code,
                "hour": ctx["hour"],
                "dow": ctx["dow"],
                "month": ctx["month"],
                "municipality": muni.name,
                "altitude": muni.altitude,
                "population": muni.population,
                "surface_area": muni.surface_area,
                "urbanization": muni.urbanization,
                "meter_class": ctx["meter_class"],
                "accessibility": ctx["accessibility"],
                "reading_difficulty": ctx["reading_difficulty"],
                "protocol": ctx["protocol"],
                "client_source": ctx["client_source"],
                "duration": round(duration, 6),
            }
        )
    return rows


def generate_corpus(
    config: GeneratorConfig,
    specs: Mapping[str, ActivityClassSpec] | None = None,
) -> list[dict[str, object]]:
    """The full training corpus: per-day records over the configured span.

    Days own derived seed streams, so generation is a pure function of
    (config, seed) and is safely parallelisable by day.
    """
    specs = specs or default_class_specs(config.residual_sigma)
    start = _dt.date.fromisoformat(config.start_date)
    municipalities = sample_municipalities(
        config.n_municipalities, seeds.rng(config.seed, "gen", "geo")
    )
    rows: list[dict[str, object]] = []
    for d in range(config.n_days):
        date = start + _dt.timedelta(days=d)
        day_rng = seeds.rng(config.seed, "gen", "day", d)
        rows.extend(generate_day_records(config, specs, date, day_rng, municipalities))
    return rows


def write_corpus_csv(path: str | Path, rows: Iterable[Mapping[str, object]]) -> None:
    lines = [",".join(CORPUS_COLUMNS)]
    for r in rows:
        lines.append(",".join(_format_cell(r[c]) for c in CORPUS_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def _format_cell(v: object) -> str:
    if isinstance(v, float):
        return format(v, ".6f")
    return str(v)


def load_corpus_csv(path: str | Path) -> list[dict[str, object]]:
    text = Path(path).read_text().strip().split("\n")
    header = text[0].split(",")
    if tuple(header) != CORPUS_COLUMNS:
        raise InvalidInputError(f"unexpected corpus header: {header}")
    floats = {"altitude", "population", "surface_area", "duration"}
    ints = {"hour", "dow", "month", "urbanization"}
    rows = []
    for line in text[1:]:
        cells = line.split(",")
        row: dict[str, object] = {}
        for name, cell in zip(header, cells):
            if name in floats:
                row[name] = float(cell)
            elif name in ints:
                row[name] = int(cell)
            else:
                row[name] = cell
        rows.append(row)
    return rows


def smooth_peaks(
    histogram: Sequence[float],
    peak_threshold: float = 2.0,
    spread_radius: int = 2,
    fraction: float = 0.5,
) -> np.ndarray:
    """Redistribute reporting spikes to neighbouring bins, conserving mass.

    A bin is a peak when it exceeds ``peak_threshold`` times the local median
    (window of +-3*radius). For each peak, ``fraction`` of its excess above
    the local median is split evenly over the non-peak bins within
    +-``spread_radius``; bins already above their own detection threshold
    never receive redistributed mass. Detection uses the original histogram
    throughout, so smoothing one peak cannot create or feed another.
    """
    hist = np.asarray(histogram, dtype=float)
    if hist.size == 0:
        raise InvalidInputError("smooth_peaks: empty histogram")
    if (hist < 0).any():
        raise InvalidInputError("smooth_peaks: negative bin mass")
    if spread_radius < 1:
        raise InvalidInputError("smooth_peaks: spread_radius must be >= 1")
    n = hist.size
    window = max(3 * spread_radius, 3)
    medians = np.empty(n)
    for i in range(n):
        lo, hi = max(0, i - window), min(n, i + window + 1)
        medians[i] = np.median(hist[lo:hi])
    thresholds = peak_threshold * medians
    is_peak = hist > thresholds
    out = hist.copy()
    for i in range(n):
        if not is_peak[i]:
            continue
        outflow = fraction * (hist[i] - medians[i])
        neighbours = [j for j in range(i - spread_radius, i + spread_radius + 1)
                      if 0 <= j < n and j != i and not is_peak[j]]
        if not neighbours:
            continue
        share = outflow / len(neighbours)
        given = 0.0
        for j in neighbours:
            out[j] += share
            given += share
        out[i] -= given
    return out


@dataclass(frozen=True)
class FleetSpec:
    n_vehicles: int
    shift_length: float = 480.0
    risk_level: float = 0.05


def generate_instance(
    day_records: Sequence[Mapping[str, object]],
    fleet: FleetSpec,
    rng: np.random.Generator,
    config: GeneratorConfig,
) -> Instance:
    """Build a routing instance for one day's records.

    Locations are planar points in the configured map extent with the depot
    at the centre; travel time is Euclidean distance over speed (symmetric,
    zero diagonal, triangle inequality by construction) and travel cost is
    the distance itself. Time windows are sampled inside the working day.
    All times are minutes from the shift start.
    """
    if not day_records:
        raise InvalidInputError("generate_instance: empty day")
    n = len(day_records)
    extent = config.map_extent_km
    pts = np.empty((n + 1, 2))
    pts[0] = (extent / 2.0, extent / 2.0)
    pts[1:] = rng.uniform(0.0, extent, size=(n, 2))
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    travel_time = dist / config.speed_km_per_min
    travel_cost = dist.copy()
    activities = []
    for i, rec in enumerate(day_records):
        width = config.window_width
        open_t = float(rng.uniform(0.0, max(config.day_length - width, 1.0)))
        feats = {k: v for k, v in rec.items() if k != "duration"}
        activities.append(
            Activity(
                id=i,
                type_code=str(rec["class"]),
                location=i + 1,
                window_open=round(open_t, 3),
                window_close=round(open_t + width, 3),
                features=feats,
                true_duration=float(rec["duration"]),  # type: ignore[arg-type]
            )
        )
    vehicles = [
        Vehicle(id=k, shift_length=fleet.shift_length, risk_level=fleet.risk_level)
        for k in range(fleet.n_vehicles)
    ]
    return Instance(
        activities=activities,
        vehicles=vehicles,
        travel_time=travel_time,
        travel_cost=travel_cost,
        tardiness_weight=1.0,
    )


def save_class_specs(path: str | Path, specs: Mapping[str, ActivityClassSpec]) -> None:
    Path(path).write_text(
        json.dumps({c: s.to_dict() for c, s in sorted(specs.items())},
                   sort_keys=True, indent=1)
    )
