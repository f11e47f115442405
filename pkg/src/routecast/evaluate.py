"""Strategy comparison harness: plan with estimated durations, execute with
realised ones, score the outcome.

Three duration strategies feed the solver:

* ``real``      the realised durations themselves (perfect information,
                zero variance) - the theoretical upper baseline
* ``default``   static per-class historical means, no uncertainty - the
                traditional dispatching practice
* ``forecast``  a trained model's point predictions with its per-class
                residual variance table driving risk buffers

For each day: resolve durations, solve, pick one plan from the Pareto set by
a fixed lexicographic rule (max served, then min overtime, travel,
tardiness), replay it against the true durations with stop order and
assignments frozen, and compute operational KPIs. Monthly numbers are plain
means of the daily ones. Every (day, strategy) cell owns a derived seed, so
results are independent of execution order and worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import seeds
from .forecast import ForecastModel
from .model import (
    Instance,
    InvalidInputError,
    ObjectiveVector,
    Plan,
    Route,
    evaluate_plan,
    propagate_schedule,
    route_end_time,
)
from .risk import DurationEstimate
from .solver import SolveResult, SolverConfig, solve

STRATEGIES = ("real", "default", "forecast")


def resolve_durations(
    strategy: str,
    instance: Instance,
    model: ForecastModel | None = None,
    default_table: Mapping[str, float] | None = None,
    default_std_table: Mapping[str, float] | None = None,
) -> dict[int, DurationEstimate]:
    """Per-activity (mu, sigma^2) table for one strategy.

    ``default_std_table`` optionally switches the default strategy from
    sigma^2 = 0 to the historical class variances (for ablations).
    """
    out: dict[int, DurationEstimate] = {}
    if strategy == "real":
        for a in instance.activities:
            out[a.id] = DurationEstimate(mu=a.true_duration, sigma_sq=0.0)
    elif strategy == "default":
        if default_table is None:
            raise InvalidInputError("default strategy needs a class mean table")
        for a in instance.activities:
            if a.type_code not in default_table:
                raise InvalidInputError(f"no default duration for class {a.type_code!r}")
            sig = 0.0
            if default_std_table is not None:
                sig = float(default_std_table[a.type_code]) ** 2
            out[a.id] = DurationEstimate(mu=float(default_table[a.type_code]), sigma_sq=sig)
    elif strategy == "forecast":
        if model is None:
            raise InvalidInputError("forecast strategy needs a trained model")
        for a in instance.activities:
            mu = model.predict(a.features, a.type_code)
            out[a.id] = DurationEstimate(
                mu=mu, sigma_sq=model.variance_table.variance_for(a.type_code)
            )
    else:
        raise InvalidInputError(f"unknown strategy {strategy!r}")
    return out


@dataclass
class ExecutedPlan:
    """A plan after replay: realised schedule and both objective vectors."""

    routes: list[Route]
    unserved: set[int]
    planned: ObjectiveVector
    realized: ObjectiveVector
    start_time_gap: float  # mean |realized - planned| service start, minutes
    service_minutes: float
    travel_minutes: float
    shift_minutes: float  # sum of shift lengths over used vehicles


def replay(plan: Plan, instance: Instance, realized: Mapping[int, float]) -> ExecutedPlan:
    """Re-propagate a plan with realised durations, keeping stop order and
    vehicle assignments fixed, and recompute all time-based objectives."""
    vehicles = {v.id: v for v in instance.vehicles}
    new_routes: list[Route] = []
    gaps: list[float] = []
    service = 0.0
    travel_minutes = 0.0
    shift = 0.0
    for r in plan.routes:
        vehicle = vehicles[r.vehicle_id]
        executed = propagate_schedule(instance, vehicle, r.stops, realized)
        new_routes.append(executed)
        gaps.extend(
            abs(t_new - t_old) for t_new, t_old in zip(executed.start_times, r.start_times)
        )
        for sid in r.stops:
            service += float(realized[sid])
        prev = instance.depot_location
        for sid in r.stops:
            loc = instance.activity(sid).location
            travel_minutes += instance.travel_time[prev, loc]
            prev = loc
        if r.stops:
            travel_minutes += instance.travel_time[prev, instance.depot_location]
            shift += vehicle.shift_length
    realized_obj = evaluate_plan(instance, new_routes, realized)
    if plan.objectives is not None:
        planned_obj = plan.objectives
    else:
        planned_obj = realized_obj
    return ExecutedPlan(
        routes=new_routes,
        unserved=set(plan.unserved),
        planned=planned_obj,
        realized=realized_obj,
        start_time_gap=(sum(gaps) / len(gaps)) if gaps else 0.0,
        service_minutes=service,
        travel_minutes=travel_minutes,
        shift_minutes=shift,
    )


@dataclass
class KpiReport:
    """Operational KPIs for one executed day (or a monthly mean of days)."""

    operators_used: int | float
    completion_rate: float
    utilization: float
    overtime: float
    tardiness: float
    travel: float
    planned_vs_realized_gap: float

    def to_dict(self) -> dict:
        return {
            "operators_used": self.operators_used,
            "completion_rate": self.completion_rate,
            "utilization": self.utilization,
            "overtime": self.overtime,
            "tardiness": self.tardiness,
            "travel": self.travel,
            "planned_vs_realized_gap": self.planned_vs_realized_gap,
        }


def compute_kpis(executed: ExecutedPlan, instance: Instance) -> KpiReport:
    """Daily KPIs. Utilization is busy minutes (service + travel) over the
    shift minutes of the operators actually used, capped at 1; minutes past a
    shift are accounted under overtime instead."""
    used = sum(1 for r in executed.routes if r.stops)
    served = executed.realized.served
    if used == 0 and served > 0:
        raise InvalidInputError("inconsistent executed plan: served without operators")
    total = instance.n_activities
    busy = executed.service_minutes + executed.travel_minutes
    utilization = min(busy / executed.shift_minutes, 1.0) if used else 0.0
    return KpiReport(
        operators_used=used,
        completion_rate=(served / total) if total else 0.0,
        utilization=utilization,
        overtime=executed.realized.overtime,
        tardiness=executed.realized.tardiness,
        travel=executed.realized.travel_cost,
        planned_vs_realized_gap=executed.start_time_gap,
    )


def choose_plan(result: SolveResult) -> Plan:
    """Fixed decision rule over the Pareto set: lexicographic
    (max served, min overtime, min travel, min tardiness)."""
    return result.best_by(
        lambda o: (-o.served, o.overtime, o.travel_cost, o.tardiness)
    )


def run_cell(
    instance: Instance,
    strategy: str,
    model: ForecastModel | None,
    default_table: Mapping[str, float],
    config: SolverConfig,
) -> tuple[KpiReport, dict]:
    """Resolve -> solve -> choose -> replay -> KPIs for one (day, strategy)."""
    estimates = resolve_durations(
        strategy, instance, model=model, default_table=default_table
    )
    result = solve(instance, estimates, config)
    plan = choose_plan(result)
    realized = {a.id: a.true_duration for a in instance.activities}
    executed = replay(plan, instance, realized)
    kpis = compute_kpis(executed, instance)
    detail = {
        "generations_run": result.generations_run,
        "hit_time_limit": result.hit_time_limit,
        "pareto_size": len(result.pareto),
        "planned": plan.objectives.to_dict() if plan.objectives else None,
        "realized": executed.realized.to_dict(),
    }
    return kpis, detail


def _cell_worker(args: tuple) -> tuple[int, str, KpiReport, dict]:
    day_idx, strategy, instance_data, model_data, default_table, config_data, seed = args
    try:
        instance = Instance.from_dict(instance_data)
        model = ForecastModel.from_dict(model_data) if model_data is not None else None
        config = SolverConfig.from_dict({**config_data, "seed": seed})
        kpis, detail = run_cell(instance, strategy, model, default_table, config)
    except Exception as exc:
        raise type(exc)(f"day {day_idx}, strategy {strategy!r}: {exc}") from exc
    return day_idx, strategy, kpis, detail


DAILY_COLUMNS = ("day", "operators_used", "completion_rate", "utilization",
                 "overtime", "tardiness", "travel")


@dataclass
class ComparisonReport:
    daily: dict[str, list[KpiReport]]       # strategy -> per-day reports
    monthly: dict[str, KpiReport]           # strategy -> mean of days
    details: dict[str, list[dict]]

    def monthly_row(self, strategy: str) -> dict:
        return self.monthly[strategy].to_dict()


def monthly_mean(daily: Sequence[KpiReport]) -> KpiReport:
    n = len(daily)
    if n == 0:
        raise InvalidInputError("no daily reports to aggregate")
    return KpiReport(
        operators_used=sum(d.operators_used for d in daily) / n,
        completion_rate=sum(d.completion_rate for d in daily) / n,
        utilization=sum(d.utilization for d in daily) / n,
        overtime=sum(d.overtime for d in daily) / n,
        tardiness=sum(d.tardiness for d in daily) / n,
        travel=sum(d.travel for d in daily) / n,
        planned_vs_realized_gap=sum(d.planned_vs_realized_gap for d in daily) / n,
    )


def run_comparison(
    instances: Sequence[Instance],
    strategies: Sequence[str],
    model: ForecastModel | None,
    default_table: Mapping[str, float],
    solver_config: SolverConfig,
    seed: int,
    threads: int = 1,
) -> ComparisonReport:
    """Evaluate each strategy over a month of day instances.

    Each (day, strategy) cell runs under the derived seed
    (seed, "compare", strategy, day); the merge is sorted, so worker count
    and scheduling cannot change any output.
    """
    for s in strategies:
        if s not in STRATEGIES:
            raise InvalidInputError(f"unknown strategy {s!r}")
    if "forecast" in strategies and model is None:
        raise InvalidInputError("forecast strategy requires a model")
    jobs = []
    for d, instance in enumerate(instances):
        for s in strategies:
            cell_seed = seeds.derive_seed(seed, "compare", s, d)
            jobs.append(
                (
                    d, s, instance.to_dict(),
                    model.to_dict() if (model is not None and s == "forecast") else None,
                    dict(default_table), solver_config.to_dict(), cell_seed,
                )
            )
    results: dict[tuple[int, str], tuple[KpiReport, dict]] = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for day_idx, s, kpis, detail in pool.map(_cell_worker, jobs):
                results[(day_idx, s)] = (kpis, detail)
    else:
        for job in jobs:
            day_idx, s, kpis, detail = _cell_worker(job)
            results[(day_idx, s)] = (kpis, detail)

    daily: dict[str, list[KpiReport]] = {s: [] for s in strategies}
    details: dict[str, list[dict]] = {s: [] for s in strategies}
    for d in range(len(instances)):
        for s in strategies:
            kpis, detail = results[(d, s)]
            daily[s].append(kpis)
            details[s].append(detail)
    monthly = {s: monthly_mean(daily[s]) for s in strategies}
    return ComparisonReport(daily=daily, monthly=monthly, details=details)


def write_daily_csv(path: str | Path, reports: Sequence[KpiReport]) -> None:
    lines = [",".join(DAILY_COLUMNS)]
    for day, r in enumerate(reports):
        lines.append(
            f"{day},{r.operators_used},{r.completion_rate:.6f},"
            f"{r.utilization:.6f},{r.overtime:.6f},{r.tardiness:.6f},{r.travel:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


MONTHLY_COLUMNS = ("strategy", "days", "operators_used", "completion_rate",
                   "utilization", "overtime", "tardiness", "travel",
                   "planned_vs_realized_gap")


def write_monthly_csv(path: str | Path, report: ComparisonReport) -> None:
    lines = [",".join(MONTHLY_COLUMNS)]
    for s in sorted(report.monthly):
        m = report.monthly[s]
        lines.append(
            f"{s},{len(report.daily[s])},{m.operators_used:.6f},"
            f"{m.completion_rate:.6f},{m.utilization:.6f},{m.overtime:.6f},"
            f"{m.tardiness:.6f},{m.travel:.6f},{m.planned_vs_realized_gap:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_details_json(path: str | Path, report: ComparisonReport) -> None:
    payload = {
        s: {
            "daily": [r.to_dict() for r in report.daily[s]],
            "details": report.details[s],
            "monthly": report.monthly[s].to_dict(),
        }
        for s in sorted(report.daily)
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))
