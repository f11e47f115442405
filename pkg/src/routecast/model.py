"""Domain model for the stochastic routing problem.

All times are floating-point minutes measured from the start of the working
day (vehicles leave the depot at time 0). Travel matrices are dense and square
with the depot at index 0, so a problem with n activities has (n+1)x(n+1)
matrices. Activities carry a hidden ``true_duration`` that planning code must
never read; it is consumed only by the replay harness.

Time windows are soft: starting service after ``window_close`` accrues
tardiness, waiting before ``window_open`` is allowed and unpenalised. Shift
length is likewise soft at this level (overtime is an objective); risk-buffer
feasibility is enforced by the solver, not here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives malformed domain data."""


class InvalidPlanError(ValueError):
    """Raised when a plan breaks a hard structural constraint."""


@dataclass(frozen=True)
class Activity:
    """A single service intervention.

    Attributes
    ----------
    id : int
        Unique identifier within an instance.
    type_code : str
        Activity class code (one of the operational intervention classes).
    location : int
        Index into the instance travel matrices.
    window_open, window_close : float
        Soft service time window, minutes from day start.
    features : mapping
        Raw feature fields (hour, geography, equipment, ...) as produced by
        the data generator; encoded on demand by the forecaster.
    true_duration : float
        Realised service duration in minutes. Hidden from planning; used only
        when replaying plans against reality.
    demand : float, optional
        Pass-through field; no constraint in this model uses it.
    """

    id: int
    type_code: str
    location: int
    window_open: float
    window_close: float
    features: Mapping[str, object] = field(default_factory=dict)
    true_duration: float = 0.0
    demand: float | None = None

    def __post_init__(self) -> None:
        if self.window_open > self.window_close:
            raise InvalidInputError(
                f"activity {self.id}: window_open {self.window_open} > "
                f"window_close {self.window_close}"
            )
        if self.true_duration < 0:
            raise InvalidInputError(f"activity {self.id}: negative true_duration")


@dataclass(frozen=True)
class Vehicle:
    """An operator shift.

    ``shift_length`` is the maximum route duration in minutes and
    ``risk_level`` the per-route chance-constraint level alpha in (0, 1).
    ``capacity`` is a pass-through field with no constraint semantics here.
    """

    id: int
    shift_length: float
    risk_level: float = 0.05
    capacity: float | None = None

    def __post_init__(self) -> None:
        if self.shift_length <= 0:
            raise InvalidInputError(f"vehicle {self.id}: shift_length must be > 0")
        if not 0.0 < self.risk_level < 1.0:
            raise InvalidInputError(f"vehicle {self.id}: risk_level must lie in (0,1)")


class Instance:
    """A routing problem: depot, activities, fleet and travel matrices."""

    def __init__(
        self,
        activities: Sequence[Activity],
        vehicles: Sequence[Vehicle],
        travel_time: np.ndarray,
        travel_cost: np.ndarray,
        tardiness_weight: float = 1.0,
        depot_location: int = 0,
    ) -> None:
        self.activities = tuple(activities)
        self.vehicles = tuple(vehicles)
        self.travel_time = np.asarray(travel_time, dtype=float)
        self.travel_cost = np.asarray(travel_cost, dtype=float)
        self.tardiness_weight = float(tardiness_weight)
        self.depot_location = int(depot_location)
        self._by_id = {a.id: a for a in self.activities}
        self._validate()

    def _validate(self) -> None:
        n = len(self.activities)
        if len(self._by_id) != n:
            raise InvalidInputError("duplicate activity ids")
        if len({v.id for v in self.vehicles}) != len(self.vehicles):
            raise InvalidInputError("duplicate vehicle ids")
        for name, m in (("travel_time", self.travel_time), ("travel_cost", self.travel_cost)):
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise InvalidInputError(f"{name} must be square")
            if m.shape[0] != n + 1:
                raise InvalidInputError(
                    f"{name} has dimension {m.shape[0]}, expected {n + 1}"
                )
            if (m < 0).any():
                raise InvalidInputError(f"{name} has negative entries")
            if np.abs(np.diag(m)).max(initial=0.0) != 0.0:
                raise InvalidInputError(f"{name} diagonal must be zero")
        if self.tardiness_weight < 0:
            raise InvalidInputError("tardiness_weight must be nonnegative")
        dim = n + 1
        if not 0 <= self.depot_location < dim:
            raise InvalidInputError("depot_location out of range")
        for a in self.activities:
            if not 0 <= a.location < dim:
                raise InvalidInputError(f"activity {a.id}: location index out of range")

    @property
    def n_activities(self) -> int:
        return len(self.activities)

    def activity(self, activity_id: int) -> Activity:
        try:
            return self._by_id[activity_id]
        except KeyError:
            raise InvalidInputError(f"unknown activity id {activity_id}") from None

    def activity_ids(self) -> list[int]:
        return [a.id for a in self.activities]

    def to_dict(self) -> dict:
        return {
            "depot": self.depot_location,
            "lambda": self.tardiness_weight,
            "activities": [
                {
                    "id": a.id,
                    "type_code": a.type_code,
                    "location": a.location,
                    "window_open": a.window_open,
                    "window_close": a.window_close,
                    "features": dict(a.features),
                    "true_duration": a.true_duration,
                    **({"demand": a.demand} if a.demand is not None else {}),
                }
                for a in self.activities
            ],
            "vehicles": [
                {
                    "id": v.id,
                    "shift_length": v.shift_length,
                    "risk_level": v.risk_level,
                    **({"capacity": v.capacity} if v.capacity is not None else {}),
                }
                for v in self.vehicles
            ],
            "travel_time": self.travel_time.tolist(),
            "travel_cost": self.travel_cost.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Instance":
        try:
            activities = [
                Activity(
                    id=int(a["id"]),
                    type_code=str(a["type_code"]),
                    location=int(a["location"]),
                    window_open=float(a["window_open"]),
                    window_close=float(a["window_close"]),
                    features=dict(a.get("features", {})),
                    true_duration=float(a.get("true_duration", 0.0)),
                    demand=a.get("demand"),
                )
                for a in data["activities"]
            ]
            vehicles = [
                Vehicle(
                    id=int(v["id"]),
                    shift_length=float(v["shift_length"]),
                    risk_level=float(v.get("risk_level", 0.05)),
                    capacity=v.get("capacity"),
                )
                for v in data["vehicles"]
            ]
            return cls(
                activities=activities,
                vehicles=vehicles,
                travel_time=np.asarray(data["travel_time"], dtype=float),
                travel_cost=np.asarray(data["travel_cost"], dtype=float),
                tardiness_weight=float(data.get("lambda", 1.0)),
                depot_location=int(data.get("depot", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed instance data: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Route:
    """An ordered visit sequence for one vehicle with planned start times."""

    vehicle_id: int
    stops: list[int]
    start_times: list[float]

    def __post_init__(self) -> None:
        if len(self.stops) != len(set(self.stops)):
            raise InvalidPlanError(f"route {self.vehicle_id}: repeated stops")
        if len(self.start_times) != len(self.stops):
            raise InvalidPlanError(f"route {self.vehicle_id}: start_times length mismatch")


@dataclass
class ObjectiveVector:
    """The four planning objectives. ``served`` is stored positive and enters
    dominance comparisons negated (coverage is maximised)."""

    travel_cost: float
    tardiness: float
    overtime: float
    served: int

    def as_minimized(self) -> tuple[float, float, float, float]:
        return (self.travel_cost, self.tardiness, self.overtime, -float(self.served))

    def to_dict(self) -> dict:
        return {
            "travel_cost": self.travel_cost,
            "tardiness": self.tardiness,
            "overtime": self.overtime,
            "served": self.served,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObjectiveVector":
        return cls(
            travel_cost=float(d["travel_cost"]),
            tardiness=float(d["tardiness"]),
            overtime=float(d["overtime"]),
            served=int(d["served"]),
        )


@dataclass
class Plan:
    """A full solution: one route per used vehicle plus the unserved set."""

    routes: list[Route]
    unserved: set[int]
    objectives: ObjectiveVector | None = None

    def served_ids(self) -> list[int]:
        out: list[int] = []
        for r in self.routes:
            out.extend(r.stops)
        return out

    def to_dict(self) -> dict:
        return {
            "routes": [
                {
                    "vehicle_id": r.vehicle_id,
                    "stops": list(r.stops),
                    "start_times": list(r.start_times),
                }
                for r in self.routes
            ],
            "unserved": sorted(self.unserved),
            "objectives": self.objectives.to_dict() if self.objectives else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Plan":
        try:
            routes = [
                Route(
                    vehicle_id=int(r["vehicle_id"]),
                    stops=[int(s) for s in r["stops"]],
                    start_times=[float(t) for t in r["start_times"]],
                )
                for r in d["routes"]
            ]
            objectives = (
                ObjectiveVector.from_dict(d["objectives"]) if d.get("objectives") else None
            )
            return cls(routes=routes, unserved=set(int(u) for u in d["unserved"]),
                       objectives=objectives)
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed plan data: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Plan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def propagate_schedule(
    instance: Instance,
    vehicle: Vehicle,
    stops: Sequence[int],
    durations: Mapping[int, float],
) -> Route:
    """Forward time recursion along an explicit stop sequence.

    The vehicle departs the depot at time 0. Service at stop j starts at
    T_j = max(window_open_j, T_i + duration_i + travel_ij); waiting is inserted
    whenever arrival precedes the window opening. Tardiness per stop is
    derivable as max(0, T_j - window_close_j).
    """
    if len(stops) != len(set(stops)):
        raise InvalidPlanError("stops must be distinct")
    t = instance.travel_time
    prev_loc = instance.depot_location
    ready = 0.0
    start_times: list[float] = []
    for sid in stops:
        act = instance.activity(sid)
        if sid not in durations:
            raise InvalidInputError(f"no duration for activity {sid}")
        arrival = ready + t[prev_loc, act.location]
        begin = max(act.window_open, arrival)
        start_times.append(begin)
        ready = begin + float(durations[sid])
        prev_loc = act.location
    return Route(vehicle_id=vehicle.id, stops=list(stops), start_times=start_times)


def route_end_time(
    instance: Instance, route: Route, durations: Mapping[int, float]
) -> float:
    """Time the vehicle is back at the depot (0 for an empty route)."""
    if not route.stops:
        return 0.0
    last = instance.activity(route.stops[-1])
    return (
        route.start_times[-1]
        + float(durations[route.stops[-1]])
        + instance.travel_time[last.location, instance.depot_location]
    )


def _route_arcs(instance: Instance, stops: Sequence[int]) -> Iterable[tuple[int, int]]:
    prev = instance.depot_location
    for sid in stops:
        loc = instance.activity(sid).location
        yield prev, loc
        prev = loc
    if stops:
        yield prev, instance.depot_location


def route_travel_cost(instance: Instance, stops: Sequence[int]) -> float:
    c = instance.travel_cost
    return float(sum(c[i, j] for i, j in _route_arcs(instance, stops)))


def evaluate_plan(
    instance: Instance,
    plan_routes: Sequence[Route] | Sequence[tuple[int, Sequence[int]]],
    durations: Mapping[int, float],
) -> ObjectiveVector:
    """Compute the objective vector for a set of routes under a duration map.

    Accepts either Route objects or (vehicle_id, stops) pairs; schedules are
    re-propagated with the supplied durations, so stored start times are
    ignored. Raises InvalidPlanError if an activity appears on two routes.
    """
    vehicles = {v.id: v for v in instance.vehicles}
    seen: set[int] = set()
    travel = 0.0
    tardiness = 0.0
    overtime = 0.0
    served = 0
    for entry in plan_routes:
        if isinstance(entry, Route):
            vid, stops = entry.vehicle_id, entry.stops
        else:
            vid, stops = entry[0], list(entry[1])
        if vid not in vehicles:
            raise InvalidPlanError(f"unknown vehicle id {vid}")
        dup = seen.intersection(stops)
        if dup:
            raise InvalidPlanError(f"activities {sorted(dup)} appear in multiple routes")
        seen.update(stops)
        vehicle = vehicles[vid]
        route = propagate_schedule(instance, vehicle, stops, durations)
        travel += route_travel_cost(instance, stops)
        for sid, begin in zip(route.stops, route.start_times):
            tardiness += max(0.0, begin - instance.activity(sid).window_close)
        end = route_end_time(instance, route, durations)
        overtime += max(0.0, end - vehicle.shift_length)
        served += len(stops)
    return ObjectiveVector(travel_cost=travel, tardiness=tardiness,
                           overtime=overtime, served=served)


@dataclass(frozen=True)
class Violation:
    """One broken hard constraint; ``kind`` names it, ``ids`` the offenders."""

    kind: str
    ids: tuple[int, ...]
    detail: str = ""


def check_hard_feasibility(instance: Instance, plan: Plan) -> list[Violation]:
    """Structural checks: visit-exactly-once, distinctness, index validity.

    Unserved activities are allowed (coverage is an objective, not a
    constraint); an activity must appear in exactly one route or in the
    unserved set. Violations are returned as data, never raised.
    """
    violations: list[Violation] = []
    known = set(instance.activity_ids())
    vehicle_ids = {v.id for v in instance.vehicles}
    counts: dict[int, int] = {}
    for r in plan.routes:
        if r.vehicle_id not in vehicle_ids:
            violations.append(Violation("unknown-vehicle", (r.vehicle_id,)))
        seen_in_route: set[int] = set()
        for sid in r.stops:
            if sid in seen_in_route:
                violations.append(
                    Violation("duplicate-visit", (sid,), f"repeated within route {r.vehicle_id}")
                )
            seen_in_route.add(sid)
            counts[sid] = counts.get(sid, 0) + 1
    for sid, k in sorted(counts.items()):
        if sid not in known:
            violations.append(Violation("unknown-activity", (sid,)))
        if k > 1:
            violations.append(Violation("duplicate-visit", (sid,), f"visited {k} times"))
    for sid in sorted(plan.unserved):
        if sid not in known:
            violations.append(Violation("unknown-activity", (sid,), "in unserved set"))
        if sid in counts:
            violations.append(Violation("served-and-unserved", (sid,)))
    missing = known - set(counts) - plan.unserved
    if missing:
        violations.append(
            Violation("missing-activity", tuple(sorted(missing)),
                      "neither routed nor declared unserved")
        )
    return violations


def make_plan(
    instance: Instance,
    routes: Sequence[tuple[int, Sequence[int]]],
    unserved: Iterable[int],
    durations: Mapping[int, float],
) -> Plan:
    """Assemble a Plan with propagated schedules and evaluated objectives."""
    vehicles = {v.id: v for v in instance.vehicles}
    built = [
        propagate_schedule(instance, vehicles[vid], stops, durations)
        for vid, stops in routes
    ]
    objectives = evaluate_plan(instance, built, durations)
    return Plan(routes=built, unserved=set(unserved), objectives=objectives)
