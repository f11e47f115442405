"""Forecast-aware evolutionary solver for the stochastic routing problem.

Reference-point based many-objective search (NSGA-III style selection) over a
giant-tour genome: one permutation of all activities plus vehicle boundary
cuts. The segments are the vehicle routes in order; the tail beyond the last
cut is the unserved set, so coverage pressure comes entirely from the served
objective. Variation is order crossover on the permutation with swap
mutation, repaired by a budgeted first-improvement local search
(relocate / swap / intra-route 2-opt) on the scalarised score
travel + lambda * tardiness + risk penalty.

Chance constraints enter as a feasibility penalty, not hard rejection: each
route pays max(0, mu_sum + travel_sum + buffer - H) and selection uses
constrained domination (feasible beats infeasible, lower penalty beats
higher; objective dominance only between equal-penalty individuals).

With a fixed seed the search is fully deterministic provided the wall-clock
budget is not the binding termination criterion.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import seeds
from .model import (
    Instance,
    InvalidInputError,
    ObjectiveVector,
    Plan,
    Vehicle,
    make_plan,
)
from .risk import DurationEstimate, route_buffer


@dataclass(frozen=True)
class SolverConfig:
    """Search configuration; defaults follow the operational setup."""

    population: int = 100
    generations: int = 100
    time_budget: float | None = 1200.0
    tournament_size: int = 5
    crossover_prob: float = 0.8
    mutation_prob: float = 0.2          # starting point of the adaptive schedule
    mutation_growth: float = 1.5        # multiplier applied per stagnation window
    mutation_cap: float = 0.5
    stagnation_window: int = 10
    elite_fraction: float = 0.10
    alpha: float | None = None          # None: use each vehicle's own risk level
    ls_budget: int = 600                # local-search move evaluations per repair
    seed: int = 0

    def validate(self) -> None:
        if self.population < 4:
            raise InvalidInputError("population must be >= 4")
        if self.generations < 0:
            raise InvalidInputError("generations must be >= 0")
        for name in ("crossover_prob", "mutation_prob", "elite_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise InvalidInputError("alpha must lie in (0, 1)")
        if self.tournament_size < 1 or self.ls_budget < 0:
            raise InvalidInputError("invalid tournament size or local-search budget")

    def to_dict(self) -> dict:
        return {
            "population": self.population,
            "generations": self.generations,
            "time_budget": self.time_budget,
            "tournament_size": self.tournament_size,
            "crossover_prob": self.crossover_prob,
            "mutation_prob": self.mutation_prob,
            "mutation_growth": self.mutation_growth,
            "mutation_cap": self.mutation_cap,
            "stagnation_window": self.stagnation_window,
            "elite_fraction": self.elite_fraction,
            "alpha": self.alpha,
            "ls_budget": self.ls_budget,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SolverConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


def dominates(u: ObjectiveVector, v: ObjectiveVector) -> bool:
    """Pareto dominance on the four minimised objectives (served negated)."""
    a = u.as_minimized()
    b = v.as_minimized()
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def _tuple_dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def nondominated_sort(
    vectors: Sequence[Sequence[float]],
    penalties: Sequence[float] | None = None,
) -> list[list[int]]:
    """Fast non-dominated sorting into fronts of indices.

    With ``penalties`` given, constrained domination applies: a lower penalty
    dominates a higher one outright; objective dominance is consulted only
    between equal penalties.
    """
    n = len(vectors)
    if n == 0:
        return []
    pen = penalties if penalties is not None else [0.0] * n

    def dom(i: int, j: int) -> bool:
        if pen[i] != pen[j]:
            return pen[i] < pen[j]
        return _tuple_dominates(vectors[i], vectors[j])

    dominated_by: list[list[int]] = [[] for _ in range(n)]
    dom_count = [0] * n
    first: list[int] = []
    for i in range(n):
        for j in range(i + 1, n):
            if dom(i, j):
                dominated_by[i].append(j)
                dom_count[j] += 1
            elif dom(j, i):
                dominated_by[j].append(i)
                dom_count[i] += 1
    for i in range(n):
        if dom_count[i] == 0:
            first.append(i)
    fronts = [first]
    while True:
        nxt: list[int] = []
        for i in fronts[-1]:
            for j in dominated_by[i]:
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(j)
        if not nxt:
            break
        fronts.append(nxt)
    return fronts


def das_dennis_points(divisions: int, n_obj: int) -> np.ndarray:
    """Structured simplex lattice: all compositions of ``divisions``."""
    pts = []
    for cuts in combinations_with_replacement(range(divisions + 1), n_obj - 1):
        parts = []
        prev = 0
        for c in cuts:
            parts.append(c - prev)
            prev = c
        parts.append(divisions - prev)
        pts.append(parts)
    return np.asarray(pts, dtype=float) / divisions


def reference_points(
    n_obj: int = 4, divisions: int = 6, min_points: int | None = None
) -> np.ndarray:
    """Das-Dennis reference set, densified with shrunken inner layers until
    at least ``min_points`` directions exist."""
    pts = das_dennis_points(divisions, n_obj)
    scale = 0.5
    inner_div = max(divisions // 2, 1)
    while min_points is not None and len(pts) < min_points:
        inner = das_dennis_points(inner_div, n_obj) * scale + (1.0 - scale) / n_obj
        pts = np.unique(np.vstack([pts, inner]), axis=0)
        scale *= 0.5
    return pts


def niche_select(
    fronts: Sequence[Sequence[int]],
    objectives: np.ndarray,
    ref_points: np.ndarray,
    mu: int,
) -> list[int]:
    """NSGA-III environmental selection.

    Whole fronts are admitted until the next front would overflow ``mu``; the
    boundary front is filled via reference-direction niching: objectives are
    normalised to the ideal/nadir box of the candidate pool, every candidate
    is associated to the nearest reference direction by perpendicular
    distance, and slots are repeatedly given to the least-crowded niche
    (empty niches first, then closest candidate; all ties resolved by lowest
    index, keeping selection deterministic).
    """
    total = sum(len(f) for f in fronts)
    if total < mu:
        raise InvalidInputError(f"niche_select: only {total} candidates for mu={mu}")
    selected: list[int] = []
    boundary: list[int] = []
    for f in fronts:
        if len(selected) + len(f) <= mu:
            selected.extend(f)
            if len(selected) == mu:
                return selected
        else:
            boundary = list(f)
            break
    need = mu - len(selected)

    pool = selected + boundary
    Z = objectives[pool].astype(float)
    ideal = Z.min(axis=0)
    nadir = Z.max(axis=0)
    span = np.where(nadir - ideal > 1e-12, nadir - ideal, 1.0)
    Zn = (Z - ideal) / span

    R = ref_points / np.linalg.norm(ref_points, axis=1, keepdims=True)
    proj = Zn @ R.T
    sq = np.maximum((Zn**2).sum(axis=1, keepdims=True) - proj**2, 0.0)
    dist = np.sqrt(sq)
    assoc = dist.argmin(axis=1)
    best_dist = dist.min(axis=1)

    counts = np.zeros(len(ref_points), dtype=int)
    for k in range(len(selected)):
        counts[assoc[k]] += 1
    cand_positions = list(range(len(selected), len(pool)))
    available: dict[int, list[int]] = {}
    for p in cand_positions:
        available.setdefault(int(assoc[p]), []).append(p)

    while need > 0:
        niches = sorted(available)
        j = min(niches, key=lambda q: (counts[q], q))
        members = available[j]
        pick = min(members, key=lambda p: (best_dist[p], p))
        members.remove(pick)
        if not members:
            del available[j]
        counts[j] += 1
        selected.append(pool[pick])
        need -= 1
    return selected


def order_crossover(
    parent_a: Sequence[int], parent_b: Sequence[int], cut: tuple[int, int]
) -> list[int]:
    """Order crossover: keep parent_a's segment [i, j] in place, fill the
    remaining positions left to right with parent_b's other genes in parent_b
    order."""
    i, j = cut
    segment = list(parent_a[i : j + 1])
    in_seg = set(segment)
    fill = [g for g in parent_b if g not in in_seg]
    return fill[:i] + segment + fill[i:]


def order_crossover_pair(
    parent_a: "Individual", parent_b: "Individual", rng: np.random.Generator
) -> tuple["Individual", "Individual"]:
    """Offspring pair from one sampled cut; each child keeps its receiving
    parent's vehicle boundaries, so decoded routes stay hard-feasible."""
    n = len(parent_a.perm)
    if n < 2:
        return parent_a.clone(), parent_b.clone()
    i, j = sorted(rng.choice(n, size=2, replace=False))
    cut = (int(i), int(j))
    return (
        Individual(order_crossover(parent_a.perm, parent_b.perm, cut),
                   list(parent_a.bounds)),
        Individual(order_crossover(parent_b.perm, parent_a.perm, cut),
                   list(parent_b.bounds)),
    )


@dataclass
class Individual:
    perm: list[int]
    bounds: list[int]  # cumulative cut positions, one per vehicle
    objectives: ObjectiveVector | None = None
    penalty: float = 0.0
    rank: int = 0
    niche_count: int = 0

    def routes(self) -> list[list[int]]:
        out = []
        prev = 0
        for b in self.bounds:
            out.append(self.perm[prev:b])
            prev = b
        return out

    def unserved(self) -> list[int]:
        return self.perm[self.bounds[-1] :] if self.bounds else list(self.perm)

    def clone(self) -> "Individual":
        return Individual(perm=list(self.perm), bounds=list(self.bounds))


class _Evaluator:
    """Precomputed arrays and route evaluation for one (instance, estimates)."""

    def __init__(
        self,
        instance: Instance,
        estimates: Mapping[int, DurationEstimate],
        alpha_override: float | None,
    ) -> None:
        self.instance = instance
        ids = instance.activity_ids()
        missing = [i for i in ids if i not in estimates]
        if missing:
            raise InvalidInputError(f"estimates missing for activities {missing[:5]}")
        self.t = instance.travel_time.tolist()
        self.c = instance.travel_cost.tolist()
        self.depot = instance.depot_location
        self.loc = {a.id: a.location for a in instance.activities}
        self.open = {a.id: a.window_open for a in instance.activities}
        self.close = {a.id: a.window_close for a in instance.activities}
        self.mu = {i: float(estimates[i].mu) for i in ids}
        self.sig = {i: float(estimates[i].sigma_sq) for i in ids}
        self.lam = instance.tardiness_weight
        self.vehicles = list(instance.vehicles)
        self.alpha = {
            v.id: (alpha_override if alpha_override is not None else v.risk_level)
            for v in self.vehicles
        }
        # 2 * ln(1/alpha) per vehicle: buffer = sqrt(coef * sig_sum)
        self.buf_coef = {
            vid: 2.0 * math.log(1.0 / a) for vid, a in self.alpha.items()
        }

    def route_stats(self, stops: Sequence[int], vehicle: Vehicle) -> dict:
        """One pass over a stop sequence: cost, times, tardiness, penalty."""
        t, c, loc = self.t, self.c, self.loc
        prev = self.depot
        ready = 0.0
        travel_c = 0.0
        travel_t = 0.0
        tardiness = 0.0
        mu_sum = 0.0
        sig_sum = 0.0
        for sid in stops:
            j = loc[sid]
            travel_c += c[prev][j]
            tt = t[prev][j]
            travel_t += tt
            begin = ready + tt
            o = self.open[sid]
            if begin < o:
                begin = o
            over = begin - self.close[sid]
            if over > 0.0:
                tardiness += over
            ready = begin + self.mu[sid]
            sig_sum += self.sig[sid]
            mu_sum += self.mu[sid]
            prev = j
        if stops:
            travel_c += c[prev][self.depot]
            back = t[prev][self.depot]
            travel_t += back
            end = ready + back
        else:
            end = 0.0
        h = vehicle.shift_length
        buffer = math.sqrt(self.buf_coef[vehicle.id] * sig_sum)
        penalty = max(0.0, mu_sum + travel_t + buffer - h)
        return {
            "travel_cost": travel_c,
            "travel_time": travel_t,
            "tardiness": tardiness,
            "mu_sum": mu_sum,
            "sig_sum": sig_sum,
            "end": end,
            "overtime": max(0.0, end - h),
            "penalty": penalty,
        }

    def evaluate(self, ind: Individual) -> None:
        travel = tardiness = overtime = penalty = 0.0
        served = 0
        for vehicle, stops in zip(self.vehicles, ind.routes()):
            s = self.route_stats(stops, vehicle)
            travel += s["travel_cost"]
            tardiness += s["tardiness"]
            overtime += s["overtime"]
            penalty += s["penalty"]
            served += len(stops)
        ind.objectives = ObjectiveVector(travel, tardiness, overtime, served)
        ind.penalty = penalty

    def scalar_score(self, stats: Sequence[dict]) -> float:
        return sum(
            s["travel_cost"] + self.lam * s["tardiness"] + s["penalty"] for s in stats
        )


def apply_risk_penalty(
    instance: Instance,
    routes: Sequence[tuple[int, Sequence[int]]],
    estimates: Mapping[int, DurationEstimate],
    alpha: float | None = None,
) -> float:
    """Total buffered shift overrun across routes, in minutes.

    Per route: max(0, sum(mu) + sum(travel time) + buffer - H). Zero exactly
    when every route passes the chance-feasibility check.
    """
    vehicles = {v.id: v for v in instance.vehicles}
    ev = _Evaluator(instance, estimates, alpha)
    total = 0.0
    for vid, stops in routes:
        total += ev.route_stats(list(stops), vehicles[vid])["penalty"]
    return total


def initialize_population(
    instance: Instance,
    estimates: Mapping[int, DurationEstimate],
    config: SolverConfig,
) -> list[Individual]:
    """Randomised-greedy seeding: cheapest feasible insertion by travel cost
    under the buffered shift limit; activities that fit nowhere start
    unserved. Each individual owns a derived seed stream."""
    ev = _Evaluator(instance, estimates, config.alpha)
    ids = instance.activity_ids()
    pop: list[Individual] = []
    for k in range(config.population):
        rng = seeds.rng(config.seed, "solve", "init", k)
        order = [ids[i] for i in rng.permutation(len(ids))] if ids else []
        ind = _greedy_insert(ev, order, rng)
        ev.evaluate(ind)
        pop.append(ind)
    return pop


def _greedy_insert(
    ev: _Evaluator, order: Sequence[int], rng: np.random.Generator
) -> Individual:
    """Cheapest feasible insertion over the active vehicles; a new vehicle is
    activated only when no active route can take the activity, so initial
    plans use as few operators as the buffered limits allow. Feasibility uses
    the waiting-free sums, matching the chance check."""
    t, c, loc, depot = ev.t, ev.c, ev.loc, ev.depot
    m = len(ev.vehicles)
    routes: list[list[int]] = [[] for _ in ev.vehicles]
    mu_sums = [0.0] * m
    sig_sums = [0.0] * m
    time_sums = [0.0] * m
    cost_noise = 0.2
    active = 1 if m else 0
    unserved: list[int] = []
    for a in order:
        la = loc[a]
        best: tuple[float, int, int, float] | None = None  # (noisy cost, k, pos, dt)
        while True:
            for k in range(active):
                vehicle = ev.vehicles[k]
                stops = routes[k]
                sig_new = sig_sums[k] + ev.sig[a]
                buf = math.sqrt(ev.buf_coef[vehicle.id] * sig_new)
                base = mu_sums[k] + ev.mu[a] + buf
                locs = [depot] + [loc[s] for s in stops] + [depot]
                for pos in range(len(stops) + 1):
                    p, q = locs[pos], locs[pos + 1]
                    dt = t[p][la] + t[la][q] - t[p][q]
                    if base + time_sums[k] + dt > vehicle.shift_length + 1e-9:
                        continue
                    dc = c[p][la] + c[la][q] - c[p][q]
                    noisy = dc * (1.0 + cost_noise * (rng.random() - 0.5))
                    if best is None or noisy < best[0]:
                        best = (noisy, k, pos, dt)
            if best is not None or active >= m:
                break
            active += 1  # nothing fits: bring in the next operator
        if best is None:
            unserved.append(a)
        else:
            _, k, pos, dt = best
            routes[k].insert(pos, a)
            mu_sums[k] += ev.mu[a]
            sig_sums[k] += ev.sig[a]
            time_sums[k] += dt
    perm: list[int] = []
    bounds: list[int] = []
    for r in routes:
        perm.extend(r)
        bounds.append(len(perm))
    perm.extend(unserved)
    return Individual(perm=perm, bounds=bounds)


def mutate(ind: Individual, rate: float, rng: np.random.Generator) -> Individual:
    """Swap mutation over the whole genome (routes and unserved tail), so the
    served set can evolve; hard feasibility is preserved by construction."""
    if not 0.0 <= rate <= 1.0:
        raise InvalidInputError("mutation rate must lie in [0, 1]")
    n = len(ind.perm)
    if n >= 2 and rng.random() < rate:
        i, j = rng.choice(n, size=2, replace=False)
        ind.perm[i], ind.perm[j] = ind.perm[j], ind.perm[i]
    return ind


def repair_local_search(
    ind: Individual,
    ev: _Evaluator,
    budget: int,
) -> Individual:
    """First-improvement relocate / swap / intra-route 2-opt on the
    scalarised score until a fixed point or the evaluation budget runs out.
    Never worsens the score; unserved activities are untouched (coverage is
    selection's job, not repair's)."""
    routes = ind.routes()
    vehicles = ev.vehicles
    stats = [ev.route_stats(r, v) for r, v in zip(routes, vehicles)]

    def score_of(s: dict) -> float:
        return s["travel_cost"] + ev.lam * s["tardiness"] + s["penalty"]

    evals = 0
    improved = True
    while improved and evals < budget:
        improved = False
        # relocate: move stop (r1, i) to position (r2, j); smallest source
        # routes first so near-empty routes get consolidated away before the
        # evaluation budget runs out (their depot legs are the big savings)
        source_order = sorted(range(len(routes)), key=lambda r: (len(routes[r]) == 0,
                                                                 len(routes[r]), r))
        for r1 in source_order:
            if improved or evals >= budget:
                break
            for i in range(len(routes[r1])):
                if improved or evals >= budget:
                    break
                sid = routes[r1][i]
                removed = routes[r1][:i] + routes[r1][i + 1 :]
                for r2 in range(len(routes)):
                    if improved or evals >= budget:
                        break
                    target = removed if r2 == r1 else routes[r2]
                    for j in range(len(target) + 1):
                        if r2 == r1 and j == i:
                            continue
                        evals += 1
                        if evals > budget:
                            break
                        new_target = target[:j] + [sid] + target[j:]
                        if r2 == r1:
                            new_s = [ev.route_stats(new_target, vehicles[r1])]
                            old = score_of(stats[r1])
                            new = score_of(new_s[0])
                            if new < old - 1e-9:
                                routes[r1] = new_target
                                stats[r1] = new_s[0]
                                improved = True
                                break
                        else:
                            s1 = ev.route_stats(removed, vehicles[r1])
                            s2 = ev.route_stats(new_target, vehicles[r2])
                            old = score_of(stats[r1]) + score_of(stats[r2])
                            new = score_of(s1) + score_of(s2)
                            if new < old - 1e-9:
                                routes[r1] = removed
                                routes[r2] = new_target
                                stats[r1] = s1
                                stats[r2] = s2
                                improved = True
                                break
        if improved:
            continue
        # swap two stops across or within routes
        flat = [(r, i) for r in range(len(routes)) for i in range(len(routes[r]))]
        for a in range(len(flat)):
            if improved or evals >= budget:
                break
            r1, i = flat[a]
            for b in range(a + 1, len(flat)):
                r2, j = flat[b]
                evals += 1
                if evals > budget:
                    break
                if r1 == r2:
                    new_r = list(routes[r1])
                    new_r[i], new_r[j] = new_r[j], new_r[i]
                    s = ev.route_stats(new_r, vehicles[r1])
                    if score_of(s) < score_of(stats[r1]) - 1e-9:
                        routes[r1] = new_r
                        stats[r1] = s
                        improved = True
                        break
                else:
                    n1 = list(routes[r1])
                    n2 = list(routes[r2])
                    n1[i], n2[j] = n2[j], n1[i]
                    s1 = ev.route_stats(n1, vehicles[r1])
                    s2 = ev.route_stats(n2, vehicles[r2])
                    if (
                        score_of(s1) + score_of(s2)
                        < score_of(stats[r1]) + score_of(stats[r2]) - 1e-9
                    ):
                        routes[r1] = n1
                        routes[r2] = n2
                        stats[r1] = s1
                        stats[r2] = s2
                        improved = True
                        break
        if improved:
            continue
        # intra-route 2-opt: reverse a segment
        for r in range(len(routes)):
            if improved or evals >= budget:
                break
            stops = routes[r]
            for i in range(len(stops) - 1):
                if improved or evals >= budget:
                    break
                for j in range(i + 1, len(stops)):
                    evals += 1
                    if evals > budget:
                        break
                    new_r = stops[:i] + stops[i : j + 1][::-1] + stops[j + 1 :]
                    s = ev.route_stats(new_r, vehicles[r])
                    if score_of(s) < score_of(stats[r]) - 1e-9:
                        routes[r] = new_r
                        stats[r] = s
                        improved = True
                        break

    tail = ind.unserved()
    perm: list[int] = []
    bounds: list[int] = []
    for r in routes:
        perm.extend(r)
        bounds.append(len(perm))
    perm.extend(tail)
    ind.perm = perm
    ind.bounds = bounds
    return ind


def _elite_key(ind: Individual) -> tuple:
    o = ind.objectives
    assert o is not None
    return (ind.penalty, o.travel_cost, o.tardiness, o.overtime, -o.served)


def _hv_proxy(objs: np.ndarray, box_lo: np.ndarray, box_hi: np.ndarray) -> float:
    """Cheap convergence indicator: mean dominated-box volume of the current
    first front, normalised to the generation-zero objective box."""
    span = np.where(box_hi - box_lo > 1e-12, box_hi - box_lo, 1.0)
    z = np.clip((objs - box_lo) / span, 0.0, 1.0)
    return float(np.mean(np.prod(1.0 - z, axis=1)))


@dataclass
class SolveResult:
    pareto: list[Plan]
    penalties: list[float]
    log: list[dict] = field(default_factory=list)
    generations_run: int = 0
    hit_time_limit: bool = False

    def best_by(self, key: Callable[[ObjectiveVector], tuple]) -> Plan:
        if not self.pareto:
            raise InvalidInputError("empty Pareto set")
        return min(self.pareto, key=lambda p: key(p.objectives))


CONVERGENCE_COLUMNS = (
    "generation", "best_travel", "best_tardiness", "best_overtime",
    "max_served", "penalty_zero_count",
)


def write_convergence_csv(path, log: Sequence[Mapping]) -> None:
    lines = [",".join(CONVERGENCE_COLUMNS)]
    for entry in log:
        lines.append(
            "{generation},{best_travel:.6f},{best_tardiness:.6f},"
            "{best_overtime:.6f},{max_served},{penalty_zero_count}".format(**entry)
        )
    Path(path).write_text("\n".join(lines) + "\n")


def solve(
    instance: Instance,
    estimates: Mapping[int, DurationEstimate],
    config: SolverConfig,
) -> SolveResult:
    """Run the full evolutionary loop and return the feasible Pareto set.

    The returned plans are the non-dominated penalty-zero individuals of the
    final population (falling back to the least-penalty ones when nothing is
    chance-feasible), with schedules propagated from the duration estimates.
    """
    config.validate()
    ev = _Evaluator(instance, estimates, config.alpha)
    rng = seeds.rng(config.seed, "solve", "loop")
    start = time.monotonic()

    population = initialize_population(instance, estimates, config)
    refs = reference_points(n_obj=4, min_points=config.population)
    _assign_rank_and_niche(population, refs)

    all_objs = np.asarray([p.objectives.as_minimized() for p in population])
    box_lo = all_objs.min(axis=0)
    box_hi = all_objs.max(axis=0)

    log: list[dict] = [_log_entry(0, population, box_lo, box_hi, config.mutation_prob)]
    p_m = config.mutation_prob
    best_scalar = min(_elite_key(p) for p in population)
    stagnation = 0
    n_elite = max(1, math.ceil(config.elite_fraction * config.population))
    hit_time = False
    gen = 0

    for gen in range(1, config.generations + 1):
        if config.time_budget is not None and time.monotonic() - start > config.time_budget:
            hit_time = True
            gen -= 1
            break
        offspring: list[Individual] = []
        while len(offspring) < config.population:
            pa = _tournament(population, config, rng)
            pb = _tournament(population, config, rng)
            if rng.random() < config.crossover_prob:
                c1, c2 = order_crossover_pair(pa, pb, rng)
            else:
                c1, c2 = pa.clone(), pb.clone()
            for child in (c1, c2):
                if len(offspring) >= config.population:
                    break
                mutate(child, p_m, rng)
                repair_local_search(child, ev, config.ls_budget)
                ev.evaluate(child)
                offspring.append(child)

        combined = population + offspring
        elites = sorted(combined, key=_elite_key)[:n_elite]
        elite_set = {id(e) for e in elites}
        rest = [p for p in combined if id(p) not in elite_set]
        objs = np.asarray([p.objectives.as_minimized() for p in rest])
        pens = [p.penalty for p in rest]
        fronts = nondominated_sort(objs.tolist(), pens)
        chosen = niche_select(fronts, objs, refs, config.population - len(elites))
        population = elites + [rest[i] for i in chosen]
        _assign_rank_and_niche(population, refs)

        entry_best = min(_elite_key(p) for p in population)
        if entry_best < best_scalar:
            best_scalar = entry_best
            stagnation = 0
            p_m = config.mutation_prob
        else:
            stagnation += 1
            if stagnation % config.stagnation_window == 0:
                p_m = min(config.mutation_cap, p_m * config.mutation_growth)
        log.append(_log_entry(gen, population, box_lo, box_hi, p_m))

    plans, penalties = _extract_pareto(instance, ev, population)
    return SolveResult(
        pareto=plans,
        penalties=penalties,
        log=log,
        generations_run=gen,
        hit_time_limit=hit_time,
    )


def _tournament(
    population: Sequence[Individual], config: SolverConfig, rng: np.random.Generator
) -> Individual:
    k = min(config.tournament_size, len(population))
    idx = rng.integers(0, len(population), size=k)
    ties = rng.random(k)
    best = min(
        range(k),
        key=lambda q: (
            population[idx[q]].penalty,
            population[idx[q]].rank,
            population[idx[q]].niche_count,
            ties[q],
        ),
    )
    return population[idx[best]]


def _assign_rank_and_niche(population: Sequence[Individual], refs: np.ndarray) -> None:
    objs = np.asarray([p.objectives.as_minimized() for p in population])
    pens = [p.penalty for p in population]
    fronts = nondominated_sort(objs.tolist(), pens)
    for rank, front in enumerate(fronts):
        for i in front:
            population[i].rank = rank
    ideal = objs.min(axis=0)
    nadir = objs.max(axis=0)
    span = np.where(nadir - ideal > 1e-12, nadir - ideal, 1.0)
    zn = (objs - ideal) / span
    r_hat = refs / np.linalg.norm(refs, axis=1, keepdims=True)
    proj = zn @ r_hat.T
    dist = np.sqrt(np.maximum((zn**2).sum(axis=1, keepdims=True) - proj**2, 0.0))
    assoc = dist.argmin(axis=1)
    counts = np.bincount(assoc, minlength=len(refs))
    for i, p in enumerate(population):
        p.niche_count = int(counts[assoc[i]])


def _log_entry(
    gen: int,
    population: Sequence[Individual],
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    mutation_prob: float,
) -> dict:
    feas = [p for p in population if p.penalty == 0.0]
    ref = feas if feas else list(population)
    objs = np.asarray([p.objectives.as_minimized() for p in ref])
    front = nondominated_sort(objs.tolist())[0]
    return {
        "generation": gen,
        "best_travel": float(min(p.objectives.travel_cost for p in ref)),
        "best_tardiness": float(min(p.objectives.tardiness for p in ref)),
        "best_overtime": float(min(p.objectives.overtime for p in ref)),
        "max_served": int(max(p.objectives.served for p in ref)),
        "penalty_zero_count": len(feas),
        "hv_proxy": _hv_proxy(objs[front], box_lo, box_hi),
        "mutation_prob": mutation_prob,
    }


def _extract_pareto(
    instance: Instance, ev: _Evaluator, population: Sequence[Individual]
) -> tuple[list[Plan], list[float]]:
    feas = [p for p in population if p.penalty == 0.0]
    if not feas:
        min_pen = min(p.penalty for p in population)
        feas = [p for p in population if p.penalty == min_pen]
    objs = [p.objectives.as_minimized() for p in feas]
    front = nondominated_sort(objs)[0]
    plans: list[Plan] = []
    penalties: list[float] = []
    seen: set[tuple] = set()
    durations = {i: ev.mu[i] for i in ev.mu}
    for i in sorted(front):
        ind = feas[i]
        key = (tuple(tuple(r) for r in ind.routes()), tuple(sorted(ind.unserved())))
        if key in seen:
            continue
        seen.add(key)
        routes = [
            (v.id, stops) for v, stops in zip(ev.vehicles, ind.routes())
        ]
        plans.append(make_plan(instance, routes, ind.unserved(), durations))
        penalties.append(ind.penalty)
    return plans, penalties
