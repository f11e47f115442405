"""Acceptance gate: one test per shipping criterion, each printing a
PASS/FAIL line. Budgets and tolerances are pinned here, not configurable.

Run with `pytest tests/test_acceptance.py -v -s` to see the criterion lines.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from routecast import datagen, seeds
from routecast.cli import main as cli_main
from routecast.forecast import (
    GbtParams,
    attach_variances,
    fit_architecture,
    records_from_rows,
    split_by_date,
)
from routecast.gbt import fit_gbt
from routecast.risk import (
    conformal_calibrate,
    conformal_route_bound,
    gaussian_route_sampler,
    monte_carlo_violation_rate,
    route_buffer,
)
from routecast.solver import SolverConfig, nondominated_sort, solve
from routecast.risk import DurationEstimate

from conftest import euclidean_instance


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num:02d} {name}: {status}" + (f"  [{detail}]" if detail else ""))
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def test_01_buffer_correctness():
    start = time.monotonic()
    value_ok = abs(route_buffer([4.0, 9.0], 0.05) - 8.8254) <= 1e-3
    rng = np.random.default_rng(1001)
    mono_ok = True
    for _ in range(1000):
        k = int(rng.integers(1, 8))
        sig = rng.uniform(0.0, 30.0, size=k)
        a_lo, a_hi = sorted(rng.uniform(0.01, 1.0, size=2))
        if route_buffer(sig, a_lo) < route_buffer(sig, a_hi) - 1e-12:
            mono_ok = False
            break
        j = int(rng.integers(0, k))
        bumped = sig.copy()
        bumped[j] += rng.uniform(0.1, 10.0)
        if route_buffer(bumped, a_lo) < route_buffer(sig, a_lo) - 1e-12:
            mono_ok = False
            break
    elapsed = time.monotonic() - start
    _report(1, "buffer-correctness", value_ok and mono_ok and elapsed < 1.0,
            f"elapsed {elapsed:.2f}s")


def test_02_chance_feasibility_soundness():
    start = time.monotonic()
    rng = np.random.default_rng(2002)
    trials = 100_000
    alpha = 0.05
    bound = alpha + 3.0 * math.sqrt(alpha * (1 - alpha) / trials)
    worst = 0.0
    for route in range(200):
        k = int(rng.integers(2, 9))
        sig = rng.uniform(1.0, 80.0, size=k)
        mu_sum = float(rng.uniform(100.0, 400.0))
        travel = float(rng.uniform(20.0, 120.0))
        buf = route_buffer(sig, alpha)
        h = mu_sum + travel + buf  # slack set exactly to the buffer
        rate = monte_carlo_violation_rate(
            mu_sum, travel, h, gaussian_route_sampler(sig), trials,
            seed=seeds.derive_seed(2002, "mc", route),
        )
        worst = max(worst, rate)
        if rate > bound:
            break
    elapsed = time.monotonic() - start
    _report(2, "chance-feasibility-soundness",
            worst <= bound and elapsed < 120.0,
            f"worst rate {worst:.5f} vs bound {bound:.5f}, elapsed {elapsed:.1f}s")


def test_03_conformal_coverage():
    start = time.monotonic()
    rng = np.random.default_rng(3003)

    def draw(n):
        # two activity classes with different error scales, iid throughout
        classes = np.where(rng.random(n) < 0.6, "E", "Z")
        scale = np.where(classes == "E", 4.0, 9.0)
        y = 30.0 + scale * rng.standard_normal(n)
        mu_hat = np.full(n, 30.0)
        return classes, y, mu_hat

    c_cal, y_cal, mu_cal = draw(8000)
    table = conformal_calibrate(zip(c_cal.tolist(), y_cal, mu_cal))

    # per-stop coverage at level 0.1
    level = 0.1
    c_test, y_test, mu_test = draw(10_000)
    widths = np.asarray([table.upper_width(c, level) for c in c_test])
    per_stop = float(np.mean(y_test <= mu_test + widths))
    se_stop = math.sqrt((1 - level) * level / 10_000)
    stop_ok = per_stop >= (1 - level) - 3 * se_stop

    # route coverage with the alpha/|R| correction
    alpha = 0.05
    n_routes, stops = 10_000, 4
    c_r, y_r, mu_r = draw(n_routes * stops)
    c_r = c_r.reshape(n_routes, stops)
    y_r = y_r.reshape(n_routes, stops)
    mu_r = mu_r.reshape(n_routes, stops)
    covered = 0
    bound_cache: dict[tuple, float] = {}
    for i in range(n_routes):
        key = tuple(sorted(c_r[i]))
        if key not in bound_cache:
            bound_cache[key] = conformal_route_bound(table, list(c_r[i]), alpha)
        if y_r[i].sum() <= mu_r[i].sum() + bound_cache[key]:
            covered += 1
    route_cov = covered / n_routes
    se_route = math.sqrt(alpha * (1 - alpha) / n_routes)
    route_ok = route_cov >= (1 - alpha) - 3 * se_route
    elapsed = time.monotonic() - start
    _report(3, "conformal-coverage", stop_ok and route_ok and elapsed < 60.0,
            f"per-stop {per_stop:.4f} (>= {(1-level)-3*se_stop:.4f}), "
            f"route {route_cov:.4f} (>= {(1-alpha)-3*se_route:.4f}), "
            f"elapsed {elapsed:.1f}s")


def _brute_fronts(vectors: np.ndarray) -> list[list[int]]:
    n = len(vectors)
    le = (vectors[:, None, :] <= vectors[None, :, :]).all(axis=2)
    lt = (vectors[:, None, :] < vectors[None, :, :]).any(axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    remaining = np.ones(n, dtype=bool)
    fronts = []
    while remaining.any():
        idx = np.nonzero(remaining)[0]
        sub = dom[np.ix_(idx, idx)]
        nondominated = ~sub.any(axis=0)
        front = idx[nondominated]
        fronts.append(sorted(int(i) for i in front))
        remaining[front] = False
    return fronts


def test_04_sorting_oracle():
    rng = np.random.default_rng(4004)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        m = int(rng.integers(2, 5))
        vecs = rng.integers(0, 8, size=(n, m)).astype(float)
        fast = [sorted(f) for f in nondominated_sort([tuple(v) for v in vecs])]
        if fast != _brute_fronts(vecs):
            _report(4, "sorting-oracle", False, f"mismatch on n={n} m={m}")
    _report(4, "sorting-oracle", True, "1000 random instances, exact match")


def test_05_solver_optimality_tiny():
    hits = 0
    worst_time = 0.0
    for trial in range(20):
        inst = euclidean_instance(6, np.random.default_rng(5000 + trial))
        est = {a.id: DurationEstimate(mu=20.0, sigma_sq=0.0) for a in inst.activities}
        cfg = SolverConfig(population=40, generations=40, time_budget=None,
                           ls_budget=3000, seed=trial)
        t0 = time.monotonic()
        res = solve(inst, est, cfg)
        worst_time = max(worst_time, time.monotonic() - t0)
        best = min(p.objectives.travel_cost for p in res.pareto
                   if p.objectives.served == 6)
        opt = min(
            sum(inst.travel_cost[a, b] for a, b in zip(
                (0,) + tuple(x + 1 for x in perm),
                tuple(x + 1 for x in perm) + (0,)))
            for perm in itertools.permutations(range(6))
        )
        hits += abs(best - opt) < 1e-6
    _report(5, "solver-optimality-tiny", hits >= 18 and worst_time < 10.0,
            f"{hits}/20 optimal, slowest solve {worst_time:.1f}s")


@pytest.fixture(scope="module")
def big_corpus():
    cfg = datagen.GeneratorConfig(seed=7007, n_days=364, per_day_mean=275.0)
    rows = datagen.generate_corpus(cfg)
    return records_from_rows(rows)


def test_06_boosting_behaviour(big_corpus):
    rng = np.random.default_rng(6006)
    sample = [big_corpus[i] for i in rng.choice(len(big_corpus), 200, replace=False)]
    from routecast.features import FeatureEncoder

    enc = FeatureEncoder().fit([r.raw for r in sample])
    X = enc.encode_batch([r.raw for r in sample])
    y = np.asarray([r.y for r in sample])
    w = rng.integers(1, 4, size=200).astype(float)
    params = GbtParams(n_trees=25, learning_rate=0.3, max_depth=4)
    weighted = fit_gbt(X, y, w, params)
    duplicated = fit_gbt(np.repeat(X, w.astype(int), axis=0),
                         np.repeat(y, w.astype(int)), None, params)
    tree_match = weighted.base_score == duplicated.base_score and all(
        (t1.feature, t1.threshold, t1.left, t1.right, t1.value)
        == (t2.feature, t2.threshold, t2.left, t2.right, t2.value)
        for t1, t2 in zip(weighted.trees, duplicated.trees)
    )
    mono = all(
        b <= a + 1e-9
        for a, b in zip(weighted.train_losses, weighted.train_losses[1:])
    )
    _report(6, "boosting-behaviour", tree_match and mono,
            f"{len(weighted.trees)} trees bitwise-identical, loss monotone")


def test_07_architecture_ordering(big_corpus):
    start = time.monotonic()
    train, validation, test = split_by_date(big_corpus, seed=7007)
    params = GbtParams(n_trees=150, max_depth=5, learning_rate=0.1)
    y_test = np.asarray([r.y for r in test])
    maes = {}
    for variant in ("standard", "dual_weighted"):
        model = fit_architecture(variant, train, params)
        preds = model.predict_records(test)
        maes[variant] = float(np.mean(np.abs(y_test - preds)))
    elapsed = time.monotonic() - start
    _report(7, "architecture-ordering",
            maes["dual_weighted"] <= maes["standard"] and elapsed < 300.0,
            f"dual_weighted {maes['dual_weighted']:.4f} <= "
            f"standard {maes['standard']:.4f}, n={len(big_corpus)}, "
            f"elapsed {elapsed:.0f}s")


def _read_monthly(path):
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    out = {}
    for line in lines[1:]:
        cells = line.split(",")
        row = dict(zip(header, cells))
        out[row["strategy"]] = row
    return out


def test_08_strategy_comparison(tmp_path):
    start = time.monotonic()
    gen_dir = tmp_path / "gen"
    assert cli_main(["gen", "--seed", "808", "--days", "200", "--per-day", "250",
                     "--out", str(gen_dir)]) == 0
    train_dir = tmp_path / "train"
    assert cli_main(["train", "--seed", "808", "--corpus",
                     str(gen_dir / "corpus.csv"), "--variant", "dual_weighted",
                     "--trees", "120", "--depth", "5",
                     "--out", str(train_dir)]) == 0
    cmp_dir = tmp_path / "compare"
    assert cli_main(["compare", "--seed", "808", "--days", "21",
                     "--generations", "30", "--population", "60",
                     "--time-budget", "0", "--threads", "2",
                     "--model", str(train_dir / "model.json"),
                     "--out", str(cmp_dir)]) == 0
    monthly = _read_monthly(cmp_dir / "kpi_monthly.csv")
    util = {s: float(monthly[s]["utilization"]) for s in monthly}
    comp = {s: float(monthly[s]["completion_rate"]) for s in monthly}
    ordered = (
        util["forecast"] >= util["default"]
        and comp["forecast"] >= comp["default"]
        and util["real"] >= util["forecast"]
        and comp["real"] >= comp["forecast"]
    )
    elapsed = time.monotonic() - start
    _report(8, "strategy-comparison", ordered and elapsed < 1800.0,
            "completion real/forecast/default = "
            f"{comp['real']:.4f}/{comp['forecast']:.4f}/{comp['default']:.4f}, "
            "utilization = "
            f"{util['real']:.4f}/{util['forecast']:.4f}/{util['default']:.4f}, "
            f"elapsed {elapsed:.0f}s")


def test_09_generator_calibration():
    specs = datagen.default_class_specs()
    rng = np.random.default_rng(9009)
    worst = ("", 0.0)
    for code in sorted(specs):
        spec = specs[code]
        draws = datagen.sample_durations(spec, 100_000, rng)
        rel = abs(float(draws.mean()) - spec.mean_target) / spec.mean_target
        if rel > worst[1]:
            worst = (code, rel)
        if rel >= 0.05:
            _report(9, "generator-calibration", False,
                    f"class {code} off by {rel:.3%}")
    hist = rng.uniform(0.0, 50.0, size=120)
    hist[40] += 900.0
    smoothed = datagen.smooth_peaks(hist, peak_threshold=2.0, spread_radius=2)
    mass_ok = abs(float(smoothed.sum()) - float(hist.sum())) < 1e-9
    _report(9, "generator-calibration", mass_ok,
            f"worst class mean deviation {worst[0]} {worst[1]:.3%}, "
            f"smoothing mass error {abs(float(smoothed.sum()) - float(hist.sum())):.2e}")


def test_10_end_to_end_reproducibility(tmp_path):
    digests = []
    for tag, threads in (("r1", "1"), ("r2", "1"), ("r3", "3")):
        out = tmp_path / tag
        assert cli_main(["compare", "--seed", "1010", "--days", "3",
                         "--per-day", "12", "--vehicles", "2",
                         "--population", "12", "--generations", "3",
                         "--time-budget", "0", "--ls-budget", "80",
                         "--strategies", "real,default",
                         "--threads", threads, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        digests.append({k: v["sha256"] for k, v in manifest["outputs"].items()})
    same_rerun = digests[0] == digests[1]
    same_threads = digests[0] == digests[2]
    _report(10, "end-to-end-reproducibility", same_rerun and same_threads,
            f"{len(digests[0])} report files byte-identical across reruns and "
            "--threads 1 vs 3")
