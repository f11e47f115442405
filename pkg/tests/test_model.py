import json

import numpy as np
import pytest

from routecast.model import (
    Activity,
    Instance,
    InvalidInputError,
    InvalidPlanError,
    Plan,
    Route,
    Vehicle,
    check_hard_feasibility,
    evaluate_plan,
    make_plan,
    propagate_schedule,
    route_end_time,
)

from conftest import build_instance


def test_activity_window_invariant():
    with pytest.raises(InvalidInputError):
        Activity(id=0, type_code="E", location=1, window_open=50, window_close=40)


def test_vehicle_invariants():
    with pytest.raises(InvalidInputError):
        Vehicle(id=0, shift_length=0)
    with pytest.raises(InvalidInputError):
        Vehicle(id=0, shift_length=100, risk_level=1.0)


def test_instance_matrix_validation():
    with pytest.raises(InvalidInputError):
        build_instance(n=2, travel=np.ones((2, 2)))  # wrong dimension
    bad = np.ones((3, 3)) - np.eye(3)
    bad[0, 1] = -1.0
    with pytest.raises(InvalidInputError):
        build_instance(n=2, travel=bad)


def test_propagate_empty_route():
    inst = build_instance(n=2)
    route = propagate_schedule(inst, inst.vehicles[0], [], {})
    assert route.stops == [] and route.start_times == []
    assert route_end_time(inst, route, {}) == 0.0


def test_propagate_window_open_clamp():
    # arrival at 80 before the 100-minute opening: wait 20
    travel = np.zeros((2, 2))
    travel[0, 1] = travel[1, 0] = 80.0
    inst = build_instance(n=1, travel=travel, windows=[(100.0, 200.0)])
    route = propagate_schedule(inst, inst.vehicles[0], [0], {0: 10.0})
    assert route.start_times == [100.0]


def test_propagate_two_stop_recursion():
    # t01=10, t12=5, durations 20 each, open windows: T = [10, 35]
    travel = np.zeros((3, 3))
    travel[0, 1] = travel[1, 0] = 10.0
    travel[1, 2] = travel[2, 1] = 5.0
    travel[0, 2] = travel[2, 0] = 12.0
    inst = build_instance(n=2, travel=travel)
    route = propagate_schedule(inst, inst.vehicles[0], [0, 1], {0: 20.0, 1: 20.0})
    assert route.start_times == [10.0, 35.0]


def test_propagate_rejects_unknown_activity():
    inst = build_instance(n=2)
    with pytest.raises(InvalidInputError):
        propagate_schedule(inst, inst.vehicles[0], [0, 9], {0: 1.0, 9: 1.0})


def test_evaluate_empty_plan():
    inst = build_instance(n=4)
    obj = evaluate_plan(inst, [], {})
    assert obj.as_minimized() == (0.0, 0.0, 0.0, 0.0)
    assert obj.served == 0


def test_evaluate_overtime_boundary():
    # route finishing exactly at the shift limit has zero overtime
    travel = np.zeros((2, 2))
    travel[0, 1] = travel[1, 0] = 40.0
    inst = build_instance(n=1, travel=travel, shift=100.0)
    obj = evaluate_plan(inst, [(0, [0])], {0: 20.0})
    assert obj.overtime == 0.0


def test_evaluate_tardiness_sum():
    travel = np.zeros((3, 3))
    travel[0, 1] = travel[1, 0] = 10.0
    travel[1, 2] = travel[2, 1] = 5.0
    travel[0, 2] = travel[2, 0] = 12.0
    inst = build_instance(n=2, travel=travel, windows=[(0.0, 30.0), (0.0, 30.0)])
    obj = evaluate_plan(inst, [(0, [0, 1])], {0: 20.0, 1: 20.0})
    # starts at [10, 35] against closes [30, 30] -> tardiness 5
    assert obj.tardiness == pytest.approx(5.0)


def test_evaluate_rejects_duplicates_across_routes():
    inst = build_instance(n=3, n_vehicles=2)
    with pytest.raises(InvalidPlanError):
        evaluate_plan(inst, [(0, [0, 1]), (1, [1, 2])], {i: 1.0 for i in range(3)})


def test_travel_cost_matches_arc_sum():
    rng = np.random.default_rng(5)
    n = 6
    travel = rng.uniform(1, 9, size=(n + 1, n + 1))
    np.fill_diagonal(travel, 0.0)
    inst = build_instance(n=n, travel=travel)
    stops = [2, 0, 5, 3]
    obj = evaluate_plan(inst, [(0, stops)], {i: 0.0 for i in range(n)})
    locs = [0] + [s + 1 for s in stops] + [0]
    expected = sum(travel[a, b] for a, b in zip(locs, locs[1:]))
    assert obj.travel_cost == pytest.approx(expected)


def test_objectives_invariant_under_route_permutation():
    inst = build_instance(n=4, n_vehicles=2)
    durations = {i: 15.0 for i in range(4)}
    a = evaluate_plan(inst, [(0, [0, 1]), (1, [2, 3])], durations)
    b = evaluate_plan(inst, [(1, [2, 3]), (0, [0, 1])], durations)
    assert a.as_minimized() == b.as_minimized()


def test_schedule_monotone_in_durations_and_travel(rng):
    # increasing any duration or travel entry never decreases downstream starts
    for _ in range(30):
        n = 5
        travel = rng.uniform(1, 20, size=(n + 1, n + 1))
        np.fill_diagonal(travel, 0.0)
        inst = build_instance(n=n, travel=travel)
        durations = {i: float(rng.uniform(5, 40)) for i in range(n)}
        stops = list(rng.permutation(n))
        base = propagate_schedule(inst, inst.vehicles[0], stops, durations)
        bumped = dict(durations)
        k = stops[int(rng.integers(0, n - 1))]
        bumped[k] = durations[k] + float(rng.uniform(1, 10))
        after = propagate_schedule(inst, inst.vehicles[0], stops, bumped)
        assert all(t2 >= t1 - 1e-12 for t1, t2 in zip(base.start_times, after.start_times))


def test_check_hard_feasibility_duplicate():
    inst = build_instance(n=4, n_vehicles=2)
    plan = Plan(
        routes=[Route(0, [0, 1], [0.0, 0.0]), Route(1, [3, 1], [0.0, 0.0])],
        unserved={2},
    )
    kinds = {(v.kind, v.ids) for v in check_hard_feasibility(inst, plan)}
    assert ("duplicate-visit", (1,)) in kinds


def test_check_hard_feasibility_clean_and_unserved():
    inst = build_instance(n=4, n_vehicles=2)
    durations = {i: 10.0 for i in range(4)}
    full = make_plan(inst, [(0, [0, 1]), (1, [2, 3])], [], durations)
    assert check_hard_feasibility(inst, full) == []
    partial = make_plan(inst, [(0, [0, 1]), (1, [3])], [2], durations)
    assert check_hard_feasibility(inst, partial) == []


def test_check_hard_feasibility_missing():
    inst = build_instance(n=3)
    plan = Plan(routes=[Route(0, [0], [0.0])], unserved={1})
    v = check_hard_feasibility(inst, plan)
    assert any(x.kind == "missing-activity" and 2 in x.ids for x in v)


def test_served_plus_unserved_partition(rng):
    inst = build_instance(n=6, n_vehicles=2)
    durations = {i: 10.0 for i in range(6)}
    plan = make_plan(inst, [(0, [0, 2]), (1, [4])], [1, 3, 5], durations)
    assert plan.objectives.served + len(plan.unserved) == inst.n_activities


def test_instance_json_roundtrip(tmp_path):
    inst = build_instance(n=3, n_vehicles=2)
    path = tmp_path / "instance.json"
    inst.save(path)
    loaded = Instance.load(path)
    assert loaded.to_dict() == inst.to_dict()
    assert np.array_equal(loaded.travel_time, inst.travel_time)


def test_plan_json_roundtrip(tmp_path):
    inst = build_instance(n=3, n_vehicles=1)
    plan = make_plan(inst, [(0, [0, 2])], [1], {i: 12.0 for i in range(3)})
    path = tmp_path / "plan.json"
    plan.save(path)
    loaded = Plan.load(path)
    assert loaded.to_dict() == plan.to_dict()


def test_plan_json_preserves_objectives(tmp_path):
    inst = build_instance(n=2)
    plan = make_plan(inst, [(0, [0, 1])], [], {0: 5.0, 1: 6.0})
    data = json.loads(json.dumps(plan.to_dict()))
    assert Plan.from_dict(data).objectives.served == 2
