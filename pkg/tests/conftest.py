import numpy as np
import pytest

from routecast.model import Activity, Instance, Vehicle


def build_instance(
    n=3,
    travel=None,
    cost=None,
    windows=None,
    durations=None,
    shift=480.0,
    n_vehicles=1,
    alpha=0.05,
    lam=1.0,
):
    """Small hand-wired instance; travel defaults to all-ones off-diagonal."""
    dim = n + 1
    if travel is None:
        travel = np.ones((dim, dim)) - np.eye(dim)
    travel = np.asarray(travel, dtype=float)
    cost = travel.copy() if cost is None else np.asarray(cost, dtype=float)
    activities = []
    for i in range(n):
        a, b = windows[i] if windows else (0.0, 1e6)
        activities.append(
            Activity(
                id=i,
                type_code="E",
                location=i + 1,
                window_open=a,
                window_close=b,
                features={"class": "E", "hour": 9, "dow": 1, "month": 5},
                true_duration=durations[i] if durations else 20.0,
            )
        )
    vehicles = [
        Vehicle(id=k, shift_length=shift, risk_level=alpha) for k in range(n_vehicles)
    ]
    return Instance(activities, vehicles, travel, cost, tardiness_weight=lam)


def euclidean_instance(n, rng, extent=20.0, n_vehicles=1, shift=1e5, windows_wide=True):
    """Random planar instance: travel time == travel cost == distance."""
    pts = np.empty((n + 1, 2))
    pts[0] = (extent / 2, extent / 2)
    pts[1:] = rng.uniform(0, extent, size=(n, 2))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    activities = [
        Activity(
            id=i,
            type_code="E",
            location=i + 1,
            window_open=0.0,
            window_close=1e6 if windows_wide else 480.0,
            true_duration=20.0,
        )
        for i in range(n)
    ]
    vehicles = [Vehicle(id=k, shift_length=shift) for k in range(n_vehicles)]
    return Instance(activities, vehicles, d, d.copy())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
