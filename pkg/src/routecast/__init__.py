"""routecast: risk-aware stochastic vehicle routing with learned durations.

A toolkit that trains gradient-boosted duration forecasters on synthetic
intervention data, converts predictions and residual variances into
route-level risk buffers, solves the chance-constrained routing problem with
a reference-point evolutionary solver, and evaluates duration strategies by
replaying plans against realised durations.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Activity,
    Instance,
    InvalidInputError,
    InvalidPlanError,
    ObjectiveVector,
    Plan,
    Route,
    Vehicle,
    check_hard_feasibility,
    evaluate_plan,
    propagate_schedule,
)
from .risk import (  # noqa: F401
    ConformalTable,
    DurationEstimate,
    VarianceTable,
    check_route_chance_feasible,
    conformal_calibrate,
    conformal_route_bound,
    estimate_variances,
    monte_carlo_violation_rate,
    route_buffer,
)
