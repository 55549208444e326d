"""Numerical laboratory for boundary control of the KdV equation on [0, L]."""

from .critical_lengths import enumerate_critical, is_critical, perturbation_analysis, safe_drift
from .kdv_solver import (
    BoundarySignal,
    Drift,
    Forcing,
    SpaceTimeGrid,
    Trajectory,
    solve_linear,
    solve_nonlinear,
    zt_norm,
)
from .linear_control import build_control_operator, reachability_report, solve_linear_control
from .nonlinear_control import (
    SteeringProblem,
    local_steer_off_critical,
    steer_from_constant,
    steer_to_constant,
)
from .return_method import ReturnConfig, plan_return, verify_plan

__version__ = "0.1.0"
