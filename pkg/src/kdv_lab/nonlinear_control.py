"""Fixed-point synthesis of boundary controls for the nonlinear KdV equation.

Around a constant state c the deviation z = y - c obeys

    z_t + (1 + c + eps) z_x + z_xxx = -z z_x + eps z_x,

where eps is an auxiliary drift that moves the linear part away from a
critical length.  With Lambda the linear solution map for drift 1 + c + eps
and Psi its least-norm right inverse, the control for a given iterate z is

    h_z = Psi(z0, zT - Lambda(0, 0, -z z_x + eps z_x)(tau))

and the next iterate is Lambda(z0, h_z, 0) + Lambda(0, 0, -z z_x + eps z_x).
A fixed point is a trajectory of the nonlinear system that ends at zT.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .critical_lengths import is_critical, safe_drift
from .errors import CriticalLengthError, DomainError, IllConditionedWarning, NoConvergenceError
from .kdv_solver import (
    BoundarySignal,
    SpaceTimeGrid,
    Trajectory,
    bilinear_estimate_report,
    l2_norm,
    march,
    operators,
    solve_nonlinear,
    zt_norm,
    zt_norm_values,
)
from .linear_control import BasisKind, ControlBasis, build_control_operator, solve_linear_control

MODULE = "nonlinear_control"


@dataclass(frozen=True)
class SteeringProblem:
    """Configuration of a steering run.

    ``horizon`` is the full window [T0, T1] of the three-phase construction;
    steering to a constant uses [T0, T0 + tau], steering from a constant
    uses [T1 - tau, T1].  When omitted it is [0, 3 tau].
    """

    L: float
    nx: int = 128
    nt: int = 256
    c: float = 0.0
    epsilon: float | None = None
    delta: float = 0.01
    picard_tol: float = 1e-11
    terminal_tol: float = 1e-3
    max_picard: int = 60
    max_restarts: int = 5
    basis_kind: BasisKind = BasisKind.HAT
    basis_count: int | None = None  # default: one hat per interior time node
    reg_threshold: float = 1e-8
    radius: float = 1.0
    horizon: tuple | None = None
    estimate_constant: float | None = None
    seed: int = 0  # for the empirical estimate constant


@dataclass(frozen=True, eq=False)
class SteeringResult:
    control: BoundarySignal
    trajectory: Trajectory
    picard_iterations: int
    contraction_history: list
    terminal_error: float
    terminal_tolerance: float
    epsilon: float
    base: float
    updates: list = field(default_factory=list)
    max_iterate_norm: float = 0.0
    control_norm: float = 0.0
    psi_norm: float = 0.0
    estimate_constant: float = 0.0

    def summary(self) -> dict:
        return {
            "picard_iterations": self.picard_iterations,
            "contraction_history": list(self.contraction_history),
            "updates": list(self.updates),
            "terminal_error": self.terminal_error,
            "terminal_tolerance": self.terminal_tolerance,
            "epsilon": self.epsilon,
            "base": self.base,
            "max_iterate_norm": self.max_iterate_norm,
            "control_norm": self.control_norm,
            "psi_norm": self.psi_norm,
            "estimate_constant": self.estimate_constant,
        }


def empirical_bilinear_constant(grid: SpaceTimeGrid, samples: int = 16, seed: int = 0) -> float:
    """Largest ratio of the bilinear estimate over random smooth pairs."""
    rng = np.random.default_rng(seed)
    x, t = grid.x, grid.t
    s = (t - grid.T0) / (grid.T1 - grid.T0)
    best = 0.0

    def smooth():
        v = np.zeros(grid.shape)
        for k in range(1, 5):
            a, b = rng.normal(size=2) / k
            v += np.outer(1.0 + a * s, np.cos(k * np.pi * x / grid.L) * b)
        return Trajectory(grid, v)

    for _ in range(samples):
        best = max(best, bilinear_estimate_report(smooth(), smooth()).empirical_constant)
    return best


def select_epsilon(L: float, tau: float, delta: float, c: float = 0.0, constant: float = 1.0) -> float:
    """Auxiliary drift for steering at length L around c.

    Off-critical lengths need none.  At a critical length take the
    mid-point of the safe interval and shrink it until both smallness
    conditions  k ||eps||_Z < delta  and  k ||eps||_Z^2 < delta  hold with a
    factor-two margin, where k = constant * (tau^1/2 + tau^1/3) and
    ||eps||_Z = eps sqrt(L) (1 + sqrt(tau)) for the constant function eps.
    """
    if c <= -1.0:
        raise DomainError(f"c={c}: linearized operator is degenerate for c <= -1", MODULE)
    if not is_critical(L, c)[0]:
        return 0.0
    eps = safe_drift(L, c, 0.5) - c
    k = constant * (tau ** 0.5 + tau ** (1.0 / 3.0))
    z1 = math.sqrt(L) * (1.0 + math.sqrt(tau))
    if k > 0:
        eps = min(eps, 0.5 * delta / (k * z1), 0.5 * math.sqrt(delta / k) / z1)
    if is_critical(L, c + eps)[0]:
        raise DomainError(f"auxiliary drift {eps} is critical for L={L}", MODULE)
    return eps


def _phase_grid(problem: SteeringProblem, t0: float, tau: float) -> SpaceTimeGrid:
    return SpaceTimeGrid(problem.L, t0, t0 + tau, problem.nx, problem.nt)


def _fixed_point(start, target, grid: SpaceTimeGrid, problem: SteeringProblem, base: float, eps: float):
    """Run the Picard iteration; start/target are full states, base is c.

    The truncation rank is picked on the first iterate so that the linear
    residual is a tenth of the terminal tolerance, then kept fixed.
    """
    L, nx, dt, dx = grid.L, grid.nx, grid.dt, grid.dx
    count = problem.basis_count or grid.nt - 1
    basis = ControlBasis(problem.basis_kind, count, grid.T0, grid.T1)
    drift = 1.0 + base + eps
    op = build_control_operator(drift, grid, basis)
    D1 = operators(nx, L)[0]
    z0 = np.asarray(start, dtype=float) - base
    zT = np.asarray(target, dtype=float) - base
    H0 = np.zeros((grid.nt + 1, 3))

    constant = problem.estimate_constant
    if constant is None:
        constant = empirical_bilinear_constant(grid, seed=problem.seed)

    goal = 0.1 * problem.terminal_tol * _scale(z0, zT, problem)
    threshold = problem.reg_threshold
    z = np.zeros(grid.shape)
    history, updates, prev = [], [], None
    max_norm = 0.0
    for it in range(1, problem.max_picard + 1):
        zx = z @ D1.T
        g = -z * zx + eps * zx
        w = march(np.zeros(nx + 1), H0, g, drift, L, nx, dt, grid.T0)
        with warnings.catch_warnings():
            # truncation is deliberate here
            warnings.simplefilter("ignore", IllConditionedWarning)
            if it == 1:
                sol = solve_linear_control(op, z0, zT - w[-1], threshold, goal)
                threshold = op.sigma[sol.rank - 1] / op.sigma[0] * (1.0 - 1e-9)
            else:
                sol = solve_linear_control(op, z0, zT - w[-1], threshold)
        free = march(z0, sol.signal.stacked(), None, drift, L, nx, dt, grid.T0)
        z_new = free + w
        diff = zt_norm_values(z_new - z, dx, dt)
        norm = zt_norm_values(z_new, dx, dt)
        max_norm = max(max_norm, norm)
        updates.append(diff)
        if prev is not None and prev > 0:
            history.append(diff / prev)
        z = z_new
        details = {"iteration": it, "updates": updates, "contraction_history": history,
                   "iterate_norm": norm, "epsilon": eps, "control_norm": sol.signal.l2_norm()}
        if not (np.isfinite(diff) and np.isfinite(norm)):
            raise NoConvergenceError("Picard iterate became non-finite", MODULE, details)
        if norm > problem.radius:
            raise NoConvergenceError(
                f"Picard iterate left the ball of radius {problem.radius} (norm {norm:.3g})",
                MODULE, details,
            )
        if diff < problem.picard_tol:
            break
        prev = diff
    else:
        raise NoConvergenceError(
            f"Picard iteration did not converge in {problem.max_picard} iterations", MODULE, details
        )
    traj = Trajectory(grid, z + base)
    err = l2_norm(traj.final - target, dx)
    return SteeringResult(
        control=sol.signal,
        trajectory=traj,
        picard_iterations=it,
        contraction_history=history,
        terminal_error=err,
        terminal_tolerance=0.0,
        epsilon=eps,
        base=base,
        updates=updates,
        max_iterate_norm=max_norm,
        control_norm=sol.signal.l2_norm(),
        psi_norm=op.pseudo_inverse_norm(threshold),
        estimate_constant=constant,
    )


def _scale(start, target, problem: SteeringProblem) -> float:
    """Size of a steering problem: the larger deviation of its end states."""
    dx = problem.L / problem.nx
    return max(l2_norm(start, dx), l2_norm(target, dx), 1e-6)


def _finish(result: SteeringResult, start, target, problem: SteeringProblem) -> SteeringResult:
    c = problem.c
    tol = problem.terminal_tol * _scale(start - c, target - c, problem)
    result = replace(result, terminal_tolerance=tol)
    if not result.terminal_error < tol:
        raise NoConvergenceError(
            f"terminal error {result.terminal_error:.3g} exceeds tolerance {tol:.3g}",
            MODULE, {"terminal_error": result.terminal_error, **result.summary()},
        )
    return result


def _check_ball(name, v, center, radius, dx):
    n = l2_norm(np.asarray(v) - center, dx)
    if not n < radius:
        raise DomainError(f"||{name}|| = {n:.3g} is not below delta = {radius:.3g}", MODULE)


def _state(v, problem):
    v = np.asarray(v, dtype=float)
    if np.ndim(v) == 0:
        v = np.full(problem.nx + 1, float(v))
    return v


def steer_to_constant(y0, d: float, tau: float, problem: SteeringProblem) -> SteeringResult:
    """Steer y0 to the constant state d in time tau (start of the horizon)."""
    c = problem.c
    y0 = _state(y0, problem)
    dx = problem.L / problem.nx
    _check_ball("y0 - c", y0, c, problem.delta, dx)
    if not 0.0 <= d - c < problem.delta:
        raise DomainError(f"d - c = {d - c} must lie in [0, delta)", MODULE)
    T0 = problem.horizon[0] if problem.horizon else 0.0
    grid = _phase_grid(problem, T0, tau)
    eps = _epsilon(problem, grid, tau)
    dT = np.full(problem.nx + 1, float(d))
    res = _fixed_point(y0, dT, grid, problem, c, eps)
    return _finish(res, y0, dT, problem)


def steer_from_constant(d: float, yT, tau: float, problem: SteeringProblem) -> SteeringResult:
    """Steer the constant state d to yT in time tau, placed at the end of the horizon."""
    c = problem.c
    yT = _state(yT, problem)
    dx = problem.L / problem.nx
    _check_ball("yT - c", yT, c, problem.delta, dx)
    if not 0.0 <= d - c < problem.delta:
        raise DomainError(f"d - c = {d - c} must lie in [0, delta)", MODULE)
    T1 = problem.horizon[1] if problem.horizon else 3.0 * tau
    grid = _phase_grid(problem, T1 - tau, tau)
    eps = _epsilon(problem, grid, tau)
    d0 = np.full(problem.nx + 1, float(d))
    res = _fixed_point(d0, yT, grid, problem, c, eps)
    return _finish(res, d0, yT, problem)


def local_steer_off_critical(y0, yT, c: float, T: float, problem: SteeringProblem) -> SteeringResult:
    """Steer y0 to yT near the constant c when L is not critical for c."""
    if not np.isfinite(c) or c <= -1.0:
        raise DomainError(f"c={c}: linearized operator is degenerate for c <= -1", MODULE)
    crit, gen = is_critical(problem.L, c)
    if crit:
        raise CriticalLengthError(f"L={problem.L} is critical for c={c} ({gen})", MODULE)
    y0, yT = _state(y0, problem), _state(yT, problem)
    dx = problem.L / problem.nx
    _check_ball("y0 - c", y0, c, problem.delta, dx)
    _check_ball("yT - c", yT, c, problem.delta, dx)
    T0 = problem.horizon[0] if problem.horizon else 0.0
    grid = _phase_grid(problem, T0, T)
    res = _fixed_point(y0, yT, grid, problem, c, 0.0)
    return _finish(res, y0, yT, problem)


def _epsilon(problem: SteeringProblem, grid: SpaceTimeGrid, tau: float) -> float:
    if problem.epsilon is not None:
        eps = float(problem.epsilon)
        if is_critical(problem.L, problem.c + eps)[0]:
            raise DomainError(f"epsilon={eps} is critical for L={problem.L}", MODULE)
        return eps
    constant = problem.estimate_constant
    if constant is None:
        constant = empirical_bilinear_constant(grid, seed=problem.seed)
    return select_epsilon(problem.L, tau, problem.delta, problem.c, constant)


def audit_steering(result: SteeringResult, tol: float = 1e-13) -> dict:
    """Re-simulate the control through the nonlinear solver and compare."""
    traj = result.trajectory
    sim, iterations, _ = solve_nonlinear(
        traj.initial, result.control, None, 1.0, traj.grid,
        tol=tol * max(1.0, zt_norm(traj)), max_iter=200,
    )
    dev = zt_norm_values(sim.values - traj.values, traj.grid.dx, traj.grid.dt)
    return {
        "z_deviation": dev,
        "final_state_deviation": l2_norm(sim.final - traj.final, traj.grid.dx),
        "iterations": iterations,
        "trajectory": sim,
    }
