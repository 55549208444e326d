"""Three-phase return-method control at a critical length.

On [0, T/3] the state is steered from y0 to a small constant d, on
[T/3, 2T/3] it rests at d with zero control (constants are steady states),
and on [2T/3, T] it is steered from d to yT.  Around d the linearized
system is controllable even though it is not around c.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .critical_lengths import is_critical
from .errors import AuditFailure, DomainError, NoConvergenceError, NonFiniteError, PlanError
from .kdv_solver import (
    BoundarySignal,
    SpaceTimeGrid,
    Trajectory,
    l2_norm,
    solve_nonlinear,
    zt_norm_values,
)
from .linear_control import BasisKind
from .nonlinear_control import (
    SteeringProblem,
    SteeringResult,
    local_steer_off_critical,
    steer_from_constant,
    steer_to_constant,
)

MODULE = "return_method"
log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReturnConfig:
    c: float = 0.0
    nx: int = 128
    nt: int = 256  # time steps per phase
    delta: float = 0.01
    d: float | None = None  # default delta / 2 (offset from c)
    epsilon: float | None = None
    picard_tol: float = 1e-11
    terminal_tol: float = 1e-3
    end_to_end_tol: float = 1e-2
    max_picard: int = 60
    max_restarts: int = 5
    basis_kind: BasisKind = BasisKind.HAT
    basis_count: int | None = None
    reg_threshold: float = 1e-8
    radius: float = 1.0
    seed: int = 0

    def problem(self, L: float, T: float, delta: float) -> SteeringProblem:
        return SteeringProblem(
            L=L, nx=self.nx, nt=self.nt, c=self.c, epsilon=self.epsilon, delta=delta,
            picard_tol=self.picard_tol, terminal_tol=self.terminal_tol,
            max_picard=self.max_picard, max_restarts=self.max_restarts,
            basis_kind=self.basis_kind, basis_count=self.basis_count,
            reg_threshold=self.reg_threshold, radius=self.radius, horizon=(0.0, T), seed=self.seed,
        )


@dataclass(frozen=True, eq=False)
class ReturnPlan:
    T: float
    L: float
    c: float
    d: float
    y0: np.ndarray
    yT: np.ndarray
    phase1: SteeringResult | None
    phase2: Trajectory | None
    phase3: SteeringResult | None
    glued_control: BoundarySignal
    glued_trajectory: Trajectory
    mode: str = "return"  # or "local" for off-critical lengths
    epsilon: float = 0.0
    delta: float = 0.0
    restarts: int = 0
    hold_drift: float = 0.0
    terminal_tol: float = 0.0
    attempts: list = field(default_factory=list)

    @property
    def end_error(self) -> float:
        return l2_norm(self.glued_trajectory.final - self.yT, self.glued_trajectory.grid.dx)

    @property
    def joint_jumps(self) -> list:
        if self.mode != "return":
            return []
        dx = self.glued_trajectory.grid.dx
        return [
            l2_norm(self.phase1.trajectory.final - self.phase2.initial, dx),
            l2_norm(self.phase2.final - self.phase3.trajectory.initial, dx),
        ]

    def report(self) -> dict:
        out = {
            "mode": self.mode,
            "T": self.T,
            "L": self.L,
            "c": self.c,
            "d": self.d,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "restarts": self.restarts,
            "end_error": self.end_error,
            "hold_drift": self.hold_drift,
            "joint_jumps": self.joint_jumps,
            "attempts": self.attempts,
        }
        if self.phase1 is not None:
            out["phase1"] = self.phase1.summary()
        if self.phase3 is not None:
            out["phase3"] = self.phase3.summary()
        return out


def _hold(d: float, grid: SpaceTimeGrid) -> tuple[Trajectory, float]:
    """Constant trajectory d and the drift of a zero-control re-simulation."""
    const = Trajectory(grid, np.full(grid.shape, float(d)))
    sim, _, _ = solve_nonlinear(np.full(grid.nx + 1, float(d)), None, None, 1.0, grid, tol=1e-14)
    return const, float(np.max(np.abs(sim.values - d)))


def plan_return(y0, yT, T: float, L: float, cfg: ReturnConfig | None = None) -> ReturnPlan:
    """Build the glued three-phase control steering y0 to yT in time T."""
    cfg = cfg or ReturnConfig()
    y0 = np.asarray(y0, dtype=float)
    yT = np.asarray(yT, dtype=float)
    if y0.shape != (cfg.nx + 1,) or yT.shape != (cfg.nx + 1,):
        raise DomainError(f"states must have {cfg.nx + 1} entries", MODULE)
    if not T > 0:
        raise DomainError("T must be positive", MODULE)
    c = cfg.c
    if not is_critical(L, c)[0]:
        log.info("L=%s is not critical for c=%s; using local steering", L, c)
        return _plan_local(y0, yT, T, L, cfg)

    tau = T / 3.0
    delta = cfg.delta
    offset = cfg.d if cfg.d is not None else delta / 2.0
    attempts = []
    for attempt in range(cfg.max_restarts + 1):
        problem = cfg.problem(L, T, delta)
        d = c + offset
        try:
            p1 = steer_to_constant(y0, d, tau, problem)
            p3 = steer_from_constant(d, yT, tau, problem)
            break
        except (NoConvergenceError, NonFiniteError) as exc:
            attempts.append({"delta": delta, "d": d, "error": exc.code, "message": str(exc)})
            log.info("attempt %d failed (%s); halving d", attempt, exc)
            offset /= 2.0
    else:
        raise PlanError(
            f"steering failed after {cfg.max_restarts} restarts", MODULE, {"attempts": attempts}
        )

    hold_grid = SpaceTimeGrid(L, tau, 2.0 * tau, cfg.nx, cfg.nt)
    p2, drift = _hold(d, hold_grid)
    full = SpaceTimeGrid(L, 0.0, T, cfg.nx, 3 * cfg.nt)
    values = np.concatenate([p1.trajectory.values, p2.values[1:], p3.trajectory.values[1:]])
    # the steering controls vanish at the phase ends, so the joints agree
    h2 = np.concatenate([p1.control.h2, np.zeros(cfg.nt - 1), p3.control.h2])
    ctrl = BoundarySignal.from_h2(full, h2)
    return ReturnPlan(
        T=T, L=L, c=c, d=d, y0=y0, yT=yT, phase1=p1, phase2=p2, phase3=p3,
        glued_control=ctrl, glued_trajectory=Trajectory(full, values), mode="return",
        epsilon=p1.epsilon, delta=delta, restarts=len(attempts), hold_drift=drift,
        terminal_tol=max(p1.terminal_tolerance, p3.terminal_tolerance), attempts=attempts,
    )


def _plan_local(y0, yT, T, L, cfg) -> ReturnPlan:
    problem = replace(cfg.problem(L, T, cfg.delta), horizon=(0.0, T), nt=3 * cfg.nt)
    try:
        res = local_steer_off_critical(y0, yT, cfg.c, T, problem)
    except (NoConvergenceError, NonFiniteError) as exc:
        raise PlanError(f"local steering failed: {exc}", MODULE, exc.details) from exc
    return ReturnPlan(
        T=T, L=L, c=cfg.c, d=cfg.c, y0=y0, yT=yT, phase1=res, phase2=None, phase3=None,
        glued_control=res.control, glued_trajectory=res.trajectory, mode="local",
        delta=cfg.delta, terminal_tol=res.terminal_tolerance,
    )


def verify_plan(plan: ReturnPlan, factor: float = 10.0, raise_on_failure: bool = True) -> dict:
    """Re-simulate the glued control in one pass and compare with the plan."""
    traj = plan.glued_trajectory
    g = traj.grid
    sim, _, _ = solve_nonlinear(
        plan.y0, plan.glued_control, None, 1.0, g, tol=1e-13 * max(1.0, _z(traj)), max_iter=200,
    )
    diff = sim.values - traj.values
    nt = g.nt // 3 if plan.mode == "return" else g.nt
    phases = []
    if plan.mode == "return":
        for k in range(3):
            s = slice(k * nt, (k + 1) * nt + 1)
            phases.append(zt_norm_values(diff[s], g.dx, g.dt))
    else:
        phases.append(zt_norm_values(diff, g.dx, g.dt))
    deviation = zt_norm_values(diff, g.dx, g.dt)
    final_error = l2_norm(sim.final - plan.yT, g.dx)
    limit = factor * max(plan.terminal_tol, 1e-12)
    report = {
        "z_deviation": deviation,
        "phase_deviations": phases,
        "final_error": final_error,
        "limit": limit,
        "passed": bool(deviation < limit and final_error < limit),
    }
    if raise_on_failure and not report["passed"]:
        raise AuditFailure(
            f"re-simulation deviates from the plan (Z deviation {deviation:.3g}, "
            f"final error {final_error:.3g}, limit {limit:.3g})",
            MODULE, report,
        )
    return report


def _z(traj: Trajectory) -> float:
    return zt_norm_values(traj.values, traj.grid.dx, traj.grid.dt)
