"""Least-norm boundary control of the linearized KdV equation.

The single control is h2 = u_x(L, t) (h1 = h3 = 0).  Controls live in a
finite basis of L2(T0, T1); the control-to-final-state map is assembled
column by column from the solver and inverted by truncated SVD in the
L2(0, L) x L2(T0, T1) geometry (trapezoid weights on both sides).

At a critical length the slowest modes of the system stop responding to
the control.  ``reachability_report`` measures this on the span of the
slowest adjoint eigenvectors, where the signature is not masked by the
smoothing of fast modes.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl

from .errors import DomainError, IllConditionedWarning, ShapeError
from .kdv_solver import (
    BoundarySignal,
    SpaceTimeGrid,
    constant_step,
    l2_norm,
    march,
    operators,
    trapezoid_weights,
)

MODULE = "linear_control"

DEFAULT_BASIS_COUNT = 64
DEFAULT_REG_THRESHOLD = 1e-10
# defaults of the critical-length diagnostic
DEFAULT_HORIZON = 3.0
DEFAULT_MODES = 9
DEFAULT_RESOLUTION = (128, 256, DEFAULT_BASIS_COUNT)


class BasisKind(enum.Enum):
    PIECEWISE_CONSTANT = "piecewise"
    HAT = "hat"


@dataclass(frozen=True)
class ControlBasis:
    """count functions on [T0, T1].

    Hat functions sit on count equally spaced interior nodes and vanish at
    both ends of the horizon, so controls from consecutive horizons glue
    continuously.  Piecewise-constant slots split the horizon evenly.
    """

    kind: BasisKind = BasisKind.HAT
    count: int = DEFAULT_BASIS_COUNT
    T0: float = 0.0
    T1: float = 1.0

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ShapeError(f"basis count {self.count} must be a positive integer", MODULE)
        if not self.T1 > self.T0:
            raise ShapeError("basis horizon must have T1 > T0", MODULE)

    def sample(self, t) -> np.ndarray:
        """(count, len(t)) matrix of basis values at the times t."""
        t = np.asarray(t, dtype=float)
        span = self.T1 - self.T0
        s = (t - self.T0) / span
        if self.kind is BasisKind.PIECEWISE_CONSTANT:
            idx = np.minimum(np.floor(s * self.count + 1e-9).astype(int), self.count - 1)
            idx = np.maximum(idx, 0)
            return (idx[None, :] == np.arange(self.count)[:, None]).astype(float)
        width = 1.0 / (self.count + 1)
        centers = width * np.arange(1, self.count + 1)
        return np.maximum(0.0, 1.0 - np.abs(s[None, :] - centers[:, None]) / width)


@dataclass(frozen=True, eq=False)
class ControlOperator:
    drift: float
    grid: SpaceTimeGrid
    basis: ControlBasis
    map: np.ndarray  # (nx+1, count) final states of the basis responses
    samples: np.ndarray  # (count, nt+1)
    gram_factor: np.ndarray  # R with R^T R = time Gram matrix of the basis
    U: np.ndarray
    sigma: np.ndarray
    Vt: np.ndarray

    @property
    def x_weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid.nx + 1, self.grid.dx)

    @property
    def condition_ratio(self) -> float:
        return float(self.sigma[-1] / self.sigma[0]) if self.sigma[0] > 0 else 0.0

    def free_response(self, u0) -> np.ndarray:
        """Final state from u0 with zero control."""
        g = self.grid
        H = np.zeros((g.nt + 1, 3))
        return march(u0, H, None, self.drift, g.L, g.nx, g.dt, g.T0)[-1]

    def signal(self, coeffs) -> BoundarySignal:
        return BoundarySignal.from_h2(self.grid, np.asarray(coeffs) @ self.samples)

    def norm(self) -> float:
        """Operator norm of the map L2(T0,T1) -> L2(0,L)."""
        return float(self.sigma[0])

    def pseudo_inverse_norm(self, reg_threshold: float = DEFAULT_REG_THRESHOLD) -> float:
        """Norm of the truncated pseudo-inverse (the discrete ||Psi||)."""
        keep = self.sigma > reg_threshold * self.sigma[0]
        return float(1.0 / self.sigma[keep][-1])


@dataclass(frozen=True, eq=False)
class ControlSolution:
    signal: BoundarySignal
    coefficients: np.ndarray
    final_state: np.ndarray
    residual: float
    relative_residual: float
    rank: int


@dataclass(frozen=True, eq=False)
class ReachabilityReport:
    L: float
    drift: float
    sigma_min: float
    sigma_max: float
    singular_values: np.ndarray
    defect_modes: list = field(default_factory=list)  # [(sigma, final-state vector)]
    operator_singular_values: np.ndarray | None = None

    @property
    def ratio(self) -> float:
        return self.sigma_min / self.sigma_max if self.sigma_max > 0 else 0.0


def build_control_operator(drift: float, grid: SpaceTimeGrid, basis: ControlBasis | None = None) -> ControlOperator:
    """Assemble the map from basis coefficients (slot h2) to final states."""
    if basis is None:
        basis = ControlBasis(BasisKind.HAT, DEFAULT_BASIS_COUNT, grid.T0, grid.T1)
    if not (np.isclose(basis.T0, grid.T0) and np.isclose(basis.T1, grid.T1)):
        raise ShapeError("basis horizon differs from the grid time span", MODULE)
    drift = float(drift)
    S = basis.sample(grid.t)
    n = grid.nx + 1
    b = operators(grid.nx, grid.L)[2][:, 1]
    lu, M = constant_step(grid.nx, grid.L, drift, float(grid.dt))
    dt = grid.dt
    # all columns in one march; each column evolves independently
    Y = np.zeros((n, basis.count))
    for k in range(grid.nt):
        Y = sl.lu_solve(lu, M @ Y - 0.5 * dt * np.outer(b, S[:, k] + S[:, k + 1]), check_finite=False)
    tw = trapezoid_weights(grid.nt + 1, grid.dt)
    gram = (S * tw) @ S.T
    R = np.linalg.cholesky(gram).T
    sw = np.sqrt(trapezoid_weights(n, grid.dx))
    K = (sw[:, None] * Y) @ np.linalg.inv(R)
    U, s, Vt = np.linalg.svd(K, full_matrices=False)
    return ControlOperator(drift, grid, basis, Y, S, R, U, s, Vt)


def solve_linear_control(
    op: ControlOperator,
    u0,
    u_tau,
    reg_threshold: float = DEFAULT_REG_THRESHOLD,
    residual_goal: float | None = None,
) -> ControlSolution:
    """Least-norm h2 driving u0 to (the projection of) u_tau.

    Singular values below ``reg_threshold * sigma_max`` are dropped.  With a
    ``residual_goal`` the rank is further reduced to the smallest one whose
    predicted terminal residual stays below the goal.
    """
    n = op.grid.nx + 1
    u0 = np.asarray(u0, dtype=float)
    u_tau = np.asarray(u_tau, dtype=float)
    if u0.shape != (n,) or u_tau.shape != (n,):
        raise ShapeError(f"states must have {n} entries", MODULE)
    if op.condition_ratio < reg_threshold:
        warnings.warn(
            f"control operator is ill-conditioned (sigma_min/sigma_max={op.condition_ratio:.3g})",
            IllConditionedWarning,
            stacklevel=2,
        )
    free = op.free_response(u0)
    sw = np.sqrt(op.x_weights)
    keep = op.sigma > reg_threshold * op.sigma[0]
    if residual_goal is not None:
        r = sw * (u_tau - free)
        beta = op.U.T @ r
        tail = np.sqrt(np.maximum(r @ r - np.cumsum(beta**2), 0.0))
        ok = np.flatnonzero(tail <= residual_goal)
        rank = min(int(ok[0]) + 1 if ok.size else len(beta), int(keep.sum()))
        keep = np.arange(len(op.sigma)) < rank
    q = op.Vt[keep].T @ ((op.U[:, keep].T @ (sw * (u_tau - free))) / op.sigma[keep])
    coeffs = sl.solve_triangular(op.gram_factor, q)
    final = free + op.map @ coeffs
    res = l2_norm(final - u_tau, op.grid.dx)
    scale = l2_norm(u_tau, op.grid.dx)
    rel = res / scale if scale > 0 else res
    return ControlSolution(op.signal(coeffs), coeffs, final, res, rel, int(keep.sum()))


def slow_mode_basis(drift: float, grid: SpaceTimeGrid, modes: int = DEFAULT_MODES) -> np.ndarray:
    """Weighted-orthonormal basis (columns) of the span of the slowest adjoint modes.

    The left eigenvectors of the semi-discrete operator belonging to the
    ``modes`` eigenvalues of smallest modulus are mapped to the weighted
    L2 geometry (real and imaginary parts) and orthonormalized.
    """
    D1, D3, _ = operators(grid.nx, grid.L)
    A = -(drift * D1 + D3)
    ev, vl = sl.eig(A, left=True, right=False)
    order = np.argsort(np.abs(ev), kind="stable")[:modes]
    w = trapezoid_weights(grid.nx + 1, grid.dx)
    V = np.concatenate([vl[:, order].real, vl[:, order].imag], axis=1) / np.sqrt(w)[:, None]
    Q, s, _ = np.linalg.svd(V, full_matrices=False)
    return Q[:, s > 1e-8 * s[0]]


def reachability_report(
    L: float,
    c: float = 0.0,
    resolution=DEFAULT_RESOLUTION,
    threshold: float = 1e-6,
    T: float = DEFAULT_HORIZON,
    modes: int = DEFAULT_MODES,
    kind: BasisKind = BasisKind.HAT,
) -> ReachabilityReport:
    """Gramian spectrum of the control operator restricted to the slow modes.

    Singular values whose ratio to the largest falls below ``threshold`` are
    returned as defect modes together with the final-state direction the
    control cannot reach.
    """
    if not np.isfinite(c) or c <= -1.0:
        raise DomainError(f"c={c}: the linearized system is not controllable for c <= -1", MODULE)
    nx, nt, count = resolution
    grid = SpaceTimeGrid(L, 0.0, T, nx, nt)
    op = build_control_operator(1.0 + c, grid, ControlBasis(kind, count, 0.0, T))
    Q = slow_mode_basis(1.0 + c, grid, modes)
    K = op.U * op.sigma  # weighted map in the orthonormal control geometry
    P, s, _ = np.linalg.svd(Q.T @ K, full_matrices=False)
    sw = np.sqrt(op.x_weights)
    defects = []
    for j in range(len(s)):
        if s[j] < threshold * s[0]:
            vec = (Q @ P[:, j]) / sw
            defects.append((float(s[j]), vec))
    return ReachabilityReport(
        L=L, drift=1.0 + c, sigma_min=float(s[-1]), sigma_max=float(s[0]),
        singular_values=s, defect_modes=defects, operator_singular_values=op.sigma,
    )
