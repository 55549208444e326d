"""Finite-difference solver for the KdV equation with Neumann-type controls.

Solves

    u_t + (a u)_x + u_xxx (+ u u_x) = f   on (0, L) x (T0, T1)
    u_xx(0, t) = h1,  u_x(L, t) = h2,  u_xx(L, t) = h3

on a uniform grid.  Space: centered differences, with the two ghost nodes at
each end eliminated through the boundary conditions (plus one extrapolation
closure on the left, where only one condition is given).  Time:
Crank-Nicolson.  The nonlinear problem is solved by Picard iteration on
the linear one, treating -u u_x as forcing.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sl

from . import _io
from .errors import (
    NoConvergenceError,
    NonFiniteError,
    PreconditionError,
    ShapeError,
    SingularSystemError,
)

MODULE = "kdv_solver"


@dataclass(frozen=True)
class SpaceTimeGrid:
    L: float
    T0: float
    T1: float
    nx: int
    nt: int

    def __post_init__(self):
        problems = []
        if not (np.isfinite(self.L) and self.L > 0):
            problems.append(f"L={self.L} must be positive")
        if not (np.isfinite(self.T0) and np.isfinite(self.T1) and self.T1 > self.T0):
            problems.append(f"need T1 > T0, got [{self.T0}, {self.T1}]")
        if int(self.nx) != self.nx or self.nx < 8:
            problems.append(f"nx={self.nx} must be an integer >= 8")
        if int(self.nt) != self.nt or self.nt < 4:
            problems.append(f"nt={self.nt} must be an integer >= 4")
        if problems:
            raise ShapeError("; ".join(problems), MODULE)

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dt(self) -> float:
        return (self.T1 - self.T0) / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.nx + 1)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.T0, self.T1, self.nt + 1)

    @property
    def shape(self):
        return (self.nt + 1, self.nx + 1)

    def shifted(self, T0: float) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.L, T0, T0 + self.T1 - self.T0, self.nx, self.nt)


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: SpaceTimeGrid
    values: np.ndarray  # (nt+1, nx+1)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ShapeError(f"trajectory shape {v.shape} != grid shape {self.grid.shape}", MODULE)
        _check_finite(v, self.grid)
        object.__setattr__(self, "values", v)

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    def to_csv(self, path):
        g = self.grid
        tt, xx = np.meshgrid(g.t, g.x, indexing="ij")
        _io.write_csv(path, ["t", "x", "y"], [tt.ravel(), xx.ravel(), self.values.ravel()])


@dataclass(frozen=True, eq=False)
class BoundarySignal:
    """Nodal boundary data (h1, h2, h3) at the grid times."""

    t: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h3: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=float) for a in (self.t, self.h1, self.h2, self.h3)]
        n = len(arrs[0])
        if any(a.shape != (n,) for a in arrs):
            raise ShapeError("boundary signal arrays must be 1-d of equal length", MODULE)
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise NonFiniteError("boundary signal contains NaN or Inf", MODULE)
        for name, a in zip(("t", "h1", "h2", "h3"), arrs):
            object.__setattr__(self, name, a)

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "BoundarySignal":
        z = np.zeros(grid.nt + 1)
        return cls(grid.t, z, z, z)

    @classmethod
    def from_h2(cls, grid: SpaceTimeGrid, h2) -> "BoundarySignal":
        z = np.zeros(grid.nt + 1)
        return cls(grid.t, z, np.asarray(h2, dtype=float), z)

    def stacked(self) -> np.ndarray:
        """(nt+1, 3) array of (h1, h2, h3)."""
        return np.column_stack([self.h1, self.h2, self.h3])

    def l2_norm(self) -> float:
        """Composite L2(T0,T1) norm of the three components (trapezoid)."""
        if len(self.t) < 2:
            return 0.0
        return float(np.sqrt(np.trapezoid(self.h1 ** 2 + self.h2 ** 2 + self.h3 ** 2, self.t)))

    def to_csv(self, path):
        _io.write_csv(path, ["t", "h1", "h2", "h3"], [self.t, self.h1, self.h2, self.h3])

    def to_h2_csv(self, path):
        _io.write_csv(path, ["t", "h2"], [self.t, self.h2])


@dataclass(frozen=True, eq=False)
class Forcing:
    values: np.ndarray  # (nt+1, nx+1)

    @classmethod
    def zeros(cls, grid: SpaceTimeGrid) -> "Forcing":
        return cls(np.zeros(grid.shape))


@dataclass(frozen=True, eq=False)
class Drift:
    """Drift coefficient a: a constant or a full (nt+1, nx+1) field."""

    value: object = 1.0

    @property
    def is_constant(self) -> bool:
        return np.ndim(self.value) == 0


@dataclass(frozen=True)
class EstimateReport:
    zt_norm_of_solution: float
    data_norm: float
    empirical_constant: float


def _check_finite(v, grid=None):
    bad = ~np.isfinite(v)
    if bad.any():
        step = int(np.argwhere(bad.reshape(v.shape[0], -1).any(axis=1))[0, 0]) if v.ndim == 2 else -1
        details = {"time_step": step}
        if grid is not None and step >= 0:
            details["t"] = float(grid.t[step])
            if step > 0:
                details["max_abs_previous"] = float(np.max(np.abs(v[step - 1])))
        raise NonFiniteError(f"non-finite values at time step {step}", MODULE, details)


# ---------------------------------------------------------------------------
# spatial operators


def fd_weights(offsets, deriv: int) -> np.ndarray:
    """Weights w with sum w_k f(k h) ~ h^deriv f^(deriv)(0) for integer offsets."""
    offs = np.asarray(offsets, dtype=float)
    V = np.vander(offs, len(offs), increasing=True).T
    rhs = np.zeros(len(offs))
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(V, rhs)


@functools.lru_cache(maxsize=32)
def operators(nx: int, L: float):
    """Return (D1, D3, B3) for nx intervals on [0, L].

    D3 u + B3 @ (h1, h2, h3) approximates u_xxx at the nodes with the
    boundary conditions folded in.  D1 is the centered first difference,
    one-sided (second order) at both ends.
    """
    dx = L / nx
    n = nx + 1
    g = 2
    ne = n + 2 * g

    def e(i):
        return i + g

    D3e = np.zeros((n, ne))
    s3 = np.array([-1.0, 2.0, -2.0, 1.0]) / (2.0 * dx ** 3)
    for i in range(n):
        for o, c in zip((-2, -1, 1, 2), s3):
            D3e[i, e(i + o)] += c

    # four constraints on the ghost values u_{-2}, u_{-1}, u_{N+1}, u_{N+2}
    C = np.zeros((4, ne))
    rhs = np.zeros((4, 3))
    w2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * dx ** 2)
    w1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * dx)
    for o, c in zip(range(-2, 3), w2):
        C[0, e(o)] += c
    rhs[0, 0] = 1.0
    # left closure: fifth difference over nodes -2..3 vanishes
    for j, c in enumerate((1.0, -5.0, 10.0, -10.0, 5.0, -1.0)):
        C[1, e(-2 + j)] += c
    for o, c in zip(range(-2, 3), w1):
        C[2, e(nx + o)] += c
    rhs[2, 1] = 1.0
    for o, c in zip(range(-2, 3), w2):
        C[3, e(nx + o)] += c
    rhs[3, 2] = 1.0

    ghosts = [e(-2), e(-1), e(nx + 1), e(nx + 2)]
    inner = [e(i) for i in range(n)]
    Ginv = np.linalg.inv(C[:, ghosts])
    D3 = D3e[:, inner] - D3e[:, ghosts] @ (Ginv @ C[:, inner])
    B3 = D3e[:, ghosts] @ (Ginv @ rhs)

    D1 = np.zeros((n, n))
    idx = np.arange(1, n - 1)
    D1[idx, idx - 1] = -0.5 / dx
    D1[idx, idx + 1] = 0.5 / dx
    D1[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * dx)
    D1[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2.0 * dx)
    for M in (D1, D3, B3):
        M.setflags(write=False)
    return D1, D3, B3


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def l2_norm(v, dx: float) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(np.sum(trapezoid_weights(len(v), dx) * v * v)))


# ---------------------------------------------------------------------------
# time stepping


@functools.lru_cache(maxsize=64)
def constant_step(nx: int, L: float, a: float, dt: float):
    D1, D3, _ = operators(nx, L)
    A = -(a * D1 + D3)
    I = np.eye(nx + 1)
    lhs = I - 0.5 * dt * A
    lu = _factor(lhs, 0)
    rhs_op = I + 0.5 * dt * A
    return lu, rhs_op


def _factor(M, step):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = sl.lu_factor(M, check_finite=False)
    d = np.abs(np.diag(lu))
    if not np.all(np.isfinite(d)) or d.min() <= 1e-14 * max(d.max(), 1e-300):
        raise SingularSystemError(
            f"implicit step operator is singular at time step {step}", MODULE, {"time_step": step}
        )
    return lu, piv


def march(y0, H, F, a, L, nx, dt, t0=0.0):
    """Crank-Nicolson march.  y0 (n,) or (n, k); H (nt+1, 3); F (nt+1, n) or None.

    Returns the array of time slices.  a is a float or an (nt+1, n) field.
    """
    D1, D3, B3 = operators(nx, L)
    nt = H.shape[0] - 1
    y = np.array(y0, dtype=float)
    out = np.empty((nt + 1,) + y.shape)
    out[0] = y
    bh = H @ B3.T  # (nt+1, n): boundary contribution to u_xxx
    if y.ndim == 2:
        bh = bh[:, :, None]
    src = -bh
    if F is not None:
        src = src + (F if y.ndim == 1 else F[:, :, None])
    if np.ndim(a) == 0:
        lu, M = constant_step(nx, L, float(a), float(dt))
        for k in range(nt):
            r = M @ y + 0.5 * dt * (src[k] + src[k + 1])
            y = sl.lu_solve(lu, r, check_finite=False)
            if not np.all(np.isfinite(y)):
                _raise_blowup(k + 1, t0 + (k + 1) * dt, out[k])
            out[k + 1] = y
        return out
    a = np.asarray(a, dtype=float)
    I = np.eye(nx + 1)
    A_prev = -(D1 * a[0][None, :] + D3)
    for k in range(nt):
        A_next = -(D1 * a[k + 1][None, :] + D3)
        lu = _factor(I - 0.5 * dt * A_next, k + 1)
        r = (I + 0.5 * dt * A_prev) @ y + 0.5 * dt * (src[k] + src[k + 1])
        y = sl.lu_solve(lu, r, check_finite=False)
        if not np.all(np.isfinite(y)):
            _raise_blowup(k + 1, t0 + (k + 1) * dt, out[k])
        out[k + 1] = y
        A_prev = A_next
    return out


def _raise_blowup(step, t, prev):
    raise NonFiniteError(
        f"solution became non-finite at time step {step} (t={t:.6g})",
        MODULE,
        {"time_step": step, "t": t, "max_abs_previous": float(np.max(np.abs(prev)))},
    )


def _check_inputs(y0, h, f, a, grid):
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (grid.nx + 1,):
        raise ShapeError(f"y0 has shape {y0.shape}, expected ({grid.nx + 1},)", MODULE)
    if h is None:
        h = BoundarySignal.zeros(grid)
    if len(h.t) != grid.nt + 1:
        raise ShapeError(f"boundary signal has {len(h.t)} samples, expected {grid.nt + 1}", MODULE)
    F = None
    if f is not None:
        F = np.asarray(f.values if isinstance(f, Forcing) else f, dtype=float)
        if F.shape != grid.shape:
            raise ShapeError(f"forcing has shape {F.shape}, expected {grid.shape}", MODULE)
    if a is None:
        a = 1.0
    if isinstance(a, Drift):
        a = a.value
    if np.ndim(a) != 0:
        a = np.asarray(a, dtype=float)
        if a.shape != grid.shape:
            raise ShapeError(f"drift field has shape {a.shape}, expected {grid.shape}", MODULE)
    else:
        a = float(a)
    return y0, h, F, a


def solve_linear(y0, h=None, f=None, a=1.0, grid: SpaceTimeGrid = None) -> Trajectory:
    """Solve u_t + (a u)_x + u_xxx = f with boundary data h."""
    y0, h, F, a = _check_inputs(y0, h, f, a, grid)
    vals = march(y0, h.stacked(), F, a, grid.L, grid.nx, grid.dt, grid.T0)
    return Trajectory(grid, vals)


def convective(y: np.ndarray, L: float, nx: int) -> np.ndarray:
    """y * y_x slice by slice, using the solver's first-difference matrix."""
    D1 = operators(nx, L)[0]
    return y * (y @ D1.T)


def _picard_slab(y_start, H, F, a, L, nx, dt, t0, tol, max_iter, blowup):
    """Picard iteration on one slab.  Returns (values, iterations, ratios)."""
    nt = H.shape[0] - 1
    y = np.broadcast_to(y_start, (nt + 1, len(y_start))).copy()
    dx = L / nx
    ratios, prev = [], None
    base = F if F is not None else 0.0
    for it in range(1, max_iter + 1):
        y_new = march(y_start, H, base - convective(y, L, nx), a, L, nx, dt, t0)
        diff = zt_norm_values(y_new - y, dx, dt)
        y = y_new
        if prev is not None and prev > 0:
            ratios.append(diff / prev)
        if not np.isfinite(diff) or diff > blowup:
            raise NoConvergenceError(
                f"Picard iteration diverged (update {diff:.3g})", MODULE,
                {"iteration": it, "t0": t0, "ratios": ratios},
            )
        if diff < tol:
            return y, it, ratios
        prev = diff
    raise NoConvergenceError(
        f"Picard iteration did not reach tol={tol} in {max_iter} iterations", MODULE,
        {"iteration": max_iter, "t0": t0, "ratios": ratios},
    )


def solve_nonlinear(
    y0, h=None, f=None, a=1.0, grid: SpaceTimeGrid = None,
    tol: float = 1e-12, max_iter: int = 100, slab: float | None = None, max_halvings: int = 6,
):
    """Solve u_t + (a u)_x + u_xxx + u u_x = f by Picard iteration.

    The horizon is cut into slabs of length ``slab`` (default a quarter of
    it); Picard runs on each slab and the slabs are chained.  If a slab
    fails to converge the slab length is halved and the solve restarted, up
    to ``max_halvings`` times.

    Returns (trajectory, iterations, contraction_history).
    """
    y0, h, F, a = _check_inputs(y0, h, f, a, grid)
    if not tol > 0:
        raise PreconditionError("tol must be positive", MODULE)
    H = h.stacked()
    theta = (grid.T1 - grid.T0) / 4.0 if slab is None else float(slab)
    blowup = 1e3 * (1.0 + zt_norm_values(np.broadcast_to(y0, grid.shape), grid.dx, grid.dt))
    last = None
    for _ in range(max_halvings + 1):
        steps = max(1, int(round(theta / grid.dt)))
        try:
            vals = np.empty(grid.shape)
            vals[0] = y0
            total, history = 0, []
            for s in range(0, grid.nt, steps):
                e = min(s + steps, grid.nt)
                a_s = a if np.ndim(a) == 0 else a[s:e + 1]
                F_s = None if F is None else F[s:e + 1]
                v, it, ratios = _picard_slab(
                    vals[s], H[s:e + 1], F_s, a_s, grid.L, grid.nx, grid.dt,
                    grid.T0 + s * grid.dt, tol, max_iter, blowup,
                )
                vals[s:e + 1] = v
                total += it
                history.extend(ratios)
            return Trajectory(grid, vals), total, history
        except (NoConvergenceError, NonFiniteError) as exc:
            last = exc
            if steps == 1:
                break
            theta /= 2.0
    raise NoConvergenceError(
        f"nonlinear solve failed after slab halving: {last}", MODULE,
        getattr(last, "details", {}),
    )


# ---------------------------------------------------------------------------
# norms and diagnostics


def zt_norm_values(v: np.ndarray, dx: float, dt: float) -> float:
    v = np.asarray(v, dtype=float)
    w = trapezoid_weights(v.shape[1], dx)
    l2sq = (v * v) @ w
    q = np.diff(v, axis=1) / dx
    h1sq = l2sq + dx * np.sum(q * q, axis=1)
    if v.shape[0] > 1:
        integral = float(trapezoid_weights(v.shape[0], dt) @ h1sq)
    else:
        integral = 0.0
    return float(np.sqrt(l2sq.max()) + np.sqrt(max(integral, 0.0)))


def zt_norm(y: Trajectory) -> float:
    """max_t ||y||_L2 + (int ||y||_H1^2 dt)^(1/2) with trapezoid quadrature."""
    return zt_norm_values(y.values, y.grid.dx, y.grid.dt)


def bilinear_estimate_report(u: Trajectory, v: Trajectory) -> EstimateReport:
    """Empirical constant in  int ||u v_x||_L2 dt <= C (T^1/2 + T^1/3) ||u||_Z ||v||_Z."""
    if u.grid != v.grid:
        raise ShapeError("trajectories live on different grids", MODULE)
    g = u.grid
    D1 = operators(g.nx, g.L)[0]
    prod = u.values * (v.values @ D1.T)
    w = trapezoid_weights(g.nx + 1, g.dx)
    slice_norms = np.sqrt((prod * prod) @ w)
    lhs = float(trapezoid_weights(g.nt + 1, g.dt) @ slice_norms)
    T = g.T1 - g.T0
    rhs = (T ** 0.5 + T ** (1.0 / 3.0)) * zt_norm(u) * zt_norm(v)
    ratio = lhs / rhs if rhs > 0 else 0.0
    return EstimateReport(zt_norm_of_solution=lhs, data_norm=rhs, empirical_constant=ratio)


def solution_estimate_report(y: Trajectory, y0, h: BoundarySignal | None = None, f=None) -> EstimateReport:
    """Ratio ||y||_Z / (||y0|| + ||h|| + ||f||_{L1(L2)}) for a computed solution."""
    g = y.grid
    data = l2_norm(y0, g.dx)
    if h is not None:
        data += h.l2_norm()
    if f is not None:
        F = np.asarray(f.values if isinstance(f, Forcing) else f)
        w = trapezoid_weights(g.nx + 1, g.dx)
        data += float(trapezoid_weights(g.nt + 1, g.dt) @ np.sqrt((F * F) @ w))
    z = zt_norm(y)
    return EstimateReport(z, data, z / data if data > 0 else 0.0)


def energy_balance_report(y: Trajectory, h: BoundarySignal, a=1.0) -> float:
    """Max defect of d/dt (1/2)||y||^2 against the boundary flux.

    For the linear equation with constant drift a and u_xx = 0 at both ends
    the flux is a/2 y(0)^2 - a/2 y(L)^2 + 1/2 y_x(L)^2 - 1/2 y_x(0)^2.
    """
    if isinstance(a, Drift):
        a = a.value
    if np.ndim(a) != 0:
        raise PreconditionError("energy balance needs a constant drift", MODULE)
    if np.any(h.h1 != 0) or np.any(h.h3 != 0):
        raise PreconditionError("energy balance needs h1 = h3 = 0", MODULE)
    g = y.grid
    Y = y.values
    if len(h.t) != g.nt + 1:
        raise ShapeError("boundary signal does not match the trajectory grid", MODULE)
    D1 = operators(g.nx, g.L)[0]
    w = trapezoid_weights(g.nx + 1, g.dx)
    E = 0.5 * (Y * Y) @ w
    ux0 = Y @ D1[0]
    flux = 0.5 * a * Y[:, 0] ** 2 - 0.5 * a * Y[:, -1] ** 2 + 0.5 * h.h2 ** 2 - 0.5 * ux0 ** 2
    defect = np.diff(E) / g.dt - 0.5 * (flux[1:] + flux[:-1])
    return float(np.max(np.abs(defect)))
