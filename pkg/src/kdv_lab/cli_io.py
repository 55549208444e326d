"""Command line front end: config parsing, orchestration and report files.

Config files are ``key=value`` lines; ``#`` starts a comment.  Each run
writes into its own directory under ``$KDV_LAB_OUT`` (or ``./kdv_lab_runs``)
named after a hash of the command and the canonical config text, so equal
configs land in the same place and produce byte-identical files.
Wall-clock time is kept in ``timing.json``, apart from the reproducible
outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _io
from .critical_lengths import enumerate_critical
from .errors import LabError, ParseError, ValidationError
from .kdv_solver import (
    BoundarySignal,
    SpaceTimeGrid,
    energy_balance_report,
    l2_norm,
    solution_estimate_report,
    solve_linear,
    solve_nonlinear,
    zt_norm,
)
from .linear_control import (
    BasisKind,
    ControlBasis,
    build_control_operator,
    reachability_report,
    solve_linear_control,
)
from .nonlinear_control import (
    SteeringProblem,
    audit_steering,
    local_steer_off_critical,
    steer_from_constant,
    steer_to_constant,
)
from .return_method import ReturnConfig, plan_return, verify_plan

MODULE = "cli_io"
COMMANDS = ("critical-lengths", "simulate", "gramian", "steer-linear", "steer", "return-method")
STEER_MODES = ("to-const", "from-const", "local")


@dataclass
class ExperimentConfig:
    L: float | None = None
    c: float = 0.0
    T: float | None = None
    nx: int = 128
    nt: int = 256
    basis: int | None = None
    basis_kind: str = "hat"
    initial: str = "zero"
    target: str = "zero"
    control: str | None = None
    model: str = "nonlinear"
    mode: str | None = None
    d: float | None = None
    delta: float = 0.01
    epsilon: float | None = None
    picard_tol: float = 1e-11
    terminal_tol: float = 1e-3
    end_to_end_tol: float = 1e-2
    max_picard: int = 60
    max_restarts: int = 5
    reg_threshold: float | None = None
    radius: float = 1.0
    threshold: float = 1e-6
    modes: int = 9
    lmax: float | None = None
    seed: int = 0
    output_dir: str | None = None

    def to_text(self) -> str:
        """Canonical key=value text (sorted keys, unset keys omitted)."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name}={_render(v)}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _io.fmt(v) if v != 0 else "0.0"
    return str(v)


@dataclass
class RunReport:
    command: str
    config: dict
    config_text: str
    status: str = "ok"
    outputs: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    error: dict | None = None
    wall_time: float = 0.0
    run_dir: str | None = None
    exit_code: int = 0

    def to_dict(self) -> dict:
        """Reproducible part of the report (no wall time, no absolute paths)."""
        out = {
            "command": self.command,
            "config": self.config,
            "config_text": self.config_text,
            "status": self.status,
            "outputs": sorted(self.outputs),
            "diagnostics": self.diagnostics,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


# ---------------------------------------------------------------------------
# parsing


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    seen: dict[str, int] = {}
    raw: dict[str, str] = {}
    parse_problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            parse_problems.append(f"{source}:{lineno}: expected key=value, got {body!r}")
            continue
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            parse_problems.append(f"{source}:{lineno}: empty key")
            continue
        if key in seen:
            parse_problems.append(
                f"{source}:{lineno}: duplicate key {key!r} (first defined on line {seen[key]})"
            )
            continue
        seen[key] = lineno
        raw[key] = value
    if parse_problems:
        raise ParseError("; ".join(parse_problems), MODULE, {"problems": parse_problems})

    problems = []
    values = {}
    for key, value in raw.items():
        if key not in _TYPES:
            problems.append(f"unknown key {key!r} (line {seen[key]})")
            continue
        kind = _TYPES[key]
        try:
            if "int" in kind:
                values[key] = int(value)
            elif "float" in kind:
                v = float(value)
                if not math.isfinite(v):
                    raise ValueError(value)
                values[key] = v
            else:
                values[key] = value
        except ValueError:
            problems.append(f"{key}: cannot parse {value!r} (line {seen[key]})")
    cfg = ExperimentConfig(**values)
    problems.extend(_validate(cfg))
    if problems:
        raise ValidationError(problems, MODULE)
    return cfg


def parse_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"config file {path} does not exist", MODULE)
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def _validate(cfg: ExperimentConfig) -> list[str]:
    out = []

    def positive(name, allow_none=False):
        v = getattr(cfg, name)
        if v is None:
            if not allow_none:
                out.append(f"{name} is required")
        elif not v > 0:
            out.append(f"{name}={v} must be positive")

    positive("L")
    positive("T")
    if cfg.nx < 8:
        out.append(f"nx={cfg.nx} must be >= 8")
    if cfg.nt < 4:
        out.append(f"nt={cfg.nt} must be >= 4")
    for name in ("basis", "lmax", "reg_threshold", "epsilon"):
        positive(name, allow_none=True)
    for name in ("delta", "picard_tol", "terminal_tol", "end_to_end_tol", "radius", "threshold"):
        positive(name)
    for name in ("max_picard", "modes"):
        if getattr(cfg, name) < 1:
            out.append(f"{name} must be >= 1")
    if cfg.max_restarts < 0:
        out.append("max_restarts must be >= 0")
    if cfg.d is not None and cfg.d < 0:
        out.append(f"d={cfg.d} must be non-negative")
    if cfg.basis_kind not in ("hat", "piecewise"):
        out.append(f"basis_kind={cfg.basis_kind!r} must be hat or piecewise")
    if cfg.model not in ("linear", "nonlinear"):
        out.append(f"model={cfg.model!r} must be linear or nonlinear")
    if cfg.mode is not None and cfg.mode not in STEER_MODES:
        out.append(f"mode={cfg.mode!r} must be one of {', '.join(STEER_MODES)}")
    for name in ("initial", "target"):
        try:
            _parse_preset(getattr(cfg, name))
        except ValueError as exc:
            out.append(f"{name}: {exc}")
    return out


def _parse_preset(preset: str):
    name, _, args = preset.partition(":")
    name = name.strip()
    nums = [float(a) for a in args.split(",")] if args.strip() else []
    arity = {"zero": 0, "constant": 1, "gaussian": 3, "normgauss": 3}
    if name not in arity:
        raise ValueError(f"unknown preset {preset!r}")
    if len(nums) != arity[name]:
        raise ValueError(f"preset {name} takes {arity[name]} parameters")
    if name in ("gaussian", "normgauss") and not nums[2] > 0:
        raise ValueError("gaussian width must be positive")
    return name, nums


def preset_state(preset: str, L: float, nx: int) -> np.ndarray:
    """Evaluate zero | constant:d | gaussian:amp,center,width | normgauss:norm,center,width.

    ``gaussian`` takes the peak value; ``normgauss`` scales to the given L2 norm.
    """
    name, p = _parse_preset(preset)
    x = np.linspace(0.0, L, nx + 1)
    if name == "zero":
        return np.zeros(nx + 1)
    if name == "constant":
        return np.full(nx + 1, p[0])
    g = np.exp(-(((x - p[1]) / p[2]) ** 2))
    if name == "gaussian":
        return p[0] * g
    return p[0] * g / l2_norm(g, L / nx)


# ---------------------------------------------------------------------------
# running


def run_directory(command: str, cfg: ExperimentConfig) -> Path:
    root = cfg.output_dir or os.environ.get("KDV_LAB_OUT") or "kdv_lab_runs"
    digest = hashlib.sha256((command + "\n" + cfg.to_text()).encode()).hexdigest()[:16]
    return Path(root) / f"{command}-{digest}"


def run(command: str, cfg: ExperimentConfig, write: bool = True) -> RunReport:
    """Dispatch a command; module errors are captured in the report."""
    if command not in COMMANDS:
        raise ValidationError([f"unknown command {command!r}"], MODULE)
    report = RunReport(command=command, config=cfg.as_dict(), config_text=cfg.to_text())
    run_dir = run_directory(command, cfg) if write else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        report.run_dir = str(run_dir)
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _HANDLERS[command](cfg, report, run_dir)
    except LabError as exc:
        report.status = "error"
        report.error = exc.to_dict()
        report.exit_code = exc.exit_code
    report.wall_time = time.perf_counter() - start
    if run_dir is not None:
        _io.write_json(run_dir / "report.json", report.to_dict())
        _io.write_json(run_dir / "timing.json", {"wall_time_seconds": report.wall_time})
    return report


def _grid(cfg, T0=0.0, T1=None, nt=None):
    return SpaceTimeGrid(cfg.L, T0, cfg.T if T1 is None else T1, cfg.nx, cfg.nt if nt is None else nt)


def _emit(report, run_dir, name, writer):
    if run_dir is not None:
        writer(run_dir / name)
        report.outputs.append(name)


def _run_critical(cfg, report, run_dir):
    cs = enumerate_critical(cfg.c, cfg.lmax if cfg.lmax is not None else cfg.L)
    rows = [dict(length=v, branch=b, m=m, l=l) for v, b, m, l in cs.rows()]
    report.diagnostics["members"] = rows

    def write(path):
        _io.write_csv(path, ["length", "branch", "m", "l"],
                      [[r[k] for r in rows] for k in ("length", "branch", "m", "l")])

    _emit(report, run_dir, "critical_lengths.csv", write)


def _load_control(cfg, grid) -> BoundarySignal:
    if cfg.control is None:
        return BoundarySignal.zeros(grid)
    path = Path(cfg.control)
    if not path.is_file():
        raise ValidationError([f"control file {cfg.control} does not exist"], MODULE)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    cols = {name: data[:, i] for i, name in enumerate(header)}
    if "t" not in cols or "h2" not in cols:
        raise ValidationError([f"control file {cfg.control} needs columns t and h2"], MODULE)
    t = grid.t

    def col(name):
        return np.interp(t, cols["t"], cols[name]) if name in cols else np.zeros_like(t)

    return BoundarySignal(t, col("h1"), col("h2"), col("h3"))


def _run_simulate(cfg, report, run_dir):
    grid = _grid(cfg)
    y0 = preset_state(cfg.initial, cfg.L, cfg.nx)
    h = _load_control(cfg, grid)
    a = 1.0 + cfg.c
    diag = report.diagnostics
    if cfg.model == "linear":
        y = solve_linear(y0, h, None, a, grid)
        if not (np.any(h.h1) or np.any(h.h3)):
            diag["energy_defect"] = energy_balance_report(y, h, a)
    else:
        y, it, hist = solve_nonlinear(y0, h, None, a, grid, tol=cfg.picard_tol)
        diag["iterations"] = it
        diag["contraction_history"] = hist
    est = solution_estimate_report(y, y0, h)
    diag["zt_norm"] = zt_norm(y)
    diag["estimate"] = dataclasses.asdict(est)
    diag["final_l2"] = l2_norm(y.final, grid.dx)
    _emit(report, run_dir, "trajectory.csv", y.to_csv)
    _emit(report, run_dir, "control.csv", h.to_csv)


def _run_gramian(cfg, report, run_dir):
    rep = reachability_report(
        cfg.L, cfg.c, (cfg.nx, cfg.nt, cfg.basis or 64), cfg.threshold,
        T=cfg.T, modes=cfg.modes, kind=BasisKind(cfg.basis_kind),
    )
    report.diagnostics.update(
        singular_values=rep.singular_values.tolist(),
        operator_singular_values=rep.operator_singular_values.tolist(),
        sigma_min=rep.sigma_min,
        sigma_max=rep.sigma_max,
        ratio=rep.ratio,
        defect_count=len(rep.defect_modes),
    )
    _emit(report, run_dir, "spectrum.json",
          lambda p: _io.write_json(p, rep.singular_values.tolist()))


def _run_steer_linear(cfg, report, run_dir):
    grid = _grid(cfg)
    basis = ControlBasis(BasisKind(cfg.basis_kind), cfg.basis or 64, 0.0, cfg.T)
    op = build_control_operator(1.0 + cfg.c, grid, basis)
    u0 = preset_state(cfg.initial, cfg.L, cfg.nx)
    uT = preset_state(cfg.target, cfg.L, cfg.nx)
    sol = solve_linear_control(op, u0, uT, cfg.reg_threshold or 1e-10)
    traj = solve_linear(u0, sol.signal, None, 1.0 + cfg.c, grid)
    report.diagnostics.update(
        residual=sol.residual,
        relative_residual=sol.relative_residual,
        rank=sol.rank,
        control_norm=sol.signal.l2_norm(),
        sigma_max=float(op.sigma[0]),
        sigma_min=float(op.sigma[-1]),
    )
    _emit(report, run_dir, "control.csv", sol.signal.to_h2_csv)
    _emit(report, run_dir, "trajectory.csv", traj.to_csv)


def _steering_problem(cfg, horizon):
    return SteeringProblem(
        L=cfg.L, nx=cfg.nx, nt=cfg.nt, c=cfg.c, epsilon=cfg.epsilon, delta=cfg.delta,
        picard_tol=cfg.picard_tol, terminal_tol=cfg.terminal_tol, max_picard=cfg.max_picard,
        max_restarts=cfg.max_restarts, basis_kind=BasisKind(cfg.basis_kind),
        basis_count=cfg.basis, reg_threshold=cfg.reg_threshold or 1e-8, radius=cfg.radius, seed=cfg.seed,
        horizon=horizon,
    )


def _run_steer(cfg, report, run_dir):
    mode = cfg.mode
    if mode is None:
        raise ValidationError(["steer needs a mode (to-const, from-const or local)"], MODULE)
    problem = _steering_problem(cfg, (0.0, cfg.T))
    d = cfg.c + (cfg.d if cfg.d is not None else cfg.delta / 2.0)
    y0 = preset_state(cfg.initial, cfg.L, cfg.nx)
    yT = preset_state(cfg.target, cfg.L, cfg.nx)
    if mode == "to-const":
        res = steer_to_constant(y0, d, cfg.T, problem)
    elif mode == "from-const":
        res = steer_from_constant(d, yT, cfg.T, problem)
    else:
        res = local_steer_off_critical(y0, yT, cfg.c, cfg.T, problem)
    audit = audit_steering(res)
    report.diagnostics.update(res.summary())
    report.diagnostics["audit_z_deviation"] = audit["z_deviation"]
    _emit(report, run_dir, "control.csv", res.control.to_h2_csv)
    _emit(report, run_dir, "trajectory.csv", res.trajectory.to_csv)


def return_config(cfg: ExperimentConfig) -> ReturnConfig:
    return ReturnConfig(
        c=cfg.c, nx=cfg.nx, nt=cfg.nt, delta=cfg.delta, d=cfg.d, epsilon=cfg.epsilon,
        picard_tol=cfg.picard_tol, terminal_tol=cfg.terminal_tol,
        end_to_end_tol=cfg.end_to_end_tol, max_picard=cfg.max_picard,
        max_restarts=cfg.max_restarts, basis_kind=BasisKind(cfg.basis_kind),
        basis_count=cfg.basis, reg_threshold=cfg.reg_threshold or 1e-8, radius=cfg.radius, seed=cfg.seed,
    )


def _run_return(cfg, report, run_dir):
    y0 = preset_state(cfg.initial, cfg.L, cfg.nx)
    yT = preset_state(cfg.target, cfg.L, cfg.nx)
    plan = plan_return(y0, yT, cfg.T, cfg.L, return_config(cfg))
    report.diagnostics.update(plan.report())
    _emit(report, run_dir, "control.csv", plan.glued_control.to_h2_csv)
    _emit(report, run_dir, "trajectory.csv", plan.glued_trajectory.to_csv)
    audit = verify_plan(plan, raise_on_failure=False)
    report.diagnostics["audit"] = audit
    report.diagnostics["end_to_end_ok"] = bool(plan.end_error < cfg.end_to_end_tol)
    if not audit["passed"]:
        verify_plan(plan)  # raises AuditFailure with the breakdown


_HANDLERS = {
    "critical-lengths": _run_critical,
    "simulate": _run_simulate,
    "gramian": _run_gramian,
    "steer-linear": _run_steer_linear,
    "steer": _run_steer,
    "return-method": _run_return,
}


# ---------------------------------------------------------------------------
# entry point


def _parser():
    p = argparse.ArgumentParser(prog="kdv-lab", description="KdV boundary-control laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    cl = sub.add_parser("critical-lengths", help="list critical lengths")
    cl.add_argument("--c", type=float, default=0.0)
    cl.add_argument("--lmax", type=float, required=True)
    fmt = cl.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true")
    fmt.add_argument("--csv", action="store_true")
    gr = sub.add_parser("gramian", help="reachability spectrum")
    gr.add_argument("--L", type=float, required=True)
    gr.add_argument("--c", type=float, default=0.0)
    gr.add_argument("--nx", type=int, default=128)
    gr.add_argument("--nt", type=int, default=256)
    gr.add_argument("--basis", type=int, default=64)
    gr.add_argument("--T", type=float, default=3.0)
    gr.add_argument("--threshold", type=float, default=1e-6)
    gr.add_argument("--json", action="store_true")
    for name in ("simulate", "steer-linear", "return-method"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
    st = sub.add_parser("steer")
    st.add_argument("--mode", choices=STEER_MODES, required=True)
    st.add_argument("--config", required=True)
    return p


def _fail(exc: LabError) -> int:
    sys.stderr.write(json.dumps({"error": exc.to_dict()}, sort_keys=True) + "\n")
    return exc.exit_code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "critical-lengths":
            cfg = ExperimentConfig(L=args.lmax, T=1.0, c=args.c, lmax=args.lmax)
            report = run("critical-lengths", cfg, write=False)
            if report.error is None:
                rows = report.diagnostics["members"]
                if args.json:
                    sys.stdout.write(_io.dumps(rows))
                else:
                    sys.stdout.write("length,branch,m,l\n")
                    for r in rows:
                        sys.stdout.write(f"{_io.fmt(r['length'])},{r['branch']},{r['m']},{r['l']}\n")
        elif args.command == "gramian":
            cfg = ExperimentConfig(L=args.L, c=args.c, T=args.T, nx=args.nx, nt=args.nt,
                                   basis=args.basis, threshold=args.threshold)
            problems = _validate(cfg)
            if problems:
                raise ValidationError(problems, MODULE)
            report = run("gramian", cfg, write=False)
            if report.error is None:
                sys.stdout.write(_io.dumps(report.diagnostics["singular_values"]))
        else:
            cfg = parse_config(args.config)
            if args.command == "steer":
                cfg = dataclasses.replace(cfg, mode=args.mode)
            report = run(args.command, cfg)
            if report.error is None:
                sys.stdout.write(str(Path(report.run_dir) / "report.json") + "\n")
    except LabError as exc:
        return _fail(exc)
    if report.error is not None:
        sys.stderr.write(json.dumps({"error": report.error}, sort_keys=True) + "\n")
        return report.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
