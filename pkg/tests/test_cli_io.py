import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kdv_lab import _io
from kdv_lab.cli_io import (
    ExperimentConfig,
    main,
    parse_config,
    parse_config_text,
    preset_state,
    run,
    run_directory,
)
from kdv_lab.errors import ParseError, ValidationError
from kdv_lab.kdv_solver import l2_norm

MINIMAL = "L=6.2832\nc=0\nT=3\nnx=64\nnt=128\n"


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config(tmp_path):
    cfg = parse_config(write(tmp_path, "# experiment\n" + MINIMAL + "\n"))
    assert cfg.L == 6.2832 and cfg.T == 3.0 and cfg.nx == 64 and cfg.nt == 128
    assert cfg.delta == 0.01 and cfg.initial == "zero" and cfg.basis is None


def test_invalid_nx(tmp_path):
    with pytest.raises(ValidationError) as e:
        parse_config(write(tmp_path, MINIMAL.replace("nx=64", "nx=0")))
    assert any("nx" in p for p in e.value.problems)
    assert e.value.exit_code == 2


def test_duplicate_key_cites_both_lines(tmp_path):
    with pytest.raises(ParseError) as e:
        parse_config(write(tmp_path, MINIMAL + "# again\nnx=32\n"))
    assert ":7:" in str(e.value) and "line 4" in str(e.value)


def test_all_problems_listed():
    with pytest.raises(ValidationError) as e:
        parse_config_text("foo=1\nnx=abc\ninitial=wave\nT=-1\n")
    text = " ".join(e.value.problems)
    for word in ("foo", "nx", "initial", "L is required", "T=-1"):
        assert word in text


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        parse_config(tmp_path / "none.cfg")


def test_comments_and_blank_lines():
    cfg = parse_config_text("L = 7.5  # length\n\n   T=2\n")
    assert cfg.L == 7.5 and cfg.T == 2.0


configs = st.builds(
    ExperimentConfig,
    L=st.floats(0.5, 40), T=st.floats(0.1, 10), c=st.floats(-0.9, 5),
    nx=st.integers(8, 512), nt=st.integers(4, 512),
    basis=st.none() | st.integers(1, 200),
    initial=st.sampled_from(["zero", "constant:0.001", "gaussian:0.01,3,0.8", "normgauss:0.005,2.5,0.7"]),
    d=st.none() | st.floats(0, 0.009), delta=st.floats(1e-4, 1),
    epsilon=st.none() | st.floats(1e-4, 1),
)


@given(configs)
def test_config_round_trip(cfg):
    assert parse_config_text(cfg.to_text()) == cfg


def test_presets():
    x = np.linspace(0, 2 * math.pi, 65)
    assert not np.any(preset_state("zero", 2 * math.pi, 64))
    assert preset_state("constant:0.2", 2 * math.pi, 64) == pytest.approx(np.full(65, 0.2))
    g = preset_state("gaussian:0.3,3,0.5", 2 * math.pi, 64)
    assert g.max() == pytest.approx(0.3 * math.exp(-((x[np.argmax(g)] - 3) / 0.5) ** 2))
    n = preset_state("normgauss:0.005,3,0.5", 2 * math.pi, 64)
    assert l2_norm(n, 2 * math.pi / 64) == pytest.approx(0.005)


def test_json_format():
    text = _io.dumps({"b": 1.0, "a": [0.1, 2], "c": float("nan")})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text and '"nan"' in text
    assert _io.fmt(0.1) == "0.10000000000000001" and float(_io.fmt(1 / 3)) == 1 / 3


def test_critical_lengths_csv(capsys):
    assert main(["critical-lengths", "--c", "0", "--lmax", "7"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "length,branch,m,l"
    lengths = sorted({float(r.split(",")[0]) for r in lines[1:]})
    assert lengths == pytest.approx([math.pi, 2 * math.pi])


def test_critical_lengths_json(capsys):
    assert main(["critical-lengths", "--lmax", "4", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows == [{"branch": "OneIndex", "l": 0, "length": pytest.approx(math.pi), "m": 1}]


def test_gramian_domain_error(capsys):
    assert main(["gramian", "--L", "3", "--c", "-1"]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["code"] == "linear_control.domain"


def test_gramian_json(capsys):
    assert main(["gramian", "--L", "6.911503837897545", "--nx", "32", "--nt", "64", "--basis", "16", "--json"]) == 0
    s = json.loads(capsys.readouterr().out)
    assert len(s) > 0 and s == sorted(s, reverse=True)


def test_config_error_exit(tmp_path, capsys, out_dir):
    assert main(["simulate", "--config", str(write(tmp_path, "L=3\nL=4\nT=1\n"))]) == 2
    assert json.loads(capsys.readouterr().err)["error"]["code"] == "cli_io.parse"


def test_zero_return_plan(tmp_path, capsys, out_dir):
    p = write(tmp_path, MINIMAL + "d=0\n")
    assert main(["return-method", "--config", str(p)]) == 0
    report = json.loads((out_dir / next(out_dir.iterdir()).name / "report.json").read_text())
    diag = report["diagnostics"]
    assert diag["end_error"] == 0.0 and diag["audit"]["z_deviation"] == 0.0
    assert diag["audit"]["passed"] and report["status"] == "ok"
    assert parse_config_text(report["config_text"]) == parse_config(p)


def test_outputs_and_reproducibility(tmp_path, out_dir):
    cfg = parse_config_text(
        "L=6.911503837897545\nT=3\nnx=32\nnt=64\ninitial=normgauss:0.005,2.3,0.8\n"
        "target=normgauss:0.005,4.6,0.8\n"
    )
    first = run("return-method", cfg)
    assert first.status == "ok", first.error
    d = run_directory("return-method", cfg)
    names = sorted(p.name for p in d.iterdir())
    assert names == ["control.csv", "report.json", "timing.json", "trajectory.csv"]
    assert (d / "control.csv").read_text().splitlines()[0] == "t,h2"
    snapshot = {n: (d / n).read_bytes() for n in names if n != "timing.json"}
    run("return-method", cfg)
    assert snapshot == {n: (d / n).read_bytes() for n in snapshot}


def test_distinct_configs_distinct_dirs():
    a = parse_config_text(MINIMAL)
    b = parse_config_text(MINIMAL + "seed=1\n")
    assert run_directory("simulate", a) != run_directory("simulate", b)


def test_simulate_with_control_file(tmp_path, out_dir):
    t = np.linspace(0, 1, 11)
    ctrl = tmp_path / "h.csv"
    _io.write_csv(ctrl, ["t", "h2"], [t, 0.01 * np.sin(np.pi * t)])
    cfg = parse_config_text(f"L=6\nT=1\nnx=32\nnt=64\ninitial=gaussian:0.01,3,0.8\ncontrol={ctrl}\n")
    rep = run("simulate", cfg)
    assert rep.status == "ok"
    assert rep.diagnostics["zt_norm"] > 0 and rep.diagnostics["iterations"] >= 4
    lin = run("simulate", parse_config_text(f"L=6\nT=1\nnx=32\nnt=64\nmodel=linear\ncontrol={ctrl}\n"))
    assert lin.diagnostics["energy_defect"] < 1e-4


def test_steer_local(tmp_path, out_dir, capsys):
    p = write(tmp_path, "L=6.911503837897545\nT=3\nnx=32\nnt=96\ninitial=normgauss:0.005,2.3,0.8\ntarget=normgauss:0.005,4.6,0.8\n")
    assert main(["steer", "--mode", "local", "--config", str(p)]) == 0
    report = json.loads((next(out_dir.iterdir()) / "report.json").read_text())
    assert report["config"]["mode"] == "local"
    assert report["diagnostics"]["terminal_error"] < 1e-3
    assert report["diagnostics"]["audit_z_deviation"] < 1e-8


def test_steer_linear(tmp_path, out_dir):
    cfg = parse_config_text("L=6.911503837897545\nT=3\nnx=32\nnt=64\nbasis=16\ntarget=normgauss:0.01,3.4,1\n")
    rep = run("steer-linear", cfg)
    assert rep.status == "ok" and rep.diagnostics["rank"] >= 1
    assert "control.csv" in rep.outputs


def test_failure_still_writes_report(out_dir):
    cfg = parse_config_text("L=6.911503837897545\nT=3\nnx=32\nnt=64\nc=-1\n")
    rep = run("gramian", cfg)
    assert rep.exit_code == 3
    saved = json.loads((run_directory("gramian", cfg) / "report.json").read_text())
    assert saved["status"] == "error" and saved["error"]["code"] == "linear_control.domain"
