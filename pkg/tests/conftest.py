import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("lab", max_examples=25, deadline=None)
settings.load_profile("lab")

ACCEPTANCE = {}


def gaussian(x, center, width, norm):
    """Gaussian bump scaled to the given trapezoid L2 norm."""
    g = np.exp(-(((x - center) / width) ** 2))
    w = np.full(len(x), x[1] - x[0])
    w[[0, -1]] /= 2
    return norm * g / np.sqrt(w @ (g * g))


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("KDV_LAB_OUT", str(tmp_path / "runs"))
    return tmp_path / "runs"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
