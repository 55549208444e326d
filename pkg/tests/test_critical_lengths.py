import math
from itertools import combinations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kdv_lab.critical_lengths import (
    Branch,
    Case,
    CriticalGenerator,
    enumerate_critical,
    is_critical,
    perturbation_analysis,
    perturbation_elements,
    safe_drift,
)
from kdv_lab.errors import DomainError, NotCriticalError

PI = math.pi


def brute_force(c, l_max, bound=None):
    """Sorted distinct critical lengths by direct double loop."""
    if bound is None:
        bound = math.ceil(l_max * math.sqrt(3 * (c + 1)) / (2 * PI)) + 1
    vals = []
    for m in range(1, bound + 1):
        for l in range(1, bound + 1):
            v = 2 * PI * math.sqrt(m * m + m * l + l * l) / math.sqrt(3 * (c + 1))
            if v <= l_max:
                vals.append(v)
        v = m * PI / math.sqrt(c + 1)
        if v <= l_max:
            vals.append(v)
    for m in range(bound + 1, 4 * bound + 4):
        v = m * PI / math.sqrt(c + 1)
        if v <= l_max:
            vals.append(v)
    vals.sort()
    out = []
    for v in vals:
        if not out or abs(v - out[-1]) > 1e-9 * max(1.0, v):
            out.append(v)
    return out


def test_small_sets_match_oracle():
    cs = enumerate_critical(0.0, 7.0)
    assert cs.lengths == pytest.approx(brute_force(0.0, 7.0, 10))
    assert cs.lengths == pytest.approx([PI, 2 * PI])
    gens_2pi = dict(cs.members)[cs.lengths[1]]
    assert CriticalGenerator(Branch.TWO_INDEX, 1, 1) in gens_2pi
    assert CriticalGenerator(Branch.ONE_INDEX, 2) in gens_2pi
    assert dict(cs.members)[cs.lengths[0]] == (CriticalGenerator(Branch.ONE_INDEX, 1),)
    assert enumerate_critical(0.0, 3.5).lengths == pytest.approx([PI])


def test_drift_three():
    cs = enumerate_critical(3.0, 4.0)
    assert cs.lengths == pytest.approx([PI / 2, PI])
    assert CriticalGenerator(Branch.TWO_INDEX, 1, 1) in dict(cs.members)[cs.lengths[1]]


def test_rows_are_flat():
    rows = list(enumerate_critical(0.0, 7.0).rows())
    assert rows[0] == (pytest.approx(PI), "OneIndex", 1, 0)
    assert {(r[1], r[2], r[3]) for r in rows[1:]} == {("TwoIndex", 1, 1), ("OneIndex", 2, 0)}


@pytest.mark.parametrize("c", [0.0, 0.5, 3.0])
@pytest.mark.parametrize("l_max", [1.0, 10.0, 27.3, 50.0])
def test_oracle_equivalence(c, l_max):
    assert enumerate_critical(c, l_max).lengths == pytest.approx(brute_force(c, l_max), rel=1e-12)


@given(st.sampled_from([0.0, 0.5, 3.0]), st.floats(1.0, 50.0), st.floats(0.0, 20.0))
def test_monotone_in_lmax(c, l1, extra):
    small = set(enumerate_critical(c, l1).lengths)
    big = set(enumerate_critical(c, l1 + extra).lengths)
    assert small <= big


def test_is_critical_examples():
    ok, g = is_critical(2 * PI, 0.0, 1e-12)
    assert ok and g == CriticalGenerator(Branch.TWO_INDEX, 1, 1)
    ok, g = is_critical(PI, 0.0, 1e-12)
    assert ok and g == CriticalGenerator(Branch.ONE_INDEX, 1)
    assert is_critical(1.0, 0.0) == (False, None)
    assert not is_critical(2.2 * PI, 0.0)[0]


@given(st.sampled_from([0.0, 0.5, 3.0]), st.integers(0, 60))
def test_is_critical_agrees_with_enumeration(c, idx):
    lengths = enumerate_critical(c, 40.0).lengths
    L = lengths[idx % len(lengths)]
    assert is_critical(L, c)[0]
    assert not is_critical(L + 1e-4, c)[0]


def test_bad_drift_rejected():
    for c in (-1.0, -2.0, math.nan):
        with pytest.raises(DomainError):
            enumerate_critical(c, 10.0)
        with pytest.raises(DomainError):
            is_critical(PI, c)


def test_perturbation_examples():
    pa = perturbation_analysis(2 * PI, 0.0)
    assert pa.case is Case.TWO_INDEX_CASE
    assert pa.separation == pytest.approx(1 / 12)
    pa = perturbation_analysis(PI, 0.0)
    assert pa.case is Case.ONE_INDEX_CASE
    assert pa.separation == pytest.approx(1 / 3)


def test_epsilon_is_nearest_other_element():
    # A1 = n/3 - 1 over n = m^2+ml+l^2, B1 = m^2/4 - 1: nearest to 0 is -3/4
    pa = perturbation_analysis(2 * PI, 0.0)
    assert pa.nearest == pytest.approx(-0.75)
    assert pa.epsilon_c == pytest.approx(0.75)
    # A2 = n/3 - 1, B2 = m^2 - 1: nearest is 4/3, capped at c + 1 = 1
    pa = perturbation_analysis(PI, 0.0)
    assert pa.nearest == pytest.approx(4 / 3)
    assert pa.epsilon_c == pytest.approx(1.0)


def test_not_critical_raises():
    with pytest.raises(NotCriticalError):
        perturbation_analysis(2.2 * PI, 0.0)


@pytest.mark.parametrize("L, gen, bound", [
    (2 * PI, CriticalGenerator(Branch.TWO_INDEX, 1, 1), 1 / 12),
    (PI, CriticalGenerator(Branch.ONE_INDEX, 1), 1 / 3),
    (2 * PI * math.sqrt(7 / 3), CriticalGenerator(Branch.TWO_INDEX, 1, 2), 1 / 28),
])
def test_separation_bound(L, gen, bound):
    A, B = perturbation_elements(0.0, gen, 60)
    elems = sorted(set(A) | set(B))[:20]
    distinct = [v for i, v in enumerate(elems) if i == 0 or v - elems[i - 1] > 1e-12]
    assert min(b - a for a, b in combinations(distinct, 2)) >= bound - 1e-12


def test_drift_elements_make_length_critical():
    base = CriticalGenerator(Branch.TWO_INDEX, 1, 1)
    A, B = perturbation_elements(0.0, base, 30)
    for d in A + B:
        if d > -1:
            assert is_critical(2 * PI, d, 1e-9)[0]


def test_safe_drift_examples():
    d = safe_drift(2 * PI, 0.0, 0.5)
    assert d == pytest.approx(0.375)
    assert not is_critical(2 * PI, d)[0]
    d = safe_drift(PI, 0.0, 0.5)
    assert 0 < d < 1 and not is_critical(PI, d)[0]
    for p in (0.0, 1.0, -0.1):
        with pytest.raises(DomainError):
            safe_drift(2 * PI, 0.0, p)


@given(st.floats(0.01, 0.99), st.sampled_from([(2 * PI, 0.0), (PI, 0.0), (PI, 3.0), (2 * PI * math.sqrt(7 / 3), 0.0)]))
def test_safe_drift_never_critical(p, case):
    L, c = case
    assert is_critical(L, c)[0]
    d = safe_drift(L, c, p)
    assert not is_critical(L, d)[0]
    assert d != c
