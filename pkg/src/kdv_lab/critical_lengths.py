"""Critical lengths of the linearized Neumann KdV system.

For a constant state c > -1 the set of critical lengths is the union of

    TwoIndex:  2*pi*sqrt(m^2 + m*l + l^2) / sqrt(3*(c+1)),   m, l >= 1
    OneIndex:  m*pi / sqrt(c+1),                             m >= 1

A length L that is critical for c stops being critical for drifts d close
to c.  ``perturbation_analysis`` computes how close, exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import DomainError, NotCriticalError

MODULE = "critical_lengths"
DEFAULT_TOL = 1e-9


class Branch(enum.Enum):
    TWO_INDEX = "TwoIndex"
    ONE_INDEX = "OneIndex"


class Case(enum.Enum):
    TWO_INDEX_CASE = "TwoIndexCase"
    ONE_INDEX_CASE = "OneIndexCase"


@dataclass(frozen=True)
class CriticalGenerator:
    branch: Branch
    m: int
    l: int = 0

    def __post_init__(self):
        if self.m < 1 or (self.branch is Branch.TWO_INDEX and self.l < 1):
            raise DomainError(f"invalid generator indices m={self.m}, l={self.l}", MODULE)

    @property
    def form(self) -> int:
        """Integer under the square root (m^2+ml+l^2 or m^2)."""
        if self.branch is Branch.TWO_INDEX:
            return self.m * self.m + self.m * self.l + self.l * self.l
        return self.m * self.m

    def value(self, c: float = 0.0) -> float:
        _check_drift(c)
        if self.branch is Branch.TWO_INDEX:
            return 2.0 * math.pi * math.sqrt(self.form) / math.sqrt(3.0 * (c + 1.0))
        return self.m * math.pi / math.sqrt(c + 1.0)

    def sort_key(self):
        return (self.branch is Branch.ONE_INDEX, self.m, self.l)

    def __str__(self):
        if self.branch is Branch.TWO_INDEX:
            return f"TwoIndex(m={self.m}, l={self.l})"
        return f"OneIndex(m={self.m})"


@dataclass(frozen=True)
class CriticalSet:
    c: float
    l_max: float
    members: tuple  # ((length, (CriticalGenerator, ...)), ...)

    @property
    def lengths(self) -> list[float]:
        return [length for length, _ in self.members]

    def rows(self):
        """Flat (length, branch, m, l) rows, one per generator."""
        for length, gens in self.members:
            for g in gens:
                yield length, g.branch.value, g.m, g.l


@dataclass(frozen=True)
class PerturbationAnalysis:
    c: float
    L: float
    case: Case
    base_generator: CriticalGenerator
    separation: float
    epsilon_c: float
    nearest: float  # the element of A u B (other than c) closest to c


def _check_drift(c):
    if not math.isfinite(c) or c <= -1.0:
        raise DomainError(f"drift c={c} must satisfy c > -1", MODULE)


def _same_length(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def enumerate_critical(c: float, l_max: float, merge_tol: float = DEFAULT_TOL) -> CriticalSet:
    """All critical lengths in (0, l_max] for the drift c."""
    _check_drift(c)
    if not l_max > 0:
        raise DomainError(f"l_max={l_max} must be positive", MODULE)
    s = math.sqrt(c + 1.0)
    found = []
    m_two = int(math.ceil(l_max * math.sqrt(3.0 * (c + 1.0)) / (2.0 * math.pi))) + 1
    for m in range(1, m_two + 1):
        for l in range(1, m_two + 1):
            g = CriticalGenerator(Branch.TWO_INDEX, m, l)
            v = g.value(c)
            if v <= l_max:
                found.append((v, g))
    m_one = int(math.ceil(l_max * s / math.pi)) + 1
    for m in range(1, m_one + 1):
        g = CriticalGenerator(Branch.ONE_INDEX, m)
        v = g.value(c)
        if v <= l_max:
            found.append((v, g))
    found.sort(key=lambda p: p[0])

    members = []
    for v, g in found:
        if members and _same_length(v, members[-1][0], merge_tol):
            members[-1][1].append(g)
        else:
            members.append((v, [g]))
    members = tuple((v, tuple(sorted(gs, key=CriticalGenerator.sort_key))) for v, gs in members)
    return CriticalSet(c=c, l_max=l_max, members=members)


def _two_index_witness(n: int):
    """Some (m, l) with m^2+ml+l^2 = n, m <= l, or None."""
    m = 1
    while 3 * m * m <= n:
        disc = 4 * n - 3 * m * m
        r = math.isqrt(disc)
        if r * r == disc and (r - m) % 2 == 0:
            l = (r - m) // 2
            if l >= m:
                return m, l
        m += 1
    return None


def is_critical(L: float, c: float = 0.0, tol: float = DEFAULT_TOL):
    """Return (True, witness) if some critical length lies within tol of L.

    The test works on the integer forms: 3(c+1)L^2/(4 pi^2) must sit near a
    number m^2+ml+l^2, or (c+1)L^2/pi^2 near a perfect square.  Only the
    integers compatible with [L - tol, L + tol] are examined.
    """
    _check_drift(c)
    if not L > 0:
        raise DomainError(f"length L={L} must be positive", MODULE)
    if tol < 0:
        raise DomainError("tol must be non-negative", MODULE)
    lo, hi = max(L - tol, 0.0), L + tol
    k2 = 3.0 * (c + 1.0) / (4.0 * math.pi ** 2)
    for n in range(max(3, math.ceil(k2 * lo * lo - 1e-9)), math.floor(k2 * hi * hi + 1e-9) + 1):
        w = _two_index_witness(n)
        if w is not None:
            g = CriticalGenerator(Branch.TWO_INDEX, *w)
            if abs(g.value(c) - L) <= tol:
                return True, g
    k1 = (c + 1.0) / math.pi ** 2
    for m in range(max(1, math.ceil(math.sqrt(k1) * lo - 1e-9)), math.floor(math.sqrt(k1) * hi + 1e-9) + 1):
        g = CriticalGenerator(Branch.ONE_INDEX, m)
        if abs(g.value(c) - L) <= tol:
            return True, g
    return False, None


def perturbation_elements(c: float, base: CriticalGenerator, q_max: int):
    """Elements of the sets A and B (drifts d with L critical for d).

    With Q the integer form of the base generator, the TwoIndex case gives
    A1 = (c+1) n / Q - 1 and B1 = 3 m^2 (c+1) / (4Q) - 1, the OneIndex case
    A2 = (c+1) n / (3 m0^2) - 1 and B2 = (c+1) m^2 / m0^2 - 1, where n runs
    over the numbers m^2+ml+l^2.  Only n <= q_max (in units of the A form)
    are listed.  Returns two sorted lists (A, B).
    """
    Q = base.form
    A, B = set(), set()
    if base.branch is Branch.TWO_INDEX:
        a_den, b_num, b_den = Q, 3, 4 * Q
    else:
        a_den, b_num, b_den = 3 * Q, 1, Q
    for m in range(1, math.isqrt(q_max) + 2):
        for l in range(1, math.isqrt(q_max) + 2):
            n = m * m + m * l + l * l
            if n <= q_max:
                A.add((c + 1.0) * n / a_den - 1.0)
    # B elements comparable in size with A elements up to q_max
    m_b = math.isqrt(int(q_max * b_den / (a_den * b_num)) + 1) + 1
    for m in range(1, m_b + 1):
        B.add((c + 1.0) * b_num * m * m / b_den - 1.0)
    return sorted(A), sorted(B)


def perturbation_analysis(L: float, c: float = 0.0, tol: float = DEFAULT_TOL) -> PerturbationAnalysis:
    ok, base = is_critical(L, c, tol)
    if not ok:
        raise NotCriticalError(f"L={L} is not critical for c={c}", MODULE)
    Q = base.form
    if base.branch is Branch.TWO_INDEX:
        case = Case.TWO_INDEX_CASE
        separation = (c + 1.0) / (4.0 * Q)
        a_den = Q
    else:
        case = Case.ONE_INDEX_CASE
        separation = (c + 1.0) / (3.0 * Q)
        a_den = 3 * Q
    # c itself corresponds to n = a_den in A; the window 4*a_den + 12 is
    # wide enough to contain the next element above c (some 3k^2 lies there)
    A, B = perturbation_elements(c, base, 4 * a_den + 12)
    same = 1e-12 * max(1.0, abs(c))
    others = [v for v in A + B if abs(v - c) > same]
    nearest = min(others, key=lambda v: abs(v - c))
    eps = min(abs(nearest - c), c + 1.0)
    return PerturbationAnalysis(
        c=c, L=L, case=case, base_generator=base,
        separation=separation, epsilon_c=eps, nearest=nearest,
    )


def safe_drift(L: float, c: float = 0.0, preference: float = 0.5) -> float:
    """A drift d = c + preference*epsilon_c for which L is not critical."""
    if not 0.0 < preference < 1.0:
        raise DomainError(f"preference={preference} must lie in (0, 1)", MODULE)
    pa = perturbation_analysis(L, c)
    d = c + preference * pa.epsilon_c
    if is_critical(L, d)[0]:
        raise DomainError(
            f"preference={preference} leaves d={d} within tolerance of a critical drift", MODULE
        )
    return d
