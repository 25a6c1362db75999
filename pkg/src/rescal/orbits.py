"""Periodic-orbit census for the suspension of a hyperbolic toral automorphism.

With roof 1, closed orbits of the suspension of period ``n`` are the
``A``-orbits of least period ``n``.  Their number follows from the fixed
point counts ``|det(A^n - I)|`` by Moebius inversion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InsufficientDataError


def _validate(A):
    M = np.asarray(A)
    if M.shape != (2, 2) or not np.all(M == np.round(M)):
        raise DomainError("A must be an integer 2x2 matrix")
    a, b, c, d = (int(x) for x in M.ravel())
    if abs(a * d - b * c) != 1:
        raise DomainError("A must have |det A| = 1")
    if abs(a + d) <= 2:
        raise DomainError(f"A is not hyperbolic (|trace| = {abs(a + d)} <= 2)")
    return a, b, c, d


def _matpow(m, n):
    """Exact integer power of a 2x2 matrix given as a 4-tuple."""
    r = (1, 0, 0, 1)
    while n:
        if n & 1:
            r = (r[0] * m[0] + r[1] * m[2], r[0] * m[1] + r[1] * m[3],
                 r[2] * m[0] + r[3] * m[2], r[2] * m[1] + r[3] * m[3])
        m = (m[0] * m[0] + m[1] * m[2], m[0] * m[1] + m[1] * m[3],
             m[2] * m[0] + m[3] * m[2], m[2] * m[1] + m[3] * m[3])
        n >>= 1
    return r


def fixed_point_count(A, n: int) -> int:
    """Number of fixed points of ``A^n`` on the torus, ``|det(A^n - I)|``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    m = _matpow(_validate(A), n)
    return abs((m[0] - 1) * (m[3] - 1) - m[1] * m[2])


def lattice_fixed_points(A, n: int, q_max: int = 30) -> int:
    """Brute-force count of rational points ``(a/q, b/q)``, ``q <= q_max``, fixed by ``A^n``.

    Each point is counted once, at its exact denominator.  This equals
    :func:`fixed_point_count` only when every fixed point has denominator at
    most ``q_max``.
    """
    m = _matpow(_validate(A), n)
    total = 0
    for q in range(1, q_max + 1):
        a, b = np.meshgrid(np.arange(q), np.arange(q), indexing="ij")
        a, b = a.ravel(), b.ravel()
        exact = np.gcd(np.gcd(a, b), q) == 1
        fa = (m[0] % q * a + m[1] % q * b - a) % q == 0
        fb = (m[2] % q * a + m[3] % q * b - b) % q == 0
        total += int(np.count_nonzero(exact & fa & fb))
    return total


def fixed_point_denominator(A, n: int) -> int:
    """Largest denominator among fixed points of ``A^n`` (exponent of the fixed-point group)."""
    m = _matpow(_validate(A), n)
    e = (m[0] - 1, m[1], m[2], m[3] - 1)
    g = math.gcd(math.gcd(e[0], e[1]), math.gcd(e[2], e[3]))
    return abs(e[0] * e[3] - e[1] * e[2]) // g


def mobius(n: int) -> int:
    if n < 1:
        raise DomainError("mobius is defined for n >= 1")
    result, p = 1, 2
    while p * p <= n:
        if n % p == 0:
            n //= p
            if n % p == 0:
                return 0
            result = -result
        p += 1
    return -result if n > 1 else result


@dataclass(frozen=True)
class OrbitCensus:
    per_period: list  # (n, fixed points of A^n, orbits of least period n)
    v_table: list  # (t, v(t)) at integer t
    matrix: tuple = field(default=((2, 1), (1, 1)))

    def orbits(self, n: int) -> int:
        for k, _, o in self.per_period:
            if k == n:
                return o
        return 0

    def v(self, t: float) -> int:
        """Closed orbits with period <= t."""
        return sum(o for n, _, o in self.per_period if n <= t + 1e-12)

    def v_window(self, t: float, beta: float) -> int:
        """Closed orbits having a period in ``[t - beta, t + beta]``.

        An orbit of least period ``d`` has every multiple of ``d`` as a period,
        so it counts when some multiple lands in the window.
        """
        lo, hi = t - beta - 1e-12, t + beta + 1e-12
        if hi > self.t_max + 1e-9:
            raise DomainError(f"window [{t - beta}, {t + beta}] exceeds the census range")
        periods = [m for m in range(max(1, math.ceil(lo)), math.floor(hi) + 1)]
        return sum(o for d, _, o in self.per_period if any(m % d == 0 for m in periods))

    @property
    def t_max(self):
        return self.v_table[-1][0] if self.v_table else 0


def orbit_census(A, t_max: float) -> OrbitCensus:
    """Orbit counts for periods ``1..floor(t_max)`` by Moebius inversion."""
    _validate(A)
    if t_max < 1:
        raise DomainError("t_max must be >= 1")
    N = int(math.floor(t_max + 1e-12))
    fix = {n: fixed_point_count(A, n) for n in range(1, N + 1)}
    per, v_table, acc = [], [], 0
    for n in range(1, N + 1):
        s = sum(mobius(n // d) * fix[d] for d in range(1, n + 1) if n % d == 0)
        if s % n:
            raise ArithmeticError(f"Moebius sum {s} not divisible by {n}")
        per.append((n, fix[n], s // n))
        acc += s // n
        v_table.append((n, acc))
    return OrbitCensus(per, v_table, tuple(tuple(int(x) for x in r) for r in np.asarray(A)))


def growth_rate(census, log_correction: bool = True, min_t_max: float = 8.0) -> float:
    """Exponential growth rate of ``v(t)`` from the top half of the table.

    Orbit counts grow like ``e^{ht} / t``, so a plain log-slope over a finite
    window is biased low by about ``1/t``.  With ``log_correction`` the fit is
    ``log v = h t - a log t + c`` and ``h`` is returned; pure exponentials and
    constants are recovered exactly either way.  ``census`` is an
    :class:`OrbitCensus` or a list of ``(t, v)``.
    """
    table = census.v_table if hasattr(census, "v_table") else list(census)
    if not table:
        raise InsufficientDataError("empty v table")
    t = np.array([r[0] for r in table], dtype=float)
    v = np.array([r[1] for r in table], dtype=float)
    if t.max() < min_t_max:
        raise InsufficientDataError(f"need t_max >= {min_t_max}, got {t.max()}")
    if np.any(v < 1):
        keep = v >= 1
        t, v = t[keep], v[keep]
    top = t >= np.median(t)
    t, y = t[top], np.log(v[top])
    if len(t) < (3 if log_correction else 2):
        raise InsufficientDataError("too few table rows in the top half")
    cols = [t, np.log(t), np.ones_like(t)] if log_correction else [t, np.ones_like(t)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)
    return float(coef[0])


@dataclass
class GrowthBoundReport:
    growth: float
    e_star: float
    tolerance: float
    passed: bool
    window_checks: list  # (alpha, t, v_{alpha/2}(t), S*(t, alpha, K), ok)

    @property
    def windows_ok(self):
        return all(r[-1] for r in self.window_checks)


def check_growth_bound(flow, census: OrbitCensus, e_star, tolerance: float = 0.15,
                       alphas=(0.25, 0.5), ts=(2, 3, 4, 5, 6, 7, 8), K=None,
                       step=0.05, record_every=0.05, report=False):
    """``growth_rate(census) <= e* + tolerance`` plus the window inequality
    ``v_{alpha/2}(t) <= S*(t, alpha, K)`` for each ``alpha`` and ``t``.

    ``e_star`` is an :class:`EntropyEstimate` or a number.  ``K`` defaults to a
    dense grid of the mapping torus (the flow is nonsingular, so ``M_delta``
    is all of ``M`` for small ``delta``).  Returns a bool, or the full
    :class:`GrowthBoundReport` when ``report`` is set.
    """
    from .estimators import make_sample, pack_grid

    if not flow.nonsingular:
        raise DomainError("check_growth_bound needs a nonsingular flow")
    e = float(getattr(e_star, "extrapolated", e_star))
    g = growth_rate(census)
    checks = []
    if alphas and ts:
        pts = flow.chart.grid(12) if K is None else K
        S = make_sample(flow, pts, max(ts), step, record_every)
        grid = pack_grid(S, ts, alphas, rescaled=True)
        for a in sorted(alphas):
            for t in sorted(ts):
                lhs = census.v_window(t, a / 2)
                rhs = grid[(float(t), float(a))].count
                checks.append((a, t, lhs, rhs, lhs <= rhs))
    passed = g <= e + tolerance and all(c[-1] for c in checks)
    rep = GrowthBoundReport(g, e, tolerance, passed, checks)
    return rep if report else passed
