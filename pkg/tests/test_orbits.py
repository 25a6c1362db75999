import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rescal.errors import DomainError, InsufficientDataError
from rescal.orbits import (fixed_point_count, fixed_point_denominator, growth_rate,
                           lattice_fixed_points, mobius, orbit_census)

CAT = [[2, 1], [1, 1]]
LAM = (3 + math.sqrt(5)) / 2


def test_fixed_points_match_lucas_formula():
    # |det(A^n - I)| = lam^n + lam^-n - 2 for the cat map
    for n in range(1, 15):
        assert fixed_point_count(CAT, n) == round(LAM ** n + LAM ** -n - 2)


def test_fixed_points_small_table():
    assert [fixed_point_count(CAT, n) for n in range(1, 7)] == [1, 5, 16, 45, 121, 320]


def test_lattice_enumeration_agrees_for_small_periods():
    for n in range(1, 7):
        q = fixed_point_denominator(CAT, n)
        assert q <= 40
        assert lattice_fixed_points(CAT, n, q_max=40) == fixed_point_count(CAT, n)
    # denominators up to 30 miss most fixed points of A^6
    assert lattice_fixed_points(CAT, 6, q_max=30) < 320


def test_mobius_values():
    assert [mobius(n) for n in range(1, 13)] == [1, -1, -1, 0, -1, 1, -1, 0, 0, 1, -1, 0]
    with pytest.raises(DomainError):
        mobius(0)


@given(st.integers(1, 200))
def test_mobius_sums_to_zero_over_divisors(n):
    s = sum(mobius(d) for d in range(1, n + 1) if n % d == 0)
    assert s == (1 if n == 1 else 0)


def test_census_values():
    c = orbit_census(CAT, 6)
    assert [c.orbits(n) for n in range(1, 7)] == [1, 2, 5, 10, 24, 50]
    assert [c.v(t) for t in (1, 2, 3, 2.5)] == [1, 3, 8, 3]
    # every periodic point is counted once in its orbit
    for n in range(1, 7):
        assert sum(d * c.orbits(d) for d in range(1, n + 1) if n % d == 0) == \
            fixed_point_count(CAT, n)


def test_window_counts():
    c = orbit_census(CAT, 8)
    # period-2 window holds the two 2-orbits and the fixed point (period 1 divides 2)
    assert c.v_window(2, 0.125) == 3
    assert c.v_window(3, 0.25) == 1 + 5
    with pytest.raises(DomainError):
        c.v_window(8, 0.5)


def test_growth_rate_of_cat_map():
    c = orbit_census(CAT, 14)
    assert growth_rate(c) == pytest.approx(math.log(LAM), rel=0.05)
    # a plain slope of log v over a finite window is biased low
    assert growth_rate(c, log_correction=False) < growth_rate(c)


@given(st.floats(0.1, 2.0))
def test_growth_rate_exact_on_pure_exponentials(h):
    table = [(t, math.exp(h * t)) for t in range(1, 15)]
    assert growth_rate(table) == pytest.approx(h, rel=1e-9)
    assert growth_rate(table, log_correction=False) == pytest.approx(h, rel=1e-9)


def test_growth_rate_of_constant_table_is_zero():
    assert growth_rate([(t, 7) for t in range(1, 13)]) == pytest.approx(0.0, abs=1e-9)


def test_growth_rate_needs_long_tables():
    with pytest.raises(InsufficientDataError):
        growth_rate(orbit_census(CAT, 5))


@pytest.mark.parametrize("A", [[[1, 1], [0, 1]], [[1, 0], [0, 1]], [[2, 0], [0, 1]], [[0.5, 1], [1, 1]]])
def test_non_hyperbolic_matrices_rejected(A):
    with pytest.raises(DomainError):
        orbit_census(A, 5)


def test_other_hyperbolic_matrix():
    A = [[3, 1], [2, 1]]
    lam = max(abs(np.linalg.eigvals(np.array(A, float))))
    c = orbit_census(A, 14)
    assert growth_rate(c) == pytest.approx(math.log(lam), rel=0.05)
