import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rescal.errors import DegenerateMeasureError, DomainError
from rescal.flows import builtin
from rescal.measure import (EmpiricalMeasure, binned_discrepancy, classical_measure_count,
                            measure_cover_grid, measure_from_points, measure_inequalities,
                            measure_spanning_count, sample_measure, sup_speed)


def test_measure_validation():
    ch = builtin("ConstantTorus").chart
    with pytest.raises(DegenerateMeasureError):
        EmpiricalMeasure(ch, np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DomainError):
        EmpiricalMeasure(ch, np.zeros((2, 2)), np.array([0.7, 0.7]))
    with pytest.raises(DomainError):
        EmpiricalMeasure(ch, np.zeros((2, 2)), np.array([1.0, 0.0]))


def test_singular_atoms_rejected_or_dropped():
    f = builtin("TorusItem4")
    with pytest.raises(DomainError):
        measure_from_points(f, [(0.0, 1.0), (1.5, 1.0)])
    mu = sample_measure(f, "UniformGrid", 64)
    assert np.all(f.speed(mu.atoms) > 0)
    assert mu.total == pytest.approx(1.0)


def test_grid_measure_is_exactly_uniform_on_bins():
    mu = sample_measure(builtin("LinearTorus"), "UniformGrid", 256)
    assert binned_discrepancy(mu, 4) == pytest.approx(0.0, abs=1e-12)


def test_winding_measure_equidistributes():
    mu = sample_measure(builtin("CatMapSuspension"), "UnstableWinding", 4096)
    assert len(mu) == 4096
    assert binned_discrepancy(mu, 4) < 0.1


def test_trajectory_push_measure():
    f = builtin("LinearTorus")
    mu = sample_measure(f, "TrajectoryPush", 500, base=(0.0, 0.0), horizon=200.0, step=0.05)
    assert len(mu) == 500 and binned_discrepancy(mu, 2) < 0.1
    with pytest.raises(DomainError):
        sample_measure(f, "Nope", 10)


@given(st.floats(0.05, 0.5), st.sampled_from([0.1, 0.3, 0.6]))
def test_mass_cover_leaves_less_than_delta(delta, eps):
    f = builtin("TorusItem4")
    mu = sample_measure(f, "UniformGrid", 100)
    rep = measure_spanning_count(f, mu, 1.0, eps, delta, step=0.05)
    assert rep.covered_mass > 1 - delta
    assert rep.count >= 1


def test_measure_counts_monotone_in_delta():
    f = builtin("SphereEnoUnperturbed")
    mu = sample_measure(f, "UniformGrid", 144)
    grid = measure_cover_grid(f, mu, [1.0, 2.0], [0.5, 1.0], [0.05, 0.2], step=0.05)
    for t in (1.0, 2.0):
        for e in (0.5, 1.0):
            assert grid[(t, e, 0.05)].count >= grid[(t, e, 0.2)].count


def test_constant_flow_classical_count_on_a_line():
    # 20 equal atoms on a circle of length 4, balls of radius 0.25 hold 3 atoms;
    # covering more than 80% of the mass needs ceil(17/3) = 6 balls
    f = builtin("ConstantTorus")
    mu = measure_from_points(f, np.column_stack([np.zeros(20), 0.2 * np.arange(20)]))
    assert classical_measure_count(f, mu, 1.0, 0.25, 0.2, step=0.1) == 6


def test_sup_speed():
    assert sup_speed(builtin("CatMapSuspension")) == pytest.approx(1.0)
    assert sup_speed(builtin("TorusItem4")) == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["TorusItem4", "SphereEno", "LinearTorus"])
def test_cellwise_inequalities_small(name):
    f = builtin(name)
    mu = sample_measure(f, "UniformGrid", 100)
    rows = measure_inequalities(f, mu, [1.0, 2.0], [0.2, 0.4], [0.1, 0.2], step=0.05)
    assert rows and all(r["item2_ok"] and r["short_ok"] for r in rows)
