import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rescal.errors import DomainError
from rescal.manifolds import (FlatTorus2, ManifoldPoint, MappingTorus, Sphere2, as_array,
                              distance, mesh_size)

coord = st.floats(-50, 50, allow_nan=False)


def test_torus_wraps_to_fundamental_domain():
    T = FlatTorus2()
    p = ManifoldPoint(T, (2.5, -1.0))
    np.testing.assert_allclose(p.coords, (-1.5, 3.0))


def test_torus_distance_takes_shorter_way_round():
    T = FlatTorus2()
    a, b = T.point((-1.9, 0.1)), T.point((1.9, 3.9))
    assert distance(a, b) == pytest.approx(math.hypot(0.2, 0.2))


@given(coord, coord, coord, coord, coord, coord)
def test_torus_metric_axioms(x1, y1, x2, y2, x3, y3):
    T = FlatTorus2()
    a, b, c = (T.reduce(np.array(p)) for p in ((x1, y1), (x2, y2), (x3, y3)))
    dab, dba = T.distance_array(a, b), T.distance_array(b, a)
    assert dab == pytest.approx(dba)
    assert dab <= math.hypot(2, 2) + 1e-12
    assert dab <= T.distance_array(a, c) + T.distance_array(c, b) + 1e-9


def test_sphere_distance_is_the_angle():
    S = Sphere2()
    a = np.array([1.0, 0.0, 0.0])
    for ang in (0.0, 0.3, 1.2, math.pi):
        b = np.array([math.cos(ang), math.sin(ang), 0.0])
        assert S.distance_array(a, b) == pytest.approx(ang, abs=1e-12)


def test_sphere_rejects_origin():
    with pytest.raises(DomainError):
        Sphere2().reduce(np.zeros(3))


def test_mapping_torus_gluing_identifies_ends():
    M = MappingTorus()
    p = np.array([0.3, 0.45])
    top = M.reduce(np.array([p[0], p[1], 1.0]))
    glued = np.array([*M.apply(p), 0.0])
    np.testing.assert_allclose(top, glued, atol=1e-12)
    assert M.distance_array(np.array([*p, 0.999999]), glued) < 1e-5


@given(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True),
       st.floats(0, 1, exclude_max=True))
def test_mapping_torus_embedding_is_continuous_across_gluing(u, v, s):
    M = MappingTorus()
    x = np.array([u, v, s])
    y = M.reduce(x + np.array([0.0, 0.0, 1e-7]))
    assert M.distance_array(x, y) < 1e-5


def test_neighbor_pairs_match_brute_force(rng):
    for chart, pts in ((FlatTorus2(), FlatTorus2().reduce(rng.uniform(-2, 2, (200, 2)) * 2)),
                       (Sphere2(), Sphere2().reduce(rng.standard_normal((200, 3)))),
                       (MappingTorus(), rng.random((200, 3)))):
        f = chart.features(pts)
        r = 0.4
        i, j = chart.neighbor_pairs(f, f, r)
        D = chart.feature_distance(f[:, None], f[None, :])
        want = set(zip(*np.nonzero(D < r)))
        got = set(zip(i.tolist(), j.tolist()))
        assert want <= got
        assert all(D[a, b] < r * (1 + 1e-9) + 1e-12 for a, b in got)


def test_as_array_rejects_foreign_points():
    with pytest.raises(DomainError):
        as_array(Sphere2(), [FlatTorus2().point((0.0, 0.0))])


def test_mesh_size_of_grid(rng):
    T = FlatTorus2()
    g = T.grid(8)
    probes = T.reduce(rng.uniform(-2, 2, (500, 2)))
    # a square grid of spacing 0.5 has covering radius 0.5/sqrt(2)
    assert mesh_size(T, g, probes) <= 0.5 / math.sqrt(2) + 1e-12


def test_grids_have_expected_sizes():
    assert len(FlatTorus2().grid(5)) == 25
    assert len(Sphere2().grid(5)) == 25
    assert len(MappingTorus().grid(5)) == 125
    with pytest.raises(DomainError):
        FlatTorus2().grid(0)
