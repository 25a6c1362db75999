import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from rescal.errors import DomainError, InfeasibleCoverError, InsufficientDataError
from rescal.estimators import (AffineChart, EntropyConfig, SeparatingFamily, cover_grid,
                               entropy_slope, exact_min_cover, greedy_packing, greedy_set_cover,
                               grid_spanning_set, lattice_count, make_sample, pack_grid,
                               positivity_certificate, probe_set, separating_count,
                               spanning_count)
from rescal.flows import builtin

membership = st.integers(1, 12).flatmap(
    lambda nt: st.integers(1, 10).flatmap(
        lambda nc: st.lists(st.lists(st.booleans(), min_size=nt, max_size=nt),
                            min_size=nc, max_size=nc)))


@given(membership)
def test_greedy_cover_within_log_factor_of_optimum(rows):
    M = np.array(rows, dtype=bool)
    M = np.vstack([M, np.eye(M.shape[1], dtype=bool)])  # keep it feasible
    chosen, _, missing = greedy_set_cover(sparse.csr_matrix(M))
    assert len(missing) == 0
    assert M[chosen].any(axis=0).all()
    opt = exact_min_cover(M)
    assert len(chosen) <= (1 + math.log(12)) * opt


def test_greedy_cover_reports_uncoverable_targets():
    M = sparse.csr_matrix(np.array([[1, 0, 0], [1, 1, 0]], dtype=bool))
    chosen, _, missing = greedy_set_cover(M)
    assert list(missing) == [2]
    with pytest.raises(InfeasibleCoverError):
        exact_min_cover(M.toarray())


def test_greedy_cover_ties_go_to_lowest_index():
    M = sparse.csr_matrix(np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]], dtype=bool))
    chosen, _, _ = greedy_set_cover(M)
    assert chosen == [0, 2]


def test_weighted_cover_stops_at_goal():
    M = sparse.csr_matrix(np.eye(4, dtype=bool))
    chosen, covered, _ = greedy_set_cover(M, weights=[0.4, 0.3, 0.2, 0.1], goal=0.65)
    assert chosen == [0, 1] and covered == pytest.approx(0.7)


@given(st.integers(2, 30), st.integers(0, 1000))
def test_greedy_packing_is_maximal_independent(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((n, n)) < 0.2
    A = np.triu(A, 1)
    A = A | A.T
    kept = greedy_packing(n, sparse.csr_matrix(A))
    assert not A[np.ix_(kept, kept)].any()
    others = set(range(n)) - set(kept)
    assert all(A[i, kept].any() for i in others)


def test_lattice_count_formula():
    # integers l with |l delta| < 2
    for delta, d in ((0.5, 2), (0.3, 3), (2.0, 1), (0.7, 2)):
        m = sum(1 for l in range(-100, 101) if abs(l * delta) < 2)
        assert lattice_count(delta, d) == m ** d
        assert lattice_count(delta, d) <= (5 / delta) ** d


def test_constant_flow_counts_do_not_grow():
    # d_t = d for a translation flow, so spanning counts are t-independent
    f = builtin("ConstantTorus")
    S = make_sample(f, f.chart.grid(12), 6.0, 0.1, 0.5)
    grid = cover_grid(S, S, [1.0, 3.0, 6.0], [0.5, 1.0], rescaled=False)
    for e in (0.5, 1.0):
        assert len({grid[(t, e)].count for t in (1.0, 3.0, 6.0)}) == 1


def test_spanning_count_exact_on_a_line():
    # 20 evenly spaced points on a circle of length 4, spacing 0.2; a ball of
    # radius 0.25 around a point holds it and its two neighbours
    f = builtin("ConstantTorus")
    K = np.column_stack([np.zeros(20), 0.2 * np.arange(20)])
    rep = spanning_count(f, K, 1.0, 0.25, rescaled=False)
    assert rep.count == 7
    assert rep.count <= (1 + math.log(12)) * math.ceil(20 / 3)


def test_rescaled_candidates_must_avoid_singularities():
    f = builtin("TorusItem4")
    with pytest.raises(Exception):
        spanning_count(f, [(0.1, 0.0)], 1.0, 0.1, True, candidates=[(0.0, 0.0)])


@given(st.integers(0, 500))
def test_counts_monotone_on_grid(seed):
    rng = np.random.default_rng(seed)
    f = builtin("TorusItem4")
    pts = f.chart.reduce(rng.uniform(-2, 2, (60, 2)))
    pts = pts[f.speed(pts) > 0.05]
    S = make_sample(f, pts, 3.0, 0.05, 0.1)
    ts, epss = [1.0, 2.0, 3.0], [0.1, 0.3, 0.6]
    R = cover_grid(S, S, ts, epss, True)
    P = pack_grid(S, ts, epss, True)
    for grid in (R, P):
        for a, b in zip(ts, ts[1:]):
            for e in epss:
                assert grid[(a, e)].count <= grid[(b, e)].count
        for t in ts:
            for e1, e2 in zip(epss, epss[1:]):
                assert grid[(t, e1)].count >= grid[(t, e2)].count


def test_separating_set_is_separated():
    f = builtin("TorusItem4")
    K = probe_set(f, 64)
    rep = separating_count(f, K, 3.0, 0.5, step=0.01, record_every=0.1)
    from rescal.flows import integrate_many
    from rescal.metrics import pairwise_matrix
    b = integrate_many(f, rep.witnesses, 3.0, 0.01, 0.1)
    D = pairwise_matrix(b, 3.0, True)
    np.fill_diagonal(D, np.inf)
    assert np.minimum(D, D.T).min() >= 0.5


def test_entropy_slope_recovers_exponential():
    counts = [(t, e, int(round(3 * 2 ** t))) for t in range(2, 10) for e in (0.2, 0.1)]
    est = entropy_slope(counts)
    assert est.extrapolated == pytest.approx(math.log(2), rel=0.01)
    assert est.slope_at(0.2) == pytest.approx(math.log(2), rel=0.01)


def test_entropy_slope_caps_and_errors():
    counts = [(t, 0.1, min(2 ** t, 100)) for t in range(1, 10)]
    est = entropy_slope(counts, caps={0.1: 100})
    assert est.extrapolated == pytest.approx(math.log(2), rel=0.01)
    with pytest.raises(InsufficientDataError):
        entropy_slope([(1, 0.1, 2), (2, 0.1, 4)])
    with pytest.raises(DomainError):
        entropy_slope([(1, 0.1, 0)])


def test_entropy_config_validation():
    with pytest.raises(DomainError):
        EntropyConfig(ts=(), epss=(0.1,))
    cfg = EntropyConfig(ts=(3.0, 1.0, 2.0), epss=(0.1,), time_scale=2.0)
    assert cfg.horizons == (2.0, 4.0, 6.0)


def test_grid_spanning_set_bound_and_cover():
    f = builtin("ConstantTorus")
    K = probe_set(f, 40)
    atlas = [AffineChart((-2.0, 0.5 * k), 0.5) for k in range(8)]
    rep = grid_spanning_set(f, K, 2.0, 0.3, 0.0 + 1e-12, atlas, rho=1.0, step=0.1,
                            record_every=0.5)
    assert rep.count <= rep.bound
    assert rep.count == 8 * lattice_count(rep.delta, 2)


def test_positivity_certificate_on_parallel():
    f = builtin("SphereEno")
    z = f.parallel_level()
    r = math.sqrt(1 - z * z)

    def par(m):
        th = 2 * math.pi * np.arange(m) / m
        return np.column_stack([r * np.cos(th), r * np.sin(th), np.full(m, z)])

    ns = [1, 2, 3, 4]
    fam = SeparatingFamily([n / f.gamma for n in ns], [par(2 ** n) for n in ns])
    growth, sep, ok = positivity_certificate(f, None, fam, step=0.01, record_every=0.05)
    assert ok and sep > 0
    assert growth == pytest.approx(f.gamma * math.log(2), rel=1e-9)


def test_positivity_certificate_rejects_collapsing_family():
    # a translation flow cannot separate ever finer sets: separations shrink
    f = builtin("ConstantTorus")
    ts = [1.0, 2.0, 3.0, 4.0]
    E = [np.column_stack([np.zeros(2 ** n), 4.0 * np.arange(2 ** n) / 2 ** n]) for n in (1, 2, 3, 4)]
    fam = SeparatingFamily(ts, E)
    _, _, ok = positivity_certificate(f, None, fam, step=0.1, record_every=0.5)
    assert not ok
