"""Dynamical metrics ``d_t`` and rescaled ``d*_t`` on cached trajectories.

The supremum over ``0 <= s <= t`` is taken over the recorded samples.  Bulk
evaluation works on index pairs into two :class:`TrajectoryBundle` objects and
returns the running supremum at several horizons at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, HorizonError, SingularBaseError
from .flows import FREEZE_SPEED, FlowSpec, Trajectory, TrajectoryBundle
from .manifolds import as_array

PAIR_CHUNK = 1 << 15


@dataclass(frozen=True)
class MetricQuery:
    t: float
    epsilon: float
    rescaled: bool = True

    def __post_init__(self):
        if self.t < 0:
            raise DomainError("t must be >= 0")
        if self.epsilon <= 0:
            raise DomainError("epsilon must be > 0")


def _window(tx: Trajectory, ty: Trajectory, t: float):
    if len(tx.times) != len(ty.times) or not np.allclose(tx.times, ty.times):
        raise DomainError("trajectories must share their time samples")
    if t > tx.times[-1] + 1e-9:
        raise HorizonError(f"t={t} exceeds the trajectory horizon {tx.times[-1]}")
    return int(np.searchsorted(tx.times, t + 1e-9, side="right"))


def dt_metric(tx: Trajectory, ty: Trajectory, t: float) -> float:
    """``sup_{0<=s<=t} d(phi_s x, phi_s y)`` over the shared samples."""
    k = _window(tx, ty, t)
    chart = tx.base_point.chart
    return float(chart.distance_array(tx.points[:k], ty.points[:k]).max())


def rescaled_dt_metric(tx: Trajectory, ty: Trajectory, t: float) -> float:
    """``sup_{0<=s<=t} d(phi_s x, phi_s y) / |X(phi_s x)|``; only ``tx``'s speeds are used."""
    k = _window(tx, ty, t)
    sp = tx.speeds[:k]
    if np.any(sp < FREEZE_SPEED):
        s = tx.times[int(np.argmax(sp < FREEZE_SPEED))]
        raise SingularBaseError(f"base trajectory reaches speed < 1e-14 at s={s:.6g}")
    chart = tx.base_point.chart
    return float((chart.distance_array(tx.points[:k], ty.points[:k]) / sp).max())


def discretization_bound(bundle: TrajectoryBundle, sup_speed: float) -> float:
    """Bound on how much the continuous sup can exceed the sampled one."""
    if len(bundle.times) < 2:
        return 0.0
    return float(2.0 * sup_speed * np.diff(bundle.times).max())


def sublevel_sample(flow: FlowSpec, delta: float, resolution: int) -> np.ndarray:
    """Grid points of ``M_delta = {|X| >= delta}``."""
    if delta <= 0:
        raise DomainError("delta must be > 0")
    g = flow.chart.grid(resolution)
    return g[flow.speed(g) >= delta]


def sublevel_points(flow, delta, resolution):
    return flow.chart.points(sublevel_sample(flow, delta, resolution))


# ---------------------------------------------------------------------------
# bulk evaluation


def horizon_indices(bundle: TrajectoryBundle, ts) -> np.ndarray:
    idx = np.array([bundle.index_of(t) for t in ts], dtype=np.int64)
    for t, k in zip(ts, idx):
        if k < 0 or abs(bundle.times[k] - t) > 1e-6:
            if t > bundle.times[-1] + 1e-9:
                raise HorizonError(f"t={t} exceeds bundle horizon {bundle.times[-1]}")
    return idx


def check_bases(bundle: TrajectoryBundle, kmax: int, idx=None):
    sp = bundle.speeds[:, : kmax + 1] if idx is None else bundle.speeds[idx, : kmax + 1]
    bad = np.nonzero((sp < FREEZE_SPEED).any(axis=1))[0]
    if len(bad):
        i = int(bad[0] if idx is None else np.asarray(idx)[bad[0]])
        raise SingularBaseError(f"base point {bundle.points[i, 0]} has vanishing speed "
                                f"within the horizon")


def candidate_pairs(base: TrajectoryBundle, other: TrajectoryBundle, radius: float,
                    rescaled: bool, prune_at=(0,)):
    """Pairs ``(i, j)`` that may satisfy ``d*(base_i, other_j) < radius`` at every
    sample in ``prune_at``.  Exact superset: only pairs failing at a pruning
    sample are dropped.

    The KD-tree query runs at the latest pruning sample; the remaining samples
    filter the resulting pairs directly.
    """
    chart = base.chart
    order = sorted(set(int(k) for k in prune_at), reverse=True)
    k0 = order[0]
    r0 = radius * (float(base.speeds[:, k0].max()) if rescaled else 1.0)
    fa = base.features[:, k0]
    fb = fa if base is other else other.features[:, k0]
    i, j = chart.neighbor_pairs(fa, fb, r0)
    slack = 1 + 1e-9
    for k in order[1:]:
        if len(i) == 0:
            break
        keep = np.empty(len(i), dtype=bool)
        for lo in range(0, len(i), PAIR_CHUNK * 8):
            sl = slice(lo, lo + PAIR_CHUNK * 8)
            d = chart.feature_distance(base.features[i[sl], k], other.features[j[sl], k])
            lim = radius * slack * (base.speeds[i[sl], k] if rescaled else 1.0)
            keep[sl] = d < lim
        i, j = i[keep], j[keep]
    return i, j


def pair_sup(base: TrajectoryBundle, other: TrajectoryBundle, i, j, t_idx, rescaled: bool,
             start: int = 0):
    """Running sup of (rescaled) distances for pairs ``(base_i, other_j)``.

    Returns an array ``(npairs, len(t_idx))`` with the sup over samples
    ``start..t_idx[m]``.
    """
    t_idx = np.asarray(t_idx, dtype=np.int64)
    kmax = int(t_idx.max()) + 1
    out = np.empty((len(i), len(t_idx)))
    chart = base.chart
    Fa, Fb = base.features, other.features
    cols = t_idx - start
    for lo in range(0, len(i), PAIR_CHUNK):
        sl = slice(lo, lo + PAIR_CHUNK)
        d = chart.feature_distance(Fa[i[sl], start:kmax], Fb[j[sl], start:kmax])
        if rescaled:
            d = d / base.speeds[i[sl], start:kmax]
        np.maximum.accumulate(d, axis=1, out=d)
        out[sl] = d[:, cols]
    return out


def pair_sweep(base: TrajectoryBundle, other: TrajectoryBundle, radius: float, rescaled: bool,
               t_idx):
    """Yield ``(k, i, j, vals)`` for increasing horizons ``k`` in ``t_idx``.

    ``vals`` is the sup of the (rescaled) distance over samples ``0..k`` and
    the pairs are exactly those with ``vals < radius``.  The sweep walks the
    samples once and drops a pair as soon as it leaves the ball, since the
    running sup never decreases.
    """
    ks = sorted(set(int(k) for k in t_idx))
    if not ks:
        return
    k0 = ks[0]
    i, j = candidate_pairs(base, other, radius, rescaled, sorted({0, k0 // 2, k0}))
    vals = np.zeros(len(i))
    chart = base.chart
    Fa, Fb = base.features, other.features
    want = set(ks)
    for k in range(ks[-1] + 1):
        d = chart.feature_distance(Fa[i, k], Fb[j, k])
        if rescaled:
            d = d / base.speeds[i, k]
        np.maximum(vals, d, out=vals)
        keep = vals < radius
        if not keep.all():
            i, j, vals = i[keep], j[keep], vals[keep]
        if k in want:
            yield k, i, j, vals.copy()


def pairwise_matrix(bundle: TrajectoryBundle, t: float, rescaled: bool) -> np.ndarray:
    """Dense ``D[i, j] = d_t(x_i, x_j)`` (or ``d*_t`` with ``x_i`` as base)."""
    k = horizon_indices(bundle, [t])[0]
    if rescaled:
        check_bases(bundle, k)
    n = len(bundle)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    vals = pair_sup(bundle, bundle, i.ravel(), j.ravel(), [k], rescaled)
    return vals[:, 0].reshape(n, n)


def in_ball(base: TrajectoryBundle, other: TrajectoryBundle, t: float, eps: float,
            rescaled: bool) -> np.ndarray:
    """Dense membership matrix ``M[i, j] = other_j in B(base_i, t, eps)``."""
    k = horizon_indices(base, [t])[0]
    if rescaled:
        check_bases(base, k)
    nb, no = len(base), len(other)
    i, j = np.meshgrid(np.arange(nb), np.arange(no), indexing="ij")
    vals = pair_sup(base, other, i.ravel(), j.ravel(), [k], rescaled)
    return (vals[:, 0] < eps).reshape(nb, no)


def points_array(flow, points):
    return as_array(flow.chart, points)
