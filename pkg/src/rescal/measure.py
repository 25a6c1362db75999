"""Empirical measures and the rescaled metric entropy ``e*_mu``.

A measure is a finite set of atoms with positive weights.  ``R^{mu*}(t, eps,
delta, K)`` is the smallest number of rescaled balls leaving less than
``delta`` of the mass of ``K`` uncovered; it is estimated by a greedy mass
cover and, on a grid of cells, reconciled with every verified cover found
elsewhere on the grid (including covers handed in by the caller).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DegenerateMeasureError, DomainError, InfeasibleCoverError
from .estimators import (EntropyEstimate, Sample, entropy_slope, greedy_set_cover,
                         make_sample)
from .flows import DEFAULT_STEP, FREEZE_SPEED, FlowSpec, flow_summary, integrate_many
from .manifolds import Chart, as_array
from .metrics import horizon_indices, pair_sweep

MASS_TOL = 1e-12
DEFAULT_DELTAS = (0.2, 0.1, 0.05)


@dataclass(frozen=True)
class EmpiricalMeasure:
    chart: Chart
    atoms: np.ndarray
    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) == 0 or len(w) != len(self.atoms):
            raise DegenerateMeasureError("a measure needs as many weights as atoms, at least one")
        if np.any(w <= 0):
            raise DomainError("atom weights must be positive")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise DomainError(f"weights must sum to 1, got {w.sum()!r}")

    def __len__(self):
        return len(self.atoms)

    @property
    def total(self):
        return float(np.sum(self.weights))

    def points(self):
        return self.chart.points(self.atoms)


def measure_from_points(flow: FlowSpec, points, weights=None, kind="custom") -> EmpiricalMeasure:
    """Equal (or given) weights on ``points``; singular atoms are rejected."""
    pts = as_array(flow.chart, points)
    if len(pts) == 0:
        raise DegenerateMeasureError("no atoms")
    if np.any(flow.speed(pts) < FREEZE_SPEED):
        raise DomainError("atoms must avoid the singular set")
    w = np.full(len(pts), 1.0 / len(pts)) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    return EmpiricalMeasure(flow.chart, pts, w, kind)


def _n_point_grid(chart: Chart, n: int, layout: str = "product") -> np.ndarray:
    """A chart grid with exactly ``n`` points.

    ``product`` uses the chart grid when ``n`` is a perfect power and a rank-1
    Kronecker lattice otherwise; ``rank1`` always uses the lattice.
    """
    if layout not in ("product", "rank1"):
        raise DomainError(f"unknown grid layout {layout!r}")
    d = chart.dim
    root = round(n ** (1.0 / d))
    if layout == "product" and root ** d == n:
        return chart.grid(root)
    if chart.kind == "Sphere2":
        # the Fibonacci grid takes any size; reuse its formula directly
        i = np.arange(n)
        z = 1.0 - (2.0 * i + 1.0) / n
        r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        th = i * math.pi * (3.0 - math.sqrt(5.0))
        return chart.reduce(np.column_stack([r * np.cos(th), r * np.sin(th), z]))
    # rank-1 Kronecker lattice on the unit cube, mapped into the chart
    alphas = np.array([math.sqrt(2.0), math.sqrt(3.0), math.sqrt(5.0)][: d - 1])
    i = np.arange(n)[:, None]
    u = np.column_stack([np.arange(n) / n, np.mod(i * alphas, 1.0)])
    if chart.kind == "FlatTorus2":
        return chart.reduce(np.asarray(chart.origin) + u * np.asarray(chart.sides))
    return chart.reduce(u)


def sample_measure(flow: FlowSpec, kind: str = "UniformGrid", n: int = 100, base=None,
                   burn_in: float = 0.0, horizon: float = 100.0, step: float = 0.01,
                   exclude_speed: float = FREEZE_SPEED, layout: str = "product"
                   ) -> EmpiricalMeasure:
    """Equal-weight atoms from a grid or from one long trajectory.

    ``UniformGrid`` takes an ``n``-point grid (``layout`` as in the chart
    grid or a rank-1 lattice) and drops atoms with speed
    below ``exclude_speed`` (a neighbourhood of the singular set).
    ``TrajectoryPush`` records ``n`` equally spaced samples of the orbit of
    ``base`` over ``[burn_in, burn_in + horizon]``.  ``UnstableWinding``
    (suspension only) is :func:`unstable_winding`.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if kind == "UniformGrid":
        pts = _n_point_grid(flow.chart, n, layout)
    elif kind == "TrajectoryPush":
        if base is None:
            raise DomainError("TrajectoryPush needs a base point")
        b = as_array(flow.chart, [base] if not isinstance(base, np.ndarray) else base[None, :])
        if burn_in > 0:
            b = integrate_many(flow, b, burn_in, step).points[:, -1]
        every = horizon / n
        bundle = integrate_many(flow, b, horizon, step, record_every=every)
        pts = bundle.points[0, 1:] if bundle.points.shape[1] > n else bundle.points[0, :n]
        pts = pts[:n]
    elif kind == "UnstableWinding":
        pts = unstable_winding(flow, n)
    else:
        raise DomainError(f"unknown measure kind {kind!r}")
    keep = flow.speed(pts) >= exclude_speed
    if not keep.any():
        raise DegenerateMeasureError("every candidate atom lies on the singular set")
    pts = pts[keep]
    return EmpiricalMeasure(flow.chart, pts, np.full(len(pts), 1.0 / len(pts)), kind)


def unstable_winding(flow: FlowSpec, n: int, length: float = 60.0, s_cycles: int = 181):
    """``n`` points along one unstable line of the suspension, wrapped around the torus.

    The line has irrational slope, so for large ``length`` the points
    equidistribute in ``(u, v)``; ``s`` runs through ``s_cycles`` slow cycles
    along the line.  Neighbouring atoms are ``length / n`` apart along the
    expanding direction, which is what a covering count needs to resolve.
    """
    ch = flow.chart
    if ch.kind != "MappingTorus":
        raise DomainError("UnstableWinding needs a mapping torus")
    _, u, _ = ch.eigen()
    i = np.arange(n)
    x = i * length / n
    pts = np.column_stack([0.1 + x * u[0], 0.2 + x * u[1], np.mod(i * s_cycles / n, 1.0)])
    return ch.reduce(pts)


def binned_discrepancy(mu: EmpiricalMeasure, bins: int = 4) -> float:
    """Total-variation distance between ``mu`` binned on a ``bins^d`` box grid and uniform.

    Boxes are taken in chart coordinates (torus and mapping torus only).
    """
    ch = mu.chart
    if ch.kind == "FlatTorus2":
        u = (mu.atoms - np.asarray(ch.origin)) / np.asarray(ch.sides)
    elif ch.kind == "MappingTorus":
        u = mu.atoms
    else:
        raise DomainError("binned discrepancy needs a product chart")
    idx = np.clip((u * bins).astype(int), 0, bins - 1)
    flat = np.ravel_multi_index(idx.T, (bins,) * u.shape[1])
    mass = np.bincount(flat, weights=mu.weights, minlength=bins ** u.shape[1])
    return float(0.5 * np.abs(mass - 1.0 / len(mass)).sum())


# ---------------------------------------------------------------------------
# covers


@dataclass
class MeasureCoverReport:
    count: int
    witnesses: np.ndarray
    covered_mass: float
    query: tuple  # (t, epsilon, delta)
    rescaled: bool = True
    greedy_count: int | None = None
    witness_index: list = field(default_factory=list, repr=False)
    chart: Chart | None = field(default=None, repr=False)

    def points(self):
        return self.chart.points(self.witnesses)


def _k_mask(mu: EmpiricalMeasure, K):
    if K is None or (isinstance(K, str) and K == "All"):
        return np.ones(len(mu), dtype=bool)
    if isinstance(K, np.ndarray) and K.dtype == bool:
        if len(K) != len(mu):
            raise DomainError("K mask length must match the atoms")
        return K
    Kp = as_array(mu.chart, K)
    d = mu.chart.distance_array(mu.atoms[:, None, :], Kp[None, :, :]).min(axis=1)
    return d < 1e-9


def measure_cover_grid(flow: FlowSpec, mu: EmpiricalMeasure, ts, epss, deltas, rescaled=True,
                       K=None, step=DEFAULT_STEP, record_every=0.1, radius_scale=1.0,
                       extra_covers=(), sample=None):
    """Greedy mass covers on a (t, eps, delta) grid with witness reconciliation.

    Candidates are the atoms whose speed stays above the freeze threshold on
    ``[0, max t]``.  Ball radii are ``radius_scale * eps``.  Each cell reports
    the smallest cover verified for it among all covers found on the grid and
    ``extra_covers`` (lists of atom indices).  Returns
    ``{(t, eps, delta): MeasureCoverReport}``.
    """
    ts = sorted(float(t) for t in ts)
    epss = sorted((float(e) for e in epss), reverse=True)
    deltas = sorted((float(d) for d in deltas), reverse=True)
    if not ts or not epss or not deltas:
        raise DomainError("empty ladder")
    if min(deltas) <= 0 or max(deltas) >= 1:
        raise DomainError("delta must lie in (0, 1)")
    S = sample if sample is not None else Sample(flow, mu.atoms, max(ts), step, record_every,
                                                 "atoms")
    b = S.bundle
    t_idx = horizon_indices(b, ts)
    kmask = _k_mask(mu, K)
    w = np.where(kmask, mu.weights, 0.0)
    mass_k = float(w.sum())
    alive = b.speeds.min(axis=1) >= FREEZE_SPEED if rescaled else np.ones(len(mu), bool)
    cand_idx = np.nonzero(alive)[0]
    if len(cand_idx) == 0:
        raise InfeasibleCoverError("no atom stays off the singular set over the horizon")
    cb = b.subset(cand_idx)
    n = len(mu)
    tk = dict(zip((int(k) for k in t_idx), ts))
    rmax = radius_scale * max(epss)
    member = {}
    for k, i, j, vals in pair_sweep(cb, b, rmax, rescaled, t_idx):
        t = tk[k]
        for e in epss:
            hit = vals < radius_scale * e
            member[(t, e)] = sparse.csr_matrix(
                (np.ones(int(hit.sum()), dtype=bool), (cand_idx[i[hit]], j[hit])), shape=(n, n))

    raw = {}
    for (t, e), m in member.items():
        for dl in deltas:
            # strict "> 1 - delta" must survive rounding of the atom sums
            goal = mass_k - dl + MASS_TOL
            if goal < 0:
                # any single ball already leaves less than delta uncovered
                gains = np.asarray(m @ w).ravel()
                chosen = [int(np.argmax(np.where(alive, gains, -1.0)))]
            else:
                chosen, cov, _ = greedy_set_cover(m, weights=w, goal=goal)
                if cov <= goal:
                    raise InfeasibleCoverError(
                        f"cannot cover mass > {1 - dl:g} of K at t={t}, eps={e}: "
                        f"best {cov + (1 - mass_k):.4g}")
            raw[(t, e, dl)] = chosen

    pool = [list(c) for c in raw.values()] + [list(c) for c in extra_covers]
    pool.sort(key=len)
    out = {}
    for (t, e, dl), chosen in raw.items():
        m = member[(t, e)]
        best, best_cov = chosen, _covered(m, chosen, w)
        for cov_set in pool:
            if len(cov_set) >= len(best):
                break
            c = _covered(m, cov_set, w)
            if c > mass_k - dl + MASS_TOL:
                best, best_cov = cov_set, c
                break
        best = [int(x) for x in best]
        out[(t, e, dl)] = MeasureCoverReport(
            len(best), mu.atoms[np.asarray(best, dtype=int)], best_cov + (1 - mass_k),
            (t, e, dl), rescaled, greedy_count=len(chosen), witness_index=best, chart=mu.chart)
    return out


def _covered(m: sparse.csr_matrix, chosen, w) -> float:
    if len(chosen) == 0:
        return 0.0
    hit = np.asarray(m[np.asarray(chosen, dtype=int)].sum(axis=0)).ravel() > 0
    return float(w[hit].sum())


def measure_spanning_count(flow: FlowSpec, mu: EmpiricalMeasure, t: float, epsilon: float,
                           delta: float, K=None, step=DEFAULT_STEP, record_every=0.1,
                           extra_covers=()) -> MeasureCoverReport:
    """Greedy rescaled mu-(t, eps, delta)-spanning set of ``K`` (``None``/``'All'`` = M).

    ``covered_mass`` is the total covered mass plus the mass outside ``K``,
    so ``covered_mass > 1 - delta`` for every report.  Counts are at least 1.
    """
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    if epsilon <= 0 or t < 0:
        raise DomainError("need t >= 0 and eps > 0")
    return measure_cover_grid(flow, mu, [t], [epsilon], [delta], True, K, step, record_every,
                              extra_covers=extra_covers)[(float(t), float(epsilon), float(delta))]


def sup_speed(flow: FlowSpec, sample: Sample | None = None) -> float:
    """``|X|_inf``: grid supremum, raised by any larger sampled trajectory speed."""
    s = flow_summary(flow).sup_speed
    if sample is not None:
        s = max(s, float(sample.bundle.speeds.max()))
    return s


def classical_measure_count(flow: FlowSpec, mu: EmpiricalMeasure, t: float, epsilon: float,
                            delta: float, K=None, step=DEFAULT_STEP, record_every=0.1,
                            extra_covers=()) -> int:
    """``R^mu(t, eps, delta)``: greedy classical mass cover count."""
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    rep = measure_cover_grid(flow, mu, [t], [epsilon], [delta], False, K, step, record_every,
                             extra_covers=extra_covers)
    return rep[(float(t), float(epsilon), float(delta))].count


# ---------------------------------------------------------------------------
# entropy


def measure_config(flow: FlowSpec):
    """Ladders for measure counts: the topological ones, with ball radii scaled
    to the atom spacing of :func:`default_measure`."""
    from .estimators import default_config

    cfg = default_config(flow)
    if flow.flow_id in ("SphereEno", "SphereEnoUnperturbed"):
        return cfg.replace(epss=(2.0, 1.0, 0.5))
    if flow.flow_id == "CatMapSuspension":
        # the winding measure resolves the unstable direction only briefly
        return cfg.replace(ts=tuple(0.5 * k for k in range(1, 9)), epss=(0.2, 0.1))
    return cfg


def default_measure(flow: FlowSpec) -> EmpiricalMeasure:
    """Uniform grid measure dense enough to resolve :func:`measure_config` radii."""
    if flow.chart.kind == "MappingTorus":
        return sample_measure(flow, "UnstableWinding", 16384)
    return sample_measure(flow, "UniformGrid", 4096)


def estimate_e_star_mu(flow: FlowSpec, mu: EmpiricalMeasure, config=None,
                       deltas=DEFAULT_DELTAS) -> EntropyEstimate:
    """Slopes of ``log R^{mu*}(t, eps, delta)`` per ``(delta, eps)``.

    ``extrapolated`` is the extrapolated slope at the smallest ``delta`` that
    gives a usable fit.  ``config`` is an :class:`EntropyConfig` (its grid
    ladders are used); counts at or above ``saturation * len(mu)`` are left
    out of the fits.
    """
    if len(mu) == 0:
        raise DegenerateMeasureError("empty measure")
    cfg = config or measure_config(flow)
    ts = cfg.horizons
    grid = measure_cover_grid(flow, mu, ts, cfg.epss, deltas, True, None, cfg.step,
                              cfg.record_every)
    cap = cfg.saturation * len(mu)
    per_delta, chosen = {}, None
    for dl in sorted(deltas, reverse=True):
        counts = [(t, e, r.count) for (t, e, d), r in grid.items() if d == dl]
        est = entropy_slope(counts, window=cfg.window, residual_threshold=cfg.residual_threshold,
                            mode="Rescaled", caps={float(e): cap for e in cfg.epss})
        per_delta[dl] = est
        if math.isfinite(est.extrapolated):
            chosen = (dl, est)
    if chosen is None:
        dl, est = min(per_delta.items())
    else:
        dl, est = chosen
    est.diagnostics = {"delta": dl, "per_delta": {d: e.per_epsilon for d, e in per_delta.items()},
                       "counts": sorted((t, e, d, r.count) for (t, e, d), r in grid.items())}
    return est


def measure_inequalities(flow: FlowSpec, mu: EmpiricalMeasure, ts, epss, deltas, K=None,
                         step=DEFAULT_STEP, record_every=0.1):
    """Per-cell check of ``R^mu(t, eps |X|_inf, delta) <= R^{mu*}(t, eps, delta)`` and
    ``R^{mu*}(t, eps, delta, K) <= R*(t, eps, K)`` on the atoms.

    The rescaled mu-covers are handed to the classical grid and full rescaled
    covers of ``K`` to the mu-grid as candidate witnesses; each is used only
    after it is verified for the cell.  Returns a list of row dicts.
    """
    from .estimators import cover_grid

    ts = sorted(float(t) for t in ts)
    S = Sample(flow, mu.atoms, max(ts), step, record_every, "atoms")
    kmask = _k_mask(mu, K)
    xinf = sup_speed(flow, S)
    # full rescaled covers of the K-atoms by atom candidates
    b = S.bundle
    alive = np.nonzero(b.speeds.min(axis=1) >= FREEZE_SPEED)[0]
    cands = Sample(flow, mu.atoms[alive], S.horizon, step, record_every, "candidates",
                   _bundle=b.subset(alive))
    full = cover_grid(cands, S, ts, epss, True,
                      target_masks={float(e): kmask for e in epss})
    full_idx = {}
    for cell, rep in full.items():
        # map witnesses back to atom indices
        pos = {tuple(np.round(p, 12)): k for k, p in enumerate(mu.atoms)}
        full_idx[cell] = [pos[tuple(np.round(p, 12))] for p in rep.witnesses]
    star = measure_cover_grid(flow, mu, ts, epss, deltas, True, K, step, record_every,
                              extra_covers=list(full_idx.values()), sample=S)
    star_all = star if K is None else measure_cover_grid(
        flow, mu, ts, epss, deltas, True, None, step, record_every, sample=S)
    classical = measure_cover_grid(flow, mu, ts, epss, deltas, False, None, step, record_every,
                                   radius_scale=xinf,
                                   extra_covers=[r.witness_index for r in star_all.values()],
                                   sample=S)
    rows = []
    for (t, e, dl), r in sorted(star.items()):
        rows.append({"t": t, "epsilon": e, "delta": dl,
                     "R_mu": classical[(t, e, dl)].count,
                     "R_mu_star": star_all[(t, e, dl)].count,
                     "R_mu_star_K": r.count,
                     "R_star_K": full[(t, e)].count,
                     "sup_speed": xinf})
    for row in rows:
        row["item2_ok"] = row["R_mu"] <= row["R_mu_star"]
        row["short_ok"] = row["R_mu_star_K"] <= row["R_star_K"]
    return rows
