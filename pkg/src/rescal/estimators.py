"""Spanning / separating counts and entropy slopes.

Covers are found greedily (lazy greedy set cover, lowest index wins ties) and
packings by a single ordered scan, both over sparse ball-membership data from
:mod:`rescal.metrics`.  When a whole (t, eps) grid is computed, every cell
reports the smallest *verified* witness set found anywhere on the grid, so the
reported counts are monotone exactly as the true quantities are.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import (ConstructionError, DomainError, InfeasibleCoverError,
                     InsufficientDataError, SingularBaseError)
from .flows import DEFAULT_STEP, FREEZE_SPEED, FlowSpec, integrate_many
from .manifolds import Chart, as_array
from .metrics import (MetricQuery, check_bases, horizon_indices, pair_sup, pair_sweep,
                      pairwise_matrix)

DEFAULT_EPS = (0.4, 0.2, 0.1, 0.05)
DEFAULT_TS = (2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
RECORD_EVERY = 0.05


# ---------------------------------------------------------------------------
# reports


@dataclass
class CoverReport:
    count: int
    witnesses: np.ndarray
    query: MetricQuery
    target: str
    greedy_count: int | None = None
    chart: Chart | None = field(default=None, repr=False)

    def points(self):
        return self.chart.points(self.witnesses)


@dataclass
class PackReport:
    count: int
    witnesses: np.ndarray
    query: MetricQuery
    target: str
    greedy_count: int | None = None
    chart: Chart | None = field(default=None, repr=False)

    def points(self):
        return self.chart.points(self.witnesses)


@dataclass
class EntropyEstimate:
    per_epsilon: list  # (epsilon, slope, residual, npoints)
    extrapolated: float
    t_window: tuple
    mode: str
    counts: list = field(default_factory=list)  # (t, epsilon, count)
    diagnostics: dict = field(default_factory=dict)

    def slope_at(self, eps):
        for e, s, _, _ in self.per_epsilon:
            if math.isclose(e, eps):
                return s
        raise KeyError(eps)


@dataclass
class SeparatingFamily:
    t_n: list
    E_n: list
    growth: float = float("nan")
    min_separation: float = float("nan")


# ---------------------------------------------------------------------------
# combinatorial cores


def lex_order(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points)
    if len(pts) == 0:
        return np.empty(0, dtype=np.int64)
    return np.lexsort(pts.T[::-1])


def greedy_set_cover(rows: sparse.csr_matrix, weights=None, goal=None):
    """Lazy greedy set cover.

    ``rows[i, j]`` nonzero means candidate ``i`` covers target ``j``.  Without
    ``weights`` every target must be covered.  With ``weights`` the selection
    stops as soon as the covered weight exceeds ``goal``.  Returns the selected
    candidate indices in selection order and the covered weight.
    """
    rows = sparse.csr_matrix(rows, dtype=bool)
    n_c, n_t = rows.shape
    full = weights is None
    w = np.ones(n_t) if full else np.asarray(weights, dtype=float)
    if full:
        goal = n_t - 0.5
    uncovered = np.ones(n_t, dtype=bool)
    indptr, indices = rows.indptr, rows.indices
    gains = np.asarray(rows @ w).ravel()
    heap = [(-g, i) for i, g in enumerate(gains) if g > 0]
    heapq.heapify(heap)
    chosen, covered = [], 0.0
    while covered <= goal and heap:
        neg, i = heapq.heappop(heap)
        cols = indices[indptr[i]:indptr[i + 1]]
        live = cols[uncovered[cols]]
        g = float(w[live].sum())
        if g <= 0:
            continue
        if heap and (-g, i) > heap[0]:
            heapq.heappush(heap, (-g, i))
            continue
        chosen.append(i)
        uncovered[live] = False
        covered += g
    if covered <= goal:
        return chosen, covered, np.nonzero(uncovered)[0]
    return chosen, covered, np.empty(0, dtype=np.int64)


def greedy_packing(n: int, conflicts: sparse.csr_matrix, order=None):
    """Scan ``order`` and keep a point unless it conflicts with a kept one."""
    conflicts = sparse.csr_matrix(conflicts, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    kept = []
    indptr, indices = conflicts.indptr, conflicts.indices
    for i in (range(n) if order is None else order):
        if blocked[i]:
            continue
        kept.append(int(i))
        blocked[indices[indptr[i]:indptr[i + 1]]] = True
    return kept


def exact_min_cover(member: np.ndarray) -> int:
    """Brute-force minimum number of rows covering all columns (tiny inputs only)."""
    member = np.asarray(member, dtype=bool)
    n_c, n_t = member.shape
    if not member.any(axis=0).all():
        raise InfeasibleCoverError("some target is covered by no candidate")
    masks = [int("".join("1" if b else "0" for b in row[::-1]) or "0", 2) for row in member]
    full = (1 << n_t) - 1
    for k in range(1, n_c + 1):
        for combo in itertools.combinations(range(n_c), k):
            acc = 0
            for c in combo:
                acc |= masks[c]
            if acc == full:
                return k
    raise InfeasibleCoverError("no cover found")


def _covers(mask: sparse.csr_matrix, chosen, target_cols) -> bool:
    if len(chosen) == 0:
        return len(target_cols) == 0
    hit = np.asarray(mask[np.asarray(chosen)].sum(axis=0)).ravel() > 0
    return bool(hit[target_cols].all())


def _independent(conf: sparse.csr_matrix, kept) -> bool:
    if len(kept) < 2:
        return True
    kept = np.asarray(kept)
    return conf[kept][:, kept].nnz == 0


# ---------------------------------------------------------------------------
# bundles


@dataclass
class Sample:
    """A finite point set with cached trajectories."""

    flow: FlowSpec
    points: np.ndarray
    horizon: float
    step: float = DEFAULT_STEP
    record_every: float = RECORD_EVERY
    label: str = "K"
    _bundle: object = field(default=None, repr=False)

    @property
    def bundle(self):
        if self._bundle is None:
            self._bundle = integrate_many(self.flow, self.points, self.horizon, self.step,
                                          self.record_every)
        return self._bundle

    def __len__(self):
        return len(self.points)


def make_sample(flow, points, horizon, step=DEFAULT_STEP, record_every=RECORD_EVERY,
                label="K", sort=True):
    pts = as_array(flow.chart, points)
    if sort:
        pts = pts[lex_order(pts)]
    return Sample(flow, pts, float(horizon), step, record_every, label)


# ---------------------------------------------------------------------------
# spanning counts


def cover_grid(cands: Sample, targets: Sample, ts, epss, rescaled: bool,
               target_masks=None, extra_covers=()):
    """Spanning counts on a (t, eps) grid.

    ``target_masks`` optionally maps each eps to a boolean mask over the
    targets (used for the sublevel sets ``M_eps``); the eps-cell then only has
    to cover the masked targets.  Returns ``{(t, eps): CoverReport}``.
    """
    ts = sorted(float(t) for t in ts)
    epss = sorted((float(e) for e in epss), reverse=True)
    cb, tb = cands.bundle, targets.bundle
    if cb.chart != tb.chart:
        raise DomainError("candidates and targets on different charts")
    t_idx = horizon_indices(cb, ts)
    if rescaled:
        check_bases(cb, int(t_idx.max()))
    other = cb if cands is targets else tb
    nc, nt = len(cands), len(targets)
    masks, cols = {}, {}
    for e in epss:
        tm = np.ones(nt, dtype=bool) if target_masks is None else np.asarray(target_masks[e])
        cols[e] = np.nonzero(tm)[0]
    tk = dict(zip((int(k) for k in t_idx), ts))
    for k, i, j, vals in pair_sweep(cb, other, max(epss), rescaled, t_idx):
        t = tk[k]
        for e in epss:
            hit = vals < e
            masks[(t, e)] = sparse.csr_matrix(
                (np.ones(int(hit.sum()), dtype=bool), (i[hit], j[hit])), shape=(nc, nt))
    raw = {}
    for (t, e), mask in masks.items():
        sub = mask[:, cols[e]]
        chosen, _, missing = greedy_set_cover(sub)
        if len(missing):
            bad = targets.points[cols[e][missing[0]]]
            raise InfeasibleCoverError(
                f"target point {bad} is within eps={e} of no candidate at t={t}", bad)
        raw[(t, e)] = chosen
    pool = [list(c) for c in raw.values()] + [list(c) for c in extra_covers]
    pool.sort(key=len)
    out = {}
    for (t, e), mask in masks.items():
        best = raw[(t, e)]
        for cover in pool:
            if len(cover) >= len(best):
                break
            if _covers(mask, cover, cols[e]):
                best = cover
                break
        out[(t, e)] = CoverReport(len(best), cands.points[np.asarray(best, dtype=int)],
                                  MetricQuery(t, e, rescaled), targets.label,
                                  greedy_count=len(raw[(t, e)]), chart=cb.chart)
    return out


def spanning_count(flow: FlowSpec, target, t: float, epsilon: float, rescaled: bool,
                   candidates=None, step=DEFAULT_STEP, record_every=RECORD_EVERY) -> CoverReport:
    """Greedy (t, eps)-spanning set of ``target`` drawn from ``candidates``."""
    tgt = make_sample(flow, target, t, step, record_every, label="target")
    if len(tgt) == 0:
        raise DomainError("target must be nonempty")
    if candidates is None:
        cand = tgt
    else:
        cand = make_sample(flow, candidates, t, step, record_every, label="candidates")
    if rescaled:
        sp = flow.speed(cand.points)
        if np.any(sp < FREEZE_SPEED):
            raise SingularBaseError("rescaled candidates must avoid the singular set")
    return cover_grid(cand, tgt, [t], [epsilon], rescaled)[(float(t), float(epsilon))]


# ---------------------------------------------------------------------------
# separating counts


def pack_grid(K: Sample, ts, epss, rescaled: bool = True):
    """Greedy separating sets of ``K`` on a (t, eps) grid.

    Each cell reports the largest verified separated set found on the grid.
    """
    ts = sorted(float(t) for t in ts)
    epss = sorted((float(e) for e in epss), reverse=True)
    b = K.bundle
    t_idx = horizon_indices(b, ts)
    if rescaled:
        check_bases(b, int(t_idx.max()))
    n = len(K)
    confs, raw = {}, {}
    tk = dict(zip((int(k) for k in t_idx), ts))
    for k, i, j, vals in pair_sweep(b, b, max(epss), rescaled, t_idx):
        t = tk[k]
        off = i != j
        i, j, vals = i[off], j[off], vals[off]
        for e in epss:
            hit = vals < e
            a = sparse.csr_matrix((np.ones(int(hit.sum()), dtype=bool), (i[hit], j[hit])),
                                  shape=(n, n))
            conf = (a + a.T).tocsr()
            confs[(t, e)] = conf
            raw[(t, e)] = greedy_packing(n, conf)
    pool = sorted(raw.values(), key=len, reverse=True)
    out = {}
    for cell, conf in confs.items():
        best = raw[cell]
        for cand in pool:
            if len(cand) <= len(best):
                break
            if _independent(conf, cand):
                best = cand
                break
        out[cell] = PackReport(len(best), K.points[np.asarray(best, dtype=int)],
                               MetricQuery(cell[0], cell[1], rescaled), K.label,
                               greedy_count=len(raw[cell]), chart=b.chart)
    return out


def separating_count(flow: FlowSpec, K, t: float, epsilon: float, rescaled: bool = True,
                     step=DEFAULT_STEP, record_every=RECORD_EVERY) -> PackReport:
    """Greedy rescaled (t, eps, K)-separating set: scan ``K`` in lexicographic
    order and keep a point iff it is eps-apart (both directions) from all kept."""
    S = make_sample(flow, K, t, step, record_every)
    return pack_grid(S, [t], [epsilon], rescaled)[(float(t), float(epsilon))]


# ---------------------------------------------------------------------------
# explicit grid construction


@dataclass(frozen=True)
class AffineChart:
    """``f(u) = center + scale * R u`` followed by the chart reduction.

    ``A = scale`` unless ``lip`` supplies a measured constant (needed when the
    chart metric is not the coordinate one).
    """

    center: tuple
    scale: float
    rotation: tuple | None = None
    lip: float | None = None

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.rotation is not None:
            u = u @ np.asarray(self.rotation).T
        return np.asarray(self.center) + self.scale * u

    def inverse(self, x):
        v = (np.asarray(x, dtype=float) - np.asarray(self.center)) / self.scale
        if self.rotation is not None:
            v = v @ np.asarray(self.rotation)
        return v

    @property
    def lipschitz(self):
        return self.scale if self.lip is None else self.lip


def lattice_count(delta: float, d: int) -> int:
    """``card(E(delta))`` for the cubic lattice ``delta Z^d`` inside the open cube ``(-2, 2)^d``."""
    m = math.ceil(2.0 / delta) - 1
    return (2 * m + 1) ** d


def grid_spanning_set(flow: FlowSpec, K, t: float, epsilon: float, L: float, chart_atlas,
                      rho: float, step=DEFAULT_STEP, record_every=RECORD_EVERY) -> CoverReport:
    """Explicit lattice spanning set ``F = U_i f_i(E(delta))``.

    ``delta = eps / (e^{2Lt} A B)`` with ``A`` the atlas Lipschitz constant and
    ``B = sqrt(d)/(2 rho)``.  ``card(F)`` is counted in closed form; every
    sample of ``K`` is matched to its designated lattice witness and the pair
    is checked by integration.  ``witnesses`` holds the matched points only.
    """
    chart = flow.chart
    Kp = as_array(chart, K)
    if len(chart_atlas) == 0:
        raise DomainError("empty atlas")
    d = chart.dim
    A = max(f.lipschitz for f in chart_atlas)
    B = math.sqrt(d) / 2.0 / rho
    delta = epsilon / (math.exp(2.0 * L * t) * A * B)
    if delta >= 2.0:
        raise DomainError(f"t={t} is below the forcing time: eps/(e^(2Lt) A B) = {delta:.3g} >= 2")
    n = len(chart_atlas)
    count = n * lattice_count(delta, d)
    wit = np.empty_like(Kp)
    for k, y in enumerate(Kp):
        hit = None
        for f in chart_atlas:
            v = f.inverse(y)
            if np.linalg.norm(v) < 1.0:
                hit = f
                break
        if hit is None:
            raise ConstructionError(f"K point {y} lies outside every atlas image f_i(B(0,1))")
        u = np.round(v / delta) * delta
        wit[k] = chart.reduce(hit(u))
    speeds = flow.speed(wit)
    if np.any(speeds < rho * (1 - 1e-12)):
        raise ConstructionError("atlas image meets speeds below rho")
    pts = np.vstack([wit, Kp])
    bundle = integrate_many(flow, pts, t, step, record_every)
    k = horizon_indices(bundle, [t])[0]
    m = len(Kp)
    idx = np.arange(m)
    vals = pair_sup(bundle, bundle, idx, idx + m, [k], True)[:, 0]
    bad = np.nonzero(vals >= epsilon)[0]
    if len(bad):
        raise ConstructionError(
            f"grid witness fails rescaled membership for K point {Kp[bad[0]]}: "
            f"d*={vals[bad[0]]:.4g} >= eps={epsilon} (L or A underestimated?)")
    uniq = np.unique(np.round(wit, 12), axis=0)
    rep = CoverReport(count, uniq, MetricQuery(t, epsilon, True), "K", chart=chart)
    rep.bound = (5 * A * B / epsilon) ** d * n * math.exp(2 * d * L * t)
    rep.delta = delta
    rep.atlas = {"A": A, "B": B, "n": n, "d": d}
    return rep


# ---------------------------------------------------------------------------
# slopes


def _fit(ts, ys):
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    X = np.column_stack([ts, np.ones_like(ts)])
    coef, *_ = np.linalg.lstsq(X, ys, rcond=None)
    res = ys - X @ coef
    return float(coef[0]), float(np.sqrt(np.mean(res * res)))


def entropy_slope(counts, window=None, residual_threshold=0.25, mode="Rescaled",
                  caps=None) -> EntropyEstimate:
    """Least-squares slope of ``log count`` against ``t`` for each eps.

    ``caps`` maps eps to a saturation ceiling; cells at or above it are left
    out of the fit (the sample cannot resolve larger counts).
    """
    by_eps = {}
    for t, e, c in counts:
        if c < 1:
            raise DomainError("counts must be positive")
        by_eps.setdefault(float(e), []).append((float(t), int(c)))
    if not by_eps:
        raise InsufficientDataError("no counts")
    lo, hi = (-math.inf, math.inf) if window is None else window
    per = []
    for e in sorted(by_eps, reverse=True):
        rows = sorted(r for r in by_eps[e] if lo - 1e-9 <= r[0] <= hi + 1e-9)
        if len({r[0] for r in by_eps[e]}) < 3:
            raise InsufficientDataError(f"fewer than 3 distinct t values for eps={e}")
        if caps is not None and e in caps:
            rows = [r for r in rows if r[1] < caps[e]]
        if len({r[0] for r in rows}) < 3:
            per.append((e, float("nan"), float("inf"), len(rows)))
            continue
        s, r = _fit([x[0] for x in rows], [math.log(x[1]) for x in rows])
        per.append((e, s, r, len(rows)))
    ok = [p for p in per if p[2] <= residual_threshold and math.isfinite(p[1])]
    extrap = min(ok, key=lambda p: p[0])[1] if ok else float("nan")
    all_t = sorted({float(t) for t, _, _ in counts})
    win = (max(lo, all_t[0]), min(hi, all_t[-1]))
    return EntropyEstimate(per, extrap, win, mode,
                           counts=sorted((float(t), float(e), int(c)) for t, e, c in counts))


# ---------------------------------------------------------------------------
# positivity certificate


def positivity_certificate(flow: FlowSpec, K, family: SeparatingFamily, step=DEFAULT_STEP,
                           record_every=RECORD_EVERY, growth_margin=0.05,
                           separation_margin=1e-9, trend_tolerance=0.05):
    """Check a separated family ``E_n`` at times ``t_n``.

    Growth is the fitted slope of ``log card(E_n)`` against ``t_n``; the
    separation of each ``E_n`` is the brute-force minimum of ``d*_{t_n}`` over
    ordered pairs.  A family whose per-n separations decay exponentially
    (fitted log-slope below ``-trend_tolerance``) has infimum zero and fails.
    Returns ``(growth, min_separation, verdict)``; ``family`` is updated.
    """
    Kp = as_array(flow.chart, K) if K is not None else None
    seps, logs = [], []
    for t, E in zip(family.t_n, family.E_n):
        Ep = as_array(flow.chart, E)
        if Kp is not None and len(Kp):
            dmin = flow.chart.distance_array(Ep[:, None, :], Kp[None, :, :]).min(axis=1) \
                if len(Kp) * len(Ep) <= 4_000_000 else np.zeros(len(Ep))
            if np.any(dmin > 1e-9):
                raise DomainError("E_n must be a subset of K")
        if np.any(flow.speed(Ep) < FREEZE_SPEED):
            raise SingularBaseError("E_n meets the singular set")
        b = integrate_many(flow, Ep, t, step, record_every)
        k = horizon_indices(b, [t])[0]
        check_bases(b, k)
        D = pairwise_matrix(b, t, True)
        np.fill_diagonal(D, np.inf)
        seps.append(float(D.min()))
        logs.append(math.log(len(Ep)))
    tn = np.asarray(family.t_n, dtype=float)
    growth = _fit(tn, logs)[0] if len(tn) >= 2 else logs[0] / tn[0]
    min_sep = float(min(seps))
    trend = _fit(tn, np.log(seps))[0] if len(tn) >= 2 else 0.0
    family.growth, family.min_separation = growth, min_sep
    family.separations = seps
    family.separation_trend = trend
    verdict = bool(growth > growth_margin and min_sep > separation_margin
                   and trend >= -trend_tolerance)
    return growth, min_sep, verdict


# ---------------------------------------------------------------------------
# entropy estimation


MODES = ("Classical", "Rescaled", "RescaledOnK")


@dataclass(frozen=True)
class EntropyConfig:
    """Ladders and sample sizes for :func:`estimate_entropy`.

    ``ts`` are multiplied by ``time_scale``.  ``probe_epss`` is the eps ladder
    used on the probe set in the rescaled modes (defaults to ``epss``).  Counts reaching
    ``saturation`` times the sample size are left out of the fits.
    """

    ts: tuple = DEFAULT_TS
    epss: tuple = DEFAULT_EPS
    probe_epss: tuple | None = None
    time_scale: float = 1.0
    resolution: int = 32
    probe_size: int = 1024
    step: float = 0.01
    record_every: float = 0.1
    window: tuple | None = None
    residual_threshold: float = 0.25
    saturation: float = 0.25
    refine: bool = True
    use_grid: bool = True
    use_probe: bool = True

    def __post_init__(self):
        if len(self.ts) < 3 or len(self.epss) < 1:
            raise DomainError("need at least 3 horizons and one eps")
        if min(self.ts) <= 0 or min(self.epss) <= 0:
            raise DomainError("ladders must be positive")
        if self.resolution < 2 or self.probe_size < 2:
            raise DomainError("sample sizes must be >= 2")

    @property
    def horizons(self):
        return tuple(sorted(float(t) * self.time_scale for t in self.ts))

    def replace(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)


def default_config(flow: FlowSpec) -> EntropyConfig:
    """Per-family ladders that keep counts inside the resolvable range."""
    fid = flow.flow_id
    integer_ts = tuple(float(t) for t in range(2, 13))
    if fid == "TorusItem4":
        return EntropyConfig(ts=integer_ts, epss=(0.4, 0.2, 0.1), probe_epss=(1.0, 0.5, 0.25),
                             resolution=64, probe_size=2048)
    if fid in ("SphereEno", "SphereEnoUnperturbed"):
        gamma = flow.gamma if fid == "SphereEno" else 1.0
        return EntropyConfig(ts=tuple(float(t) for t in range(1, 13)), epss=(0.2, 0.1, 0.05),
                             probe_epss=(8.0, 4.0, 2.0), time_scale=1.0 / gamma,
                             resolution=32, probe_size=2048)
    if fid == "CatMapSuspension":
        return EntropyConfig(ts=tuple(float(t) for t in range(2, 9)), epss=(0.2, 0.1, 0.05),
                             resolution=8, probe_size=2000, step=0.05, record_every=0.1)
    return EntropyConfig(ts=integer_ts, epss=(0.4, 0.2, 0.1), resolution=32, probe_size=512)


def probe_set(flow: FlowSpec, n: int) -> np.ndarray:
    """A one-dimensional compact set ``K`` in ``M*`` where rescaled growth concentrates.

    Torus flows: the vertical circle ``x = -2``.  Sphere flows: a parallel in
    the contracting band.  Suspension: a short unstable segment at ``s = 0``.
    """
    if n < 1:
        raise DomainError("probe size must be >= 1")
    fid = flow.flow_id
    s = np.arange(n) / n
    if fid in ("ConstantTorus", "LinearTorus", "TorusItem4"):
        ch = flow.chart
        return np.column_stack([np.full(n, ch.origin[0]), ch.origin[1] + ch.sides[1] * s])
    if fid in ("SphereEno", "SphereEnoUnperturbed"):
        z = flow.parallel_level() if fid == "SphereEno" else -0.3
        r = math.sqrt(1.0 - z * z)
        th = 2.0 * math.pi * s
        return np.column_stack([r * np.cos(th), r * np.sin(th), np.full(n, z)])
    if fid == "CatMapSuspension":
        _, u, _ = flow.chart.eigen()
        ell = 0.15 * s
        return np.column_stack([0.1 + ell * u[0], 0.2 + ell * u[1], np.zeros(n)])
    raise DomainError(f"no probe set for flow {fid!r}")


def _counts_for(flow, pts, ts, epss, rescaled, on_sublevels, cfg):
    """Cover counts of a point set; ``on_sublevels`` restricts eps-cells to ``M_eps``."""
    S = make_sample(flow, pts, max(ts), cfg.step, cfg.record_every)
    b = S.bundle
    n = len(S)
    masks = None
    cands = S
    used = list(epss)
    if rescaled:
        alive = b.speeds.min(axis=1) >= FREEZE_SPEED
        if on_sublevels:
            sp0 = b.speeds[:, 0]
            masks = {float(e): sp0 >= e for e in epss}
            used = [e for e in epss if masks[float(e)].any()]
            if not used:
                return [], n, []
        if not alive.all():
            keep = np.nonzero(alive)[0]
            cands = Sample(flow, S.points[keep], S.horizon, S.step, S.record_every,
                           "candidates", _bundle=b.subset(keep))
    masks = None if masks is None else {float(e): masks[float(e)] for e in used}
    rep = cover_grid(cands, S, ts, used, rescaled, target_masks=masks)
    counts = [(t, e, r.count) for (t, e), r in rep.items()]
    sizes = {float(e): (n if masks is None else int(masks[float(e)].sum())) for e in used}
    return counts, n, sizes


def _agree(a, b, rel=0.10, abs_tol=0.01):
    if not (math.isfinite(a) and math.isfinite(b)):
        return False
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_tol)


def estimate_entropy(flow: FlowSpec, mode: str = "Rescaled", config: EntropyConfig | None = None,
                     K=None) -> EntropyEstimate:
    """Entropy estimate as the largest fitted growth rate over compact samples.

    ``Classical`` covers a chart grid of all of ``M``; ``Rescaled`` covers the
    grid part of each sublevel set ``M_eps``; both also cover the flow's
    probe set and report the larger extrapolated slope (the supremum over
    compact sets).  ``RescaledOnK`` only covers the given ``K``.  The chosen
    set is recomputed at half the sample size; ``diagnostics['refinement']``
    records whether the two slopes agree within 10%.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    cfg = config or default_config(flow)
    ts = cfg.horizons
    rescaled = mode != "Classical"
    probe_eps = (cfg.probe_epss or cfg.epss) if rescaled else cfg.epss

    jobs = []
    if mode == "RescaledOnK":
        if K is None:
            raise DomainError("RescaledOnK needs K")
        Kp = as_array(flow.chart, K)
        jobs.append(("K", lambda frac: Kp if frac == 1 else Kp[::2], probe_eps, False))
    else:
        if cfg.use_grid:
            def grid_pts(frac, _d=flow.chart.dim):
                res = cfg.resolution if frac == 1 else max(2, round(cfg.resolution * 0.5 ** (1 / _d)))
                return flow.chart.grid(res)
            jobs.append(("grid", grid_pts, cfg.epss, rescaled))
        if cfg.use_probe:
            jobs.append(("probe", lambda frac: probe_set(flow, max(2, int(cfg.probe_size * frac))),
                         probe_eps, False))
    if not jobs:
        raise DomainError("nothing to estimate: both grid and probe disabled")

    def run(job, frac=1):
        label, pts_fn, epss, sublevels = job
        counts, n, sizes = _counts_for(flow, pts_fn(frac), ts, epss, rescaled, sublevels, cfg)
        if not counts:
            return label, None, n
        caps = {e: cfg.saturation * max(sizes[e], 1) for e in sizes}
        est = entropy_slope(counts, window=cfg.window, residual_threshold=cfg.residual_threshold,
                            mode=mode, caps=caps)
        return label, est, n

    from .parallel import parallel_map
    results = parallel_map(run, jobs)
    sets = {}
    best = None
    for (label, est, n), job in zip(results, jobs):
        sets[label] = {"size": n, "extrapolated": None if est is None else est.extrapolated,
                       "per_epsilon": None if est is None else est.per_epsilon}
        if est is None or not math.isfinite(est.extrapolated):
            continue
        if best is None or est.extrapolated > best[1].extrapolated:
            best = (job, est)
    if best is None:
        raise InsufficientDataError("no sample produced a usable slope (all saturated or empty)")
    job, est = best
    diag = {"sets": sets, "chosen": job[0], "time_scale": cfg.time_scale}
    if cfg.refine:
        _, coarse, n = run(job, frac=0.5)
        cs = float("nan") if coarse is None else coarse.extrapolated
        diag["refinement"] = {"coarse_size": n, "coarse": cs, "fine": est.extrapolated,
                              "agree": _agree(cs, est.extrapolated)}
    est.diagnostics = diag
    return est
