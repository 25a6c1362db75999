"""Monte-Carlo checks of the pointwise lemmas behind the rescaled entropy.

Each check returns a :class:`LemmaReport`.  Passing means ``violations == 0``;
``worst_margin`` is the smallest slack seen among satisfied inequalities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SamplingError, SingularBaseError, UnsupportedError
from .estimators import EntropyConfig, _agree, cover_grid, estimate_entropy, make_sample
from .flows import (FREEZE_SPEED, ConstantTorus, FlowSpec, SphereEnoUnperturbed, TorusItem4,
                    flow_summary, integrate_many)
from .manifolds import as_array
from .metrics import check_bases, horizon_indices, pair_sup

LEMMA_IDS = ("Wendy", "Symmetry", "Cope", "HalfVariational", "NonsingularEquality",
             "ConjugacySmoke")
R0_LADDER = tuple(2.0 ** -k for k in range(11))
STEP = 0.01
RECORD = 0.05


@dataclass(frozen=True)
class LemmaReport:
    lemma_id: str
    samples: int
    violations: int
    parameters: dict = field(default_factory=dict)
    worst_margin: float = math.inf
    note: str = ""

    def __post_init__(self):
        if self.lemma_id not in LEMMA_IDS:
            raise DomainError(f"unknown lemma id {self.lemma_id!r}")

    @property
    def passed(self):
        return self.violations == 0


class ProbeR0(float):
    """A float carrying the probe report; ``flagged`` means even the smallest rung failed."""

    flagged: bool
    report: LemmaReport

    def __new__(cls, value, flagged, report):
        obj = super().__new__(cls, value)
        obj.flagged = flagged
        obj.report = report
        return obj


def random_points(flow: FlowSpec, n: int, rng, min_speed: float = FREEZE_SPEED):
    """``n`` uniform points of the chart with speed at least ``min_speed``."""
    ch = flow.chart
    out = []
    have = 0
    for _ in range(100):
        m = max(2 * (n - have), 16)
        if ch.kind == "FlatTorus2":
            p = np.asarray(ch.origin) + rng.random((m, 2)) * np.asarray(ch.sides)
        elif ch.kind == "Sphere2":
            p = rng.standard_normal((m, 3))
        elif ch.kind == "MappingTorus":
            p = rng.random((m, 3))
        else:
            raise UnsupportedError(f"no sampler for chart {ch.kind}")
        p = ch.reduce(p)
        p = p[flow.speed(p) >= min_speed]
        out.append(p)
        have += len(p)
        if have >= n:
            break
    pts = np.vstack(out)[:n]
    if len(pts) < n:
        raise SamplingError(f"could not find {n} points with speed >= {min_speed}")
    return pts


def _unit_ball(rng, n, dim):
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.random((n, 1)) ** (1.0 / dim)


def probe_r0(flow: FlowSpec, trials: int = 10_000, seed: int = 0) -> ProbeR0:
    """Largest ``r`` on the ladder ``1, 1/2, ..., 2^-10`` such that every sampled pair
    with ``d(a, b) <= r |X(a)|`` has ``|X(a)|/2 <= |X(b)| <= 2 |X(a)|``.

    The same bases and offset directions are reused on every rung.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    ch = flow.chart
    a = random_points(flow, trials, rng)
    u = _unit_ball(rng, trials, ch.coord_dim)
    sa = flow.speed(a)
    worst = math.inf
    tested = 0
    for r in R0_LADDER:
        rad = r * sa
        b = ch.reduce(a + rad[:, None] * u)
        ok = ch.distance_array(a, b) <= rad
        ratio = flow.speed(b[ok]) / sa[ok]
        tested = int(ok.sum())
        lo, hi = ratio.min(initial=1.0), ratio.max(initial=1.0)
        if lo >= 0.5 and hi <= 2.0:
            worst = min(math.log(2.0) - abs(math.log(lo)), math.log(2.0) - abs(math.log(hi)))
            rep = LemmaReport("Wendy", tested, 0, {"r0": r}, worst)
            return ProbeR0(r, False, rep)
    r = R0_LADDER[-1]
    rep = LemmaReport("Wendy", tested, 1, {"r0": r}, float("-inf"),
                      note="speed ratio bound fails at every ladder value")
    return ProbeR0(r, True, rep)


def _ball_sample(flow, x, t, radius, n_prop, rng):
    """Rejection sample of ``B*(x, t, radius)``.

    Proposal scales are log-uniform down to ``e^{-2Lt}`` (or ``2^-8``), which
    the cone bound says the ball must contain, so contracting flows still get
    hits.
    """
    ch = flow.chart
    sx = float(flow.speed(x[None, :])[0])
    if sx < FREEZE_SPEED:
        raise SamplingError(f"x = {x} lies on the singular set")
    depth = max(8 * math.log(2.0), 2.0 * flow_summary(flow).lipschitz * t)
    scales = radius * sx * np.exp(-depth * rng.random(n_prop))
    prop = ch.reduce(x + scales[:, None] * _unit_ball(rng, n_prop, ch.coord_dim))
    pts = np.vstack([x[None, :], prop])
    b = integrate_many(flow, pts, t, STEP, RECORD)
    k = horizon_indices(b, [t])[0]
    try:
        check_bases(b, k, idx=[0])
    except SingularBaseError as exc:
        raise SamplingError(f"orbit of x reaches the singular set before t={t}") from exc
    idx = np.arange(1, len(pts))
    d = pair_sup(b, b, np.zeros(len(idx), dtype=np.int64), idx, [k], True)[:, 0]
    inside = idx[d < radius]
    return b, k, inside, d


def check_ball_inclusion(flow: FlowSpec, x, t: float, epsilon: float, trials: int = 1000,
                         seed: int = 0, r0: float | None = None) -> LemmaReport:
    """Sample ``y, w`` in ``B*(x, t, eps/4)`` and check ``d*_t(y, w) < eps`` (base ``y``)."""
    if epsilon <= 0 or t < 0:
        raise DomainError("need epsilon > 0 and t >= 0")
    if r0 is not None and epsilon >= r0:
        raise DomainError(f"epsilon={epsilon} must be below r0={r0}")
    rng = np.random.default_rng(seed)
    xa = as_array(flow.chart, [x] if not isinstance(x, np.ndarray) else x)[0]
    b, k, inside, _ = _ball_sample(flow, xa, t, epsilon / 4.0, max(4 * trials, 64), rng)
    if len(inside) < 2:
        raise SamplingError(f"only {len(inside)} proposals landed in B*(x, {t}, {epsilon / 4})")
    inside = np.concatenate([[0], inside])
    i = inside[rng.integers(0, len(inside), trials)]
    j = inside[rng.integers(0, len(inside), trials)]
    check_bases(b, k, idx=i)
    d = pair_sup(b, b, i, j, [k], True)[:, 0]
    viol = int(np.count_nonzero(d >= epsilon))
    margin = float(epsilon - d.max())
    return LemmaReport("Symmetry", trials, viol, {"t": t, "epsilon": epsilon,
                                                  "ball_points": len(inside)}, margin)


def check_cone_bound(flow: FlowSpec, trials: int = 200, horizon: float = 6.0, seed: int = 0,
                     inflate: float = 1.05, bases=None, L: float | None = None) -> LemmaReport:
    """``e^{-Ls} <= |X(phi_s z)| / |X(z)| <= e^{Ls}`` at every recorded sample."""
    if trials < 1 or horizon <= 0:
        raise DomainError("need trials >= 1 and horizon > 0")
    rng = np.random.default_rng(seed)
    lip = (flow_summary(flow).lipschitz if L is None else L) * inflate
    z = random_points(flow, trials, rng, min_speed=1e-6) if bases is None \
        else as_array(flow.chart, bases)
    b = integrate_many(flow, z, horizon, STEP, RECORD)
    s = b.times[None, 1:]
    logr = np.log(b.speeds[:, 1:] / b.speeds[:, :1])
    slack = lip * s - np.abs(logr)
    viol = int(np.count_nonzero((slack < -1e-9).any(axis=1)))
    return LemmaReport("Cope", len(z), viol, {"L": lip, "t": horizon},
                       float(slack.min()) if slack.size else math.inf)


# ---------------------------------------------------------------------------
# conjugacy smoke test


@dataclass(frozen=True)
class Identity:
    def __call__(self, flow, pts):
        return pts


@dataclass(frozen=True)
class TorusTranslation:
    vector: tuple

    def __call__(self, flow, pts):
        return flow.chart.reduce(pts + np.asarray(self.vector, dtype=float))


@dataclass(frozen=True)
class TorusAxisSwapIfSymmetric:
    def __call__(self, flow, pts):
        return flow.chart.reduce(pts[:, ::-1])


@dataclass(frozen=True)
class SphereRotation:
    axis: tuple
    angle: float

    def matrix(self):
        k = np.asarray(self.axis, dtype=float)
        k = k / np.linalg.norm(k)
        Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        return np.eye(3) + math.sin(self.angle) * Kx + (1 - math.cos(self.angle)) * Kx @ Kx

    def __call__(self, flow, pts):
        return flow.chart.reduce(pts @ self.matrix().T)


def pushforward(flow: FlowSpec, iso):
    """The field ``g_* X`` when it is a representable built-in, else UnsupportedError."""
    fid = flow.flow_id
    if isinstance(iso, Identity):
        return flow
    if isinstance(iso, TorusTranslation):
        if isinstance(flow, ConstantTorus):
            return flow
        if isinstance(flow, TorusItem4) and abs(math.remainder(iso.vector[0], flow.chart.sides[0])) < 1e-12:
            return flow
    elif isinstance(iso, TorusAxisSwapIfSymmetric):
        if isinstance(flow, ConstantTorus):
            ch = flow.chart
            if ch.sides[0] == ch.sides[1]:
                return type(flow)(velocity=tuple(flow.velocity[::-1]), chart=ch)
    elif isinstance(iso, SphereRotation):
        if isinstance(flow, SphereEnoUnperturbed):
            k = np.asarray(iso.axis, dtype=float)
            if np.allclose(k[:2], 0.0) and k[2] != 0:
                return flow
    raise UnsupportedError(f"{type(iso).__name__} does not map {fid} to a representable field")


def conjugacy_smoke(flow: FlowSpec, isometry, ts=(1.0, 2.0, 3.0), epss=(0.37, 0.23),
                    resolution: int = 16, config: EntropyConfig | None = None,
                    compare_entropy: bool = True) -> LemmaReport:
    """Compare counts of ``flow`` on a grid ``P`` with counts of ``g_* X`` on ``g(P)``.

    Points keep their order, so the greedy choices correspond one to one and
    the counts must agree exactly.  Only isometries commuting with the field
    (or mapping it to another built-in) are representable.
    """
    other = pushforward(flow, isometry)
    P = flow.chart.grid(resolution)
    P = P[flow.speed(P) >= 1e-6]
    Q = isometry(flow, P)
    horizon = max(ts)
    counts = []
    for f, pts in ((flow, P), (other, Q)):
        S = make_sample(f, pts, horizon, STEP, RECORD, sort=False)
        rep = cover_grid(S, S, ts, epss, True)
        counts.append({cell: r.count for cell, r in rep.items()})
    viol = sum(counts[0][c] != counts[1][c] for c in counts[0])
    params = {"cells": len(counts[0])}
    margin = 0.0
    if compare_entropy:
        e1 = estimate_entropy(flow, "Rescaled", config).extrapolated
        e2 = e1 if other is flow else estimate_entropy(other, "Rescaled", config).extrapolated
        params.update(e_star=e1, e_star_image=e2)
        if not _agree(e1, e2):
            viol += 1
        margin = max(0.10 * max(abs(e1), abs(e2)), 0.01) - abs(e1 - e2)
    return LemmaReport("ConjugacySmoke", len(P), int(viol), params, margin,
                       note="isometric coordinate changes only")
