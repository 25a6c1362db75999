"""Built-in vector fields, a fixed-step RK4 integrator and trajectory caching.

All fields are evaluated in chart coordinates on ``(n, coord_dim)`` arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, IntegrationError
from .manifolds import Chart, FlatTorus2, ManifoldPoint, MappingTorus, Sphere2, as_array

FREEZE_SPEED = 1e-14
DEFAULT_STEP = 1e-3


# ---------------------------------------------------------------------------
# smooth profile helpers


def _bump(u):
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smoothstep(u):
    """C-infinity step from 0 (u <= 0) to 1 (u >= 1) and its derivative."""
    u = np.asarray(u, dtype=float)
    f0 = _bump(u)
    f1 = _bump(1.0 - u)
    den = f0 + f1
    sigma = f0 / den
    with np.errstate(divide="ignore", invalid="ignore"):
        d0 = np.where(u > 0, f0 / np.where(u > 0, u * u, 1.0), 0.0)
        d1 = np.where(u < 1, f1 / np.where(u < 1, (1 - u) ** 2, 1.0), 0.0)
    dsigma = (d0 * f1 + f0 * d1) / (den * den)
    return sigma, dsigma


def _blend(x, x0, x1, left, dleft, right, dright):
    width = x1 - x0
    s, ds = smoothstep((x - x0) / width)
    val = s * right + (1 - s) * left
    der = ds / width * (right - left) + s * dright + (1 - s) * dleft
    return val, der


def item4_profile(x):
    """The torus profile ``rho`` and ``rho'`` on the circle ``[-2, 2)``.

    rho = 1 on [-2,-1] and [1,2], rho = -x on [-1/4,1/4], rho = x - 2/3 on
    [7/12, 3/4]; the gaps are filled with smoothstep blends of the neighbouring
    pieces, which keeps the forced sign on each gap.
    """
    x = np.mod(np.asarray(x, dtype=float) + 2.0, 4.0) - 2.0
    val = np.ones_like(x)
    der = np.zeros_like(x)
    one, zero = np.ones_like(x), np.zeros_like(x)

    m = (x > -1.0) & (x < -0.25)
    v, d = _blend(x[m], -1.0, -0.25, one[m], zero[m], -x[m], -one[m])
    val[m], der[m] = v, d

    m = (x >= -0.25) & (x <= 0.25)
    val[m], der[m] = -x[m], -1.0

    m = (x > 0.25) & (x < 7 / 12)
    v, d = _blend(x[m], 0.25, 7 / 12, -x[m], -one[m], x[m] - 2 / 3, one[m])
    val[m], der[m] = v, d

    m = (x >= 7 / 12) & (x <= 0.75)
    val[m], der[m] = x[m] - 2 / 3, 1.0

    m = (x > 0.75) & (x < 1.0)
    v, d = _blend(x[m], 0.75, 1.0, x[m] - 2 / 3, one[m], one[m], zero[m])
    val[m], der[m] = v, d
    return val, der


def eno_base_profile(z):
    """``rho0(z) = (1 - z^2) exp(-1/(1 - z^2))`` and its derivative."""
    z = np.asarray(z, dtype=float)
    w = 1.0 - z * z
    inside = w > 0
    ws = np.where(inside, w, 1.0)
    e = np.where(inside, np.exp(-1.0 / ws), 0.0)
    val = np.where(inside, ws * e, 0.0)
    der = np.where(inside, -2.0 * z * e * (1.0 + 1.0 / ws), 0.0)
    return val, der


# ---------------------------------------------------------------------------
# flow families


class FlowSpec:
    flow_id: str = "abstract"
    chart: Chart

    def field(self, y):
        raise NotImplementedError

    def speed(self, y):
        return np.linalg.norm(self.field(y), axis=-1)

    def jacobian(self, y):
        """Analytic Jacobian ``(n, d, d)`` or None (finite differences are used)."""
        return None

    def lipschitz_bound(self):
        """Family-provided Lipschitz constant, or None."""
        return None

    def post_step(self, y):
        return y

    @property
    def singular_set(self) -> str:
        raise NotImplementedError

    @property
    def nonsingular(self) -> bool:
        return self.singular_set == "∅"

    def params(self) -> dict:
        return {}

    def describe(self):
        return {"flow": self.flow_id, "manifold": self.chart.kind, "params": self.params(),
                "singular_set": self.singular_set}


@dataclass(frozen=True)
class ConstantTorus(FlowSpec):
    velocity: tuple = (1.0, 0.0)
    chart: Chart = field(default_factory=FlatTorus2)
    flow_id: str = field(default="ConstantTorus", init=False)

    def field(self, y):
        y = np.asarray(y)
        return np.broadcast_to(np.asarray(self.velocity, dtype=float), y.shape).copy()

    def jacobian(self, y):
        return np.zeros((len(y), 2, 2))

    def lipschitz_bound(self):
        return 0.0

    @property
    def singular_set(self):
        return "∅" if any(self.velocity) else "M"

    def params(self):
        return {"velocity": list(self.velocity)}


@dataclass(frozen=True)
class LinearTorus(ConstantTorus):
    """Constant field with an irrational slope; no periodic orbits."""

    velocity: tuple = (1.0, (math.sqrt(5.0) - 1.0) / 2.0)
    flow_id: str = field(default="LinearTorus", init=False)


@dataclass(frozen=True)
class TorusItem4(FlowSpec):
    """``X(x, y) = rho(x) (1, 0)`` on the side-4 torus with two singular circles."""

    chart: Chart = field(default_factory=FlatTorus2)
    flow_id: str = field(default="TorusItem4", init=False)

    def field(self, y):
        y = np.asarray(y)
        rho, _ = item4_profile(y[..., 0])
        return np.stack([rho, np.zeros_like(rho)], axis=-1)

    def speed(self, y):
        return np.abs(item4_profile(np.asarray(y)[..., 0])[0])

    def jacobian(self, y):
        _, d = item4_profile(np.asarray(y)[:, 0])
        J = np.zeros((len(y), 2, 2))
        J[:, 0, 0] = d
        return J

    def lipschitz_bound(self):
        return _item4_lipschitz()

    @property
    def singular_set(self):
        return "{0, 2/3} × [0,4]"

    @property
    def circle_x(self):
        return -2.0


@lru_cache(maxsize=None)
def _item4_lipschitz():
    xs = np.linspace(-2.0, 2.0, 400001)
    return float(np.abs(item4_profile(xs)[1]).max())


@dataclass(frozen=True)
class SphereEnoUnperturbed(FlowSpec):
    """``X0 = rho0(z) (xz, yz, -x^2 - y^2)`` on the unit sphere."""

    chart: Chart = field(default_factory=Sphere2)
    flow_id: str = field(default="SphereEnoUnperturbed", init=False)

    def profile(self, z):
        return eno_base_profile(z)

    def field(self, y):
        y = np.asarray(y)
        x_, y_, z = y[..., 0], y[..., 1], y[..., 2]
        rho, _ = self.profile(z)
        w = np.stack([x_ * z, y_ * z, -(x_ * x_ + y_ * y_)], axis=-1)
        return rho[..., None] * w

    def speed(self, y):
        y = np.asarray(y)
        z = y[..., 2]
        r2 = y[..., 0] ** 2 + y[..., 1] ** 2
        rho, _ = self.profile(z)
        return np.abs(rho) * np.sqrt(r2 * (z * z + r2))

    def jacobian(self, y):
        y = np.asarray(y)
        x_, y_, z = y[:, 0], y[:, 1], y[:, 2]
        rho, drho = self.profile(z)
        J = np.zeros((len(y), 3, 3))
        J[:, 0, 0] = z
        J[:, 0, 2] = x_
        J[:, 1, 1] = z
        J[:, 1, 2] = y_
        J[:, 2, 0] = -2 * x_
        J[:, 2, 1] = -2 * y_
        J *= rho[:, None, None]
        w = np.stack([x_ * z, y_ * z, -(x_ * x_ + y_ * y_)], axis=-1)
        J[:, :, 2] += w * drho[:, None]
        return J

    def post_step(self, y):
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    @property
    def singular_set(self):
        return "{(0,0,1), (0,0,-1)}"


@dataclass(frozen=True)
class SphereEno(SphereEnoUnperturbed):
    """Perturbed sphere field ``rho(z) = rho0(z) tanh((z-a)/w) tanh((z-b)/w)``.

    ``rho`` has simple zeros at ``b < a < 0``, is positive above ``a`` and below
    ``b``, negative in between, and ``|rho| <= rho0`` everywhere.
    """

    a: float = -0.3
    b: float = -0.7
    width: float = 0.1
    flow_id: str = field(default="SphereEno", init=False)

    def __post_init__(self):
        if not -1.0 < self.b < self.a < 0.0:
            raise DomainError("need -1 < b < a < 0")
        if self.width <= 0:
            raise DomainError("smoothing width must be positive")

    def profile(self, z):
        r0, d0 = eno_base_profile(z)
        ta = np.tanh((z - self.a) / self.width)
        tb = np.tanh((z - self.b) / self.width)
        q = ta * tb
        dq = ((1 - ta * ta) * tb + ta * (1 - tb * tb)) / self.width
        return r0 * q, d0 * q + r0 * dq

    @property
    def gamma(self) -> float:
        """Contraction rate ``rho'(a) (1 - a^2)`` towards the circle ``z = a``."""
        _, d = self.profile(np.array([self.a]))
        return float(d[0] * (1 - self.a ** 2))

    def decay_rate(self, z):
        """``rho'(z) (1 - z^2)``, the local log-decay rate of ``rho(z(t))``."""
        z = np.asarray(z, dtype=float)
        return self.profile(z)[1] * (1 - z * z)

    def parallel_level(self, margin: float = 0.8) -> float:
        """Height ``-delta`` of a parallel on which the rate bound holds.

        Finds the largest ``z* > a`` such that ``rho' > 0`` and the decay rate
        stays >= gamma on ``[a, z*]``, and returns ``a + margin (z* - a)``.
        """
        zs = np.linspace(self.a, -1e-3, 20001)
        rate = self.decay_rate(zs)
        _, dr = self.profile(zs)
        ok = (rate >= self.gamma * (1 - 1e-12)) & (dr > 0)
        bad = np.nonzero(~ok)[0]
        last = zs[-1] if len(bad) == 0 else zs[max(bad[0] - 1, 0)]
        return float(self.a + margin * (last - self.a))

    def kappa(self, level: float) -> float:
        rho, _ = self.profile(np.array([level]))
        return float(rho[0] * math.sqrt(1 - level * level))

    @property
    def singular_set(self):
        return (f"{{(0,0,1), (0,0,-1)}} ∪ {{z = {self.a:g}}} ∪ {{z = {self.b:g}}}")

    def params(self):
        return {"a": self.a, "b": self.b, "width": self.width}


@dataclass(frozen=True)
class CatMapSuspension(FlowSpec):
    """Unit-speed suspension of a hyperbolic toral automorphism (roof 1).

    Norms are those of the Sol metric ``lam^{2s} da^2 + lam^{-2s} db^2 + ds^2``
    in eigen-coordinates, which is compatible with the gluing: ``|X| = 1`` and
    ``|nabla X| = log lam``.
    """

    matrix: tuple = ((2, 1), (1, 1))
    flow_id: str = field(default="CatMapSuspension", init=False)

    def __post_init__(self):
        A = np.asarray(self.matrix)
        if abs(np.trace(A)) <= 2:
            raise DomainError("cat-map suspension needs a hyperbolic matrix (|trace| > 2)")

    @property
    def chart(self):
        return MappingTorus(tuple(tuple(r) for r in self.matrix))

    @property
    def lam(self):
        return self.chart.eigen()[0]

    def field(self, y):
        out = np.zeros_like(np.asarray(y, dtype=float))
        out[..., 2] = 1.0
        return out

    def speed(self, y):
        return np.ones(np.asarray(y).shape[:-1])

    def lipschitz_bound(self):
        return float(math.log(self.lam))

    def post_step(self, y):
        return self.chart.reduce(y)

    @property
    def singular_set(self):
        return "∅"

    def params(self):
        return {"matrix": [list(r) for r in self.matrix]}


BUILTIN_FLOWS = {
    "ConstantTorus": ConstantTorus,
    "LinearTorus": LinearTorus,
    "TorusItem4": TorusItem4,
    "SphereEno": SphereEno,
    "SphereEnoUnperturbed": SphereEnoUnperturbed,
    "CatMapSuspension": CatMapSuspension,
}


def builtin(name: str, **params) -> FlowSpec:
    try:
        cls = BUILTIN_FLOWS[name]
    except KeyError:
        raise DomainError(f"unknown flow {name!r}; known: {sorted(BUILTIN_FLOWS)}") from None
    return cls(**params)


# ---------------------------------------------------------------------------
# evaluation and integration


def evaluate_field(flow: FlowSpec, p: ManifoldPoint):
    if p.chart != flow.chart:
        raise DomainError("point chart does not match the flow chart")
    y = p.array()[None, :]
    return flow.field(y)[0], float(flow.speed(y)[0])


@dataclass
class Trajectory:
    base_point: ManifoldPoint
    times: np.ndarray
    points: np.ndarray
    speeds: np.ndarray
    step: float

    def __len__(self):
        return len(self.times)


@dataclass
class TrajectoryBundle:
    """Trajectories of many base points sampled at shared times."""

    chart: Chart
    times: np.ndarray
    points: np.ndarray  # (n, T, coord_dim)
    speeds: np.ndarray  # (n, T)
    step: float
    _features: np.ndarray = field(default=None, repr=False)

    @property
    def features(self):
        if self._features is None:
            self._features = self.chart.features(self.points)
        return self._features

    @property
    def bases(self):
        return self.points[:, 0, :]

    def __len__(self):
        return self.points.shape[0]

    def index_of(self, t: float) -> int:
        """Index of the last sample with time <= t (within 1e-9)."""
        k = int(np.searchsorted(self.times, t + 1e-9, side="right")) - 1
        return k

    def subset(self, idx):
        f = None if self._features is None else self._features[idx]
        return TrajectoryBundle(self.chart, self.times, self.points[idx], self.speeds[idx],
                                self.step, f)

    def trajectory(self, i) -> Trajectory:
        return Trajectory(self.chart.point(self.points[i, 0]), self.times.copy(),
                          self.points[i].copy(), self.speeds[i].copy(), self.step)


def _rk4_step(flow, y, h, frozen):
    k1 = flow.field(y)
    k2 = flow.field(y + 0.5 * h * k1)
    k3 = flow.field(y + 0.5 * h * k2)
    k4 = flow.field(y + h * k3)
    nxt = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if frozen is not None and frozen.any():
        nxt[frozen] = y[frozen]
    return flow.post_step(nxt)


def integrate_many(flow: FlowSpec, points, horizon: float, step: float = DEFAULT_STEP,
                   record_every: float | None = None) -> TrajectoryBundle:
    """Integrate all ``points`` to ``horizon`` with classical RK4.

    Samples are recorded every ``record_every`` time units (default: every
    step) and always at the horizon.  Points whose speed is below 1e-14 are
    treated as exact equilibria.
    """
    if horizon < 0:
        raise DomainError("horizon must be >= 0")
    if step <= 0:
        raise DomainError("step must be > 0")
    chart = flow.chart
    y = as_array(chart, points).copy()
    nsteps = int(round(horizon / step)) if horizon > 0 else 0
    if horizon > 0:
        nsteps = max(nsteps, 1)
    h = horizon / nsteps if nsteps else step
    stride = 1 if record_every is None else max(1, int(round(record_every / h)))
    rec = sorted(set(range(0, nsteps + 1, stride)) | {nsteps})
    frozen = flow.speed(y) < FREEZE_SPEED
    pts = np.empty((len(y), len(rec), chart.coord_dim))
    pts[:, 0] = y
    r = 1
    for k in range(1, nsteps + 1):
        y = _rk4_step(flow, y, h, frozen)
        if r < len(rec) and rec[r] == k:
            if not np.all(np.isfinite(y)):
                raise IntegrationError("non-finite state during integration", k * h)
            pts[:, r] = y
            r += 1
    pts = chart.reduce(pts)
    speeds = flow.speed(pts)
    times = np.asarray(rec, dtype=float) * h
    return TrajectoryBundle(chart, times, pts, speeds, h)


def integrate(flow: FlowSpec, p, horizon: float, step: float = DEFAULT_STEP,
              record_every: float | None = None) -> Trajectory:
    if isinstance(p, ManifoldPoint) and p.chart != flow.chart:
        raise DomainError("point chart does not match the flow chart")
    arr = p.array() if isinstance(p, ManifoldPoint) else np.asarray(p, dtype=float)
    if horizon > 0 and step > horizon:
        raise DomainError("step must not exceed the horizon")
    return integrate_many(flow, arr[None, :], horizon, step, record_every).trajectory(0)


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class FlowSummary:
    sup_speed: float
    inf_speed: float
    lipschitz: float
    singular_set_descr: str

    @property
    def nonsingular(self):
        return self.inf_speed > 0


def _fd_jacobian(flow, y, h=1e-6):
    n, d = y.shape
    J = np.empty((n, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        J[:, :, k] = (flow.field(y + e) - flow.field(y - e)) / (2 * h)
    return J


@lru_cache(maxsize=256)
def _grid_stats(flow: FlowSpec, k: int):
    y = flow.chart.grid(k)
    sp = flow.speed(y)
    J = flow.jacobian(y)
    if J is None:
        J = _fd_jacobian(flow, y)
    lip = float(np.linalg.norm(J, ord=2, axis=(1, 2)).max()) if len(y) else 0.0
    return float(sp.max()), float(sp.min()), lip


def flow_summary(flow: FlowSpec, resolution: int = 32) -> FlowSummary:
    """Speed extremes and a Lipschitz constant over sampled grids.

    Statistics are taken over the union of the grids of resolution 1..resolution,
    which makes them monotone in ``resolution``.
    """
    if resolution < 1:
        raise DomainError("resolution must be >= 1")
    sup, inf, lip = 0.0, math.inf, 0.0
    for k in range(1, resolution + 1):
        s, i, l = _grid_stats(flow, k)
        sup, inf, lip = max(sup, s), min(inf, i), max(lip, l)
    bound = flow.lipschitz_bound()
    if bound is not None:
        lip = max(lip, bound)
    if not flow.nonsingular:
        inf = 0.0
    return FlowSummary(sup, inf, lip, flow.singular_set)
