"""Model closed manifolds: flat 2-torus, round 2-sphere and the mapping torus of a
hyperbolic toral automorphism.

Points are handled in bulk as ``(n, coord_dim)`` float arrays; ``ManifoldPoint``
wraps a single point for the scalar API.  Every chart also exposes a *feature*
representation in which its distance is cheap to evaluate and a KD-tree can
prune candidate pairs exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError

SPHERE_TOL = 1e-12


class Chart:
    kind: str = "abstract"
    dim: int = 0
    coord_dim: int = 0

    def reduce(self, coords):
        raise NotImplementedError

    def features(self, coords):
        """Representation used for distance evaluation (``(..., k)`` array)."""
        return np.asarray(coords, dtype=float)

    def feature_distance(self, fa, fb):
        raise NotImplementedError

    def distance_array(self, a, b):
        return self.feature_distance(self.features(a), self.features(b))

    def grid(self, resolution: int) -> np.ndarray:
        raise NotImplementedError

    def neighbor_pairs(self, fa, fb, radius: float):
        """Index pairs ``(i, j)`` with ``d(a_i, b_j) < radius``.

        Works on feature arrays; the returned set is exact up to a relative
        slack of 1e-9 on the radius (a superset, never a subset).
        """
        tree_a = self._tree(fa)
        tree_b = tree_a if fb is fa else self._tree(fb)
        res = tree_a.sparse_distance_matrix(tree_b, self._tree_radius(radius),
                                            output_type="ndarray")
        return res["i"].astype(np.int64), res["j"].astype(np.int64)

    def _tree(self, f):
        return cKDTree(np.asarray(f, dtype=float))

    def _tree_radius(self, radius):
        return radius * (1 + 1e-9)

    def point(self, coords) -> "ManifoldPoint":
        return ManifoldPoint(self, tuple(float(c) for c in coords))

    def points(self, arr) -> list:
        return [self.point(row) for row in np.atleast_2d(arr)]


@dataclass(frozen=True)
class FlatTorus2(Chart):
    """Flat torus ``[x0, x0+Lx) x [y0, y0+Ly)`` with opposite sides identified."""

    sides: tuple = (4.0, 4.0)
    origin: tuple = (-2.0, 0.0)
    kind: str = field(default="FlatTorus2", init=False)
    dim: int = field(default=2, init=False)
    coord_dim: int = field(default=2, init=False)

    def __post_init__(self):
        if len(self.sides) != 2 or min(self.sides) <= 0:
            raise DomainError(f"torus side lengths must be positive, got {self.sides}")

    def reduce(self, coords):
        c = np.asarray(coords, dtype=float)
        o = np.asarray(self.origin)
        s = np.asarray(self.sides)
        r = np.mod(c - o, s)
        r = np.where(r >= s, r - s, r)
        return r + o

    def features(self, coords):
        return self.reduce(coords)

    def feature_distance(self, fa, fb):
        s = np.asarray(self.sides)
        # coordinates are reduced, so |a - b| < side already
        d = np.abs(np.asarray(fa) - np.asarray(fb))
        d = np.minimum(d, s - d)
        return np.sqrt(np.sum(d * d, axis=-1))

    def grid(self, resolution):
        if resolution < 1:
            raise DomainError("resolution must be >= 1")
        n = int(resolution)
        xs = self.origin[0] + self.sides[0] * np.arange(n) / n
        ys = self.origin[1] + self.sides[1] * np.arange(n) / n
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def _tree(self, f):
        s = np.asarray(self.sides)
        data = np.mod(np.asarray(f, dtype=float) - np.asarray(self.origin), s)
        data = np.where(data >= s, 0.0, data)
        return cKDTree(data, boxsize=s)


@dataclass(frozen=True)
class Sphere2(Chart):
    """Unit sphere in R^3 with the great-circle distance."""

    radius: float = 1.0
    kind: str = field(default="Sphere2", init=False)
    dim: int = field(default=2, init=False)
    coord_dim: int = field(default=3, init=False)

    def reduce(self, coords):
        c = np.asarray(coords, dtype=float)
        n = np.linalg.norm(c, axis=-1, keepdims=True)
        if np.any(n == 0):
            raise DomainError("cannot project the origin onto the sphere")
        return c / n

    def feature_distance(self, fa, fb):
        a = np.asarray(fa)
        b = np.asarray(fb)
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
        dot = np.sum(a * b, axis=-1)
        return np.arctan2(cross, dot)

    def grid(self, resolution):
        if resolution < 1:
            raise DomainError("resolution must be >= 1")
        n = int(resolution) ** 2
        i = np.arange(n)
        z = 1.0 - (2.0 * i + 1.0) / n
        r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        theta = i * math.pi * (3.0 - math.sqrt(5.0))
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
        return self.reduce(pts)

    def _tree_radius(self, radius):
        return 2.0 * math.sin(min(radius, math.pi) / 2.0) * (1 + 1e-9) + 1e-15


@dataclass(frozen=True)
class MappingTorus(Chart):
    """Mapping torus ``T^2 x [0,1] / (p,1) ~ (A p, 0)`` of an integer matrix ``A``.

    Coordinates are ``(u, v, s)`` with ``u, v, s`` in ``[0, 1)``.  Distances are
    chord lengths of the smooth embedding

        F(p, s) = (c(s), sin(pi s) g(p), cos^2(pi s) g(q))

    where ``c`` and ``g`` are round embeddings of the unit circle and torus with
    radius 1/4, and ``q = p`` for ``s < 1/2``, ``q = A p`` otherwise.  ``F`` is
    injective and compatible with the gluing, so this is an honest metric
    inducing the manifold topology.  The radius makes antipodal chords equal
    the intrinsic half-length 1/2, so on each circle factor the chord lies
    between the arc length and pi/2 times it.
    """

    matrix: tuple = ((2, 1), (1, 1))
    kind: str = field(default="MappingTorus", init=False)
    dim: int = field(default=3, init=False)
    coord_dim: int = field(default=3, init=False)

    def __post_init__(self):
        A = np.asarray(self.matrix)
        if A.shape != (2, 2) or not np.all(A == np.round(A)):
            raise DomainError("mapping torus matrix must be an integer 2x2 matrix")
        if abs(round(np.linalg.det(A))) != 1:
            raise DomainError("mapping torus matrix must have |det| = 1")

    @property
    def A(self):
        return np.asarray(self.matrix, dtype=float)

    def eigen(self):
        """Return ``(lam, unstable, stable)`` for the expanding eigenvalue."""
        w, V = np.linalg.eig(self.A)
        order = np.argsort(-np.abs(w))
        w, V = w[order].real, V[:, order].real
        return abs(w[0]), V[:, 0] / np.linalg.norm(V[:, 0]), V[:, 1] / np.linalg.norm(V[:, 1])

    def apply(self, uv):
        return np.mod(np.asarray(uv) @ self.A.T, 1.0)

    def reduce(self, coords):
        c = np.array(coords, dtype=float)
        flat = c.reshape(-1, 3)
        k = np.floor(flat[:, 2]).astype(np.int64)
        uv = flat[:, :2].copy()
        A = np.asarray(self.matrix, dtype=np.int64)
        Ainv = np.rint(np.linalg.inv(self.A)).astype(np.int64)
        for sign, M in ((1, A), (-1, Ainv)):
            todo = k * sign > 0
            while np.any(todo):
                uv[todo] = uv[todo] @ M.T
                k[todo] -= sign
                todo = k * sign > 0
        uv = np.mod(uv, 1.0)
        uv = np.where(uv >= 1.0, 0.0, uv)
        s = flat[:, 2] - np.floor(flat[:, 2])
        s = np.where(s >= 1.0, 0.0, s)
        out = np.column_stack([uv, s])
        return out.reshape(c.shape)

    def features(self, coords):
        c = np.asarray(coords, dtype=float)
        u, v, s = c[..., 0], c[..., 1], c[..., 2]
        two_pi = 2.0 * math.pi
        k = 0.25
        uv = c[..., :2]
        q = np.mod(uv @ self.A.T, 1.0)
        upper = (s >= 0.5)[..., None]
        q = np.where(upper, q, uv)
        b1 = np.sin(math.pi * s)[..., None]
        b2 = (np.cos(math.pi * s) ** 2)[..., None]

        def g(p):
            return k * np.stack([np.cos(two_pi * p[..., 0]), np.sin(two_pi * p[..., 0]),
                                 np.cos(two_pi * p[..., 1]), np.sin(two_pi * p[..., 1])], axis=-1)

        circle = k * np.stack([np.cos(two_pi * s), np.sin(two_pi * s)], axis=-1)
        del u, v
        return np.concatenate([circle, b1 * g(uv), b2 * g(q)], axis=-1)

    def feature_distance(self, fa, fb):
        d = np.asarray(fa) - np.asarray(fb)
        return np.sqrt(np.sum(d * d, axis=-1))

    def grid(self, resolution):
        if resolution < 1:
            raise DomainError("resolution must be >= 1")
        n = int(resolution)
        g = np.arange(n) / n
        U, V, S = np.meshgrid(g, g, g, indexing="ij")
        return np.column_stack([U.ravel(), V.ravel(), S.ravel()])


@dataclass(frozen=True)
class ManifoldPoint:
    chart: Chart
    coords: tuple

    def __post_init__(self):
        reduced = self.chart.reduce(np.asarray(self.coords, dtype=float))
        object.__setattr__(self, "coords", tuple(float(c) for c in reduced))

    def array(self):
        return np.asarray(self.coords, dtype=float)


def distance(p: ManifoldPoint, q: ManifoldPoint) -> float:
    if p.chart != q.chart:
        raise DomainError(f"points live on different charts: {p.chart} vs {q.chart}")
    return float(p.chart.distance_array(p.array(), q.array()))


def sample_grid(chart: Chart, resolution: int) -> list:
    return chart.points(chart.grid(resolution))


def as_array(chart: Chart, points) -> np.ndarray:
    """Coerce a list of ManifoldPoint (or an array) to a reduced ``(n, d)`` array."""
    if isinstance(points, np.ndarray):
        arr = np.atleast_2d(np.asarray(points, dtype=float))
        return chart.reduce(arr)
    rows = []
    for p in points:
        if isinstance(p, ManifoldPoint):
            if p.chart != chart:
                raise DomainError("point on a different chart")
            rows.append(p.array())
        else:
            rows.append(np.asarray(p, dtype=float))
    if not rows:
        return np.empty((0, chart.coord_dim))
    return chart.reduce(np.vstack(rows))


def mesh_size(chart: Chart, pts: np.ndarray, probes: np.ndarray) -> float:
    """Largest distance from a probe point to its nearest sample (brute force)."""
    fp = chart.features(pts)
    worst = 0.0
    for chunk in np.array_split(np.arange(len(probes)), max(1, len(probes) // 256)):
        fq = chart.features(probes[chunk])
        d = chart.feature_distance(fq[:, None, :], fp[None, :, :])
        worst = max(worst, float(d.min(axis=1).max()))
    return worst
