"""Model Riemannian manifolds with closed-form metric geometry.

Four homogeneous models are supported, each in one fixed canonical chart:

    euclidean:m  Cartesian coordinates in R^m.
    s1           unit circle, angle theta in [0, 2*pi).
    s2           unit 2-sphere, points as unit vectors in R^3.
    h3           hyperbolic 3-space in the hyperboloid model: points
                 (x0, x1, x2, x3) with x0 > 0 and  -x0^2 + x1^2 + x2^2
                 + x3^2 = -1  (Minkowski signature -+++).

Tangent vectors are stored as components in a fixed orthonormal frame at
the base point:

    euclidean    the standard basis.
    s1           d/dtheta.
    s2           e1 = normalize(z_hat x p), e2 = p x e1 (east/north);
                 within 1e-6 of the poles the reference axis switches to
                 x_hat so the frame stays well conditioned.
    h3           Gram-Schmidt (in the Minkowski metric) of the spatial
                 axes projected to the tangent space at p.

All operations are pure and accept leading batch dimensions on the
coordinate arrays; randomness enters only through explicitly passed
generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidPointError(ValueError):
    """Coordinates violate the model's chart constraint."""


CHART_TOL = 1e-12


def _coords(p) -> np.ndarray:
    if isinstance(p, Point):
        return p.coords
    return np.asarray(p, dtype=float)


def _comps(v) -> np.ndarray:
    if isinstance(v, TangentVector):
        return v.components
    return np.asarray(v, dtype=float)


@dataclass(frozen=True, eq=False)
class Point:
    """A validated point of a model manifold, in its canonical chart."""

    coords: np.ndarray

    def __repr__(self):
        return f"Point({np.array2string(self.coords, precision=8)})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector as components in the orthonormal frame at `base`."""

    base: Point
    components: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.components))


def _stable_acosh1p(s: np.ndarray) -> np.ndarray:
    """arccosh(1 + s) for s >= 0, accurate down to s ~ 0."""
    s = np.asarray(s, dtype=float)
    small = s < 1e-8
    # acosh(1+s) = sqrt(2s) * (1 - s/12 + 3 s^2/160 - ...)
    ssmall = np.where(small, s, 1.0)
    series = np.sqrt(2.0 * ssmall) * (1.0 - ssmall / 12.0 + 3.0 * ssmall**2 / 160.0)
    return np.where(small, series, np.arccosh(1.0 + np.where(small, 0.0, s)))


class ManifoldModel:
    """Base class; concrete models fill in the chart-specific geometry."""

    kind: str
    dim: int
    ambient_dim: int
    curvature_const: float
    injectivity_radius: float

    # -- chart / point handling -------------------------------------------

    def chart_defect(self, coords: np.ndarray) -> np.ndarray:
        """Distance of raw coordinates from the chart constraint (0 = valid)."""
        raise NotImplementedError

    def check_point(self, coords) -> np.ndarray:
        c = _coords(coords)
        if c.shape[-1] != self.ambient_dim:
            raise InvalidPointError(
                f"{self.kind}: expected {self.ambient_dim} coordinates, got {c.shape[-1]}"
            )
        defect = np.max(np.atleast_1d(self.chart_defect(c)))
        if not np.isfinite(defect) or defect > CHART_TOL:
            raise InvalidPointError(f"{self.kind}: chart constraint violated by {defect:.3e}")
        return c

    def point(self, coords) -> Point:
        return Point(self.check_point(coords).copy())

    def tangent(self, base, components) -> TangentVector:
        base = base if isinstance(base, Point) else self.point(base)
        comps = np.asarray(components, dtype=float)
        if comps.shape[-1] != self.dim:
            raise InvalidPointError(f"{self.kind}: tangent components must have length {self.dim}")
        return TangentVector(base, comps.copy())

    # -- metric operations -------------------------------------------------

    def distance(self, p, q) -> np.ndarray | float:
        raise NotImplementedError

    def exp(self, p, v) -> np.ndarray:
        """Geodesic exponential; v holds frame components at p."""
        raise NotImplementedError

    def log(self, p, q) -> np.ndarray:
        """Frame components at p of the initial velocity of the minimizing
        geodesic reaching q at time 1 (any minimizer on the cut locus)."""
        raise NotImplementedError

    def frame(self, p) -> np.ndarray:
        """Orthonormal frame at p, shape (..., dim, ambient_dim)."""
        raise NotImplementedError

    def transport(self, p, q, comps) -> np.ndarray:
        """Parallel transport along the minimizing geodesic p -> q; takes and
        returns frame components (at p resp. q)."""
        raise NotImplementedError

    def ball_volume(self, r: float) -> float:
        raise NotImplementedError

    def exp_map(self, p: Point, v: TangentVector) -> Point:
        """Typed wrapper around `exp` for single points."""
        return Point(self.exp(_coords(p), _comps(v)))

    def geopoint(self, p, q, s: float) -> np.ndarray:
        """Point at parameter s in [0, 1] along the minimizing geodesic."""
        return self.exp(p, s * self.log(p, q))

    def sample_tangent_gaussian(self, p, scale: float, rng: np.random.Generator, n=None):
        """Centered Gaussian frame components, componentwise std = scale."""
        if scale < 0:
            raise ValueError("scale must be >= 0")
        shape = (self.dim,) if n is None else (n, self.dim)
        return scale * rng.standard_normal(shape)

    def random_points(self, n: int, rng: np.random.Generator, spread: float = 1.0, center=None):
        """Convenience sampler for tests and grid sweeps (not a uniform law)."""
        c = _coords(center) if center is not None else self.base_point()
        comps = spread * rng.standard_normal((n, self.dim))
        return self.exp(np.broadcast_to(c, (n,) + c.shape), comps)

    def base_point(self) -> np.ndarray:
        raise NotImplementedError


class Euclidean(ManifoldModel):
    kind = "euclidean"
    curvature_const = 0.0
    injectivity_radius = math.inf

    def __init__(self, m: int):
        if m < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = m
        self.ambient_dim = m
        self.kind = f"euclidean:{m}"

    def chart_defect(self, coords):
        return np.zeros(coords.shape[:-1])

    def base_point(self):
        return np.zeros(self.dim)

    def distance(self, p, q):
        return np.linalg.norm(_coords(p) - _coords(q), axis=-1)

    def exp(self, p, v):
        return _coords(p) + _comps(v)

    def log(self, p, q):
        return _coords(q) - _coords(p)

    def frame(self, p):
        c = _coords(p)
        eye = np.eye(self.dim)
        return np.broadcast_to(eye, c.shape[:-1] + eye.shape)

    def transport(self, p, q, comps):
        return _comps(comps).copy()

    def ball_volume(self, r):
        if r <= 0:
            raise ValueError("radius must be positive")
        m = self.dim
        unit = math.pi ** (m / 2.0) / math.gamma(m / 2.0 + 1.0)
        return unit * r**m


class Circle(ManifoldModel):
    kind = "s1"
    dim = 1
    ambient_dim = 1
    curvature_const = 0.0
    injectivity_radius = math.pi

    def chart_defect(self, coords):
        theta = coords[..., 0]
        out = np.where((theta >= 0.0) & (theta < 2.0 * math.pi), 0.0, np.abs(theta))
        return out

    def base_point(self):
        return np.zeros(1)

    @staticmethod
    def wrap_angle(theta):
        """Reduce to [0, 2*pi)."""
        return np.mod(theta, 2.0 * math.pi)

    @staticmethod
    def signed_difference(a, b):
        """a - b wrapped to (-pi, pi]."""
        d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 2.0 * math.pi)
        return np.where(d > math.pi, d - 2.0 * math.pi, d)

    def distance(self, p, q):
        # |a - b| first: the formula is then symmetric to the last bit
        r = np.mod(np.abs(_coords(p)[..., 0] - _coords(q)[..., 0]), 2.0 * math.pi)
        return np.minimum(r, 2.0 * math.pi - r)

    def exp(self, p, v):
        theta = _coords(p)[..., 0] + _comps(v)[..., 0]
        return self.wrap_angle(theta)[..., None]

    def log(self, p, q):
        return self.signed_difference(_coords(q)[..., 0], _coords(p)[..., 0])[..., None]

    def frame(self, p):
        c = _coords(p)
        return np.ones(c.shape[:-1] + (1, 1))

    def transport(self, p, q, comps):
        return _comps(comps).copy()

    def ball_volume(self, r):
        if r <= 0:
            raise ValueError("radius must be positive")
        return min(2.0 * r, 2.0 * math.pi)


class Sphere2(ManifoldModel):
    kind = "s2"
    dim = 2
    ambient_dim = 3
    curvature_const = 1.0
    injectivity_radius = math.pi

    _POLE_TOL = 1e-6

    def chart_defect(self, coords):
        return np.abs(np.linalg.norm(coords, axis=-1) - 1.0)

    def base_point(self):
        return np.array([0.0, 0.0, 1.0])

    def distance(self, p, q):
        a, b = _coords(p), _coords(q)
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
        dot = np.sum(a * b, axis=-1)
        return np.arctan2(cross, dot)

    def frame(self, p):
        c = _coords(p)
        zhat = np.array([0.0, 0.0, 1.0])
        xhat = np.array([1.0, 0.0, 0.0])
        ref = np.broadcast_to(zhat, c.shape).copy()
        near_pole = np.abs(np.abs(c[..., 2]) - 1.0) < self._POLE_TOL
        if np.any(near_pole):
            ref[near_pole] = xhat
        e1 = np.cross(ref, c)
        e1 = e1 / np.linalg.norm(e1, axis=-1, keepdims=True)
        e2 = np.cross(c, e1)
        return np.stack([e1, e2], axis=-2)

    def _ambient(self, p, comps):
        fr = self.frame(p)
        return np.einsum("...i,...ij->...j", _comps(comps), fr)

    def _to_frame(self, p, w):
        fr = self.frame(p)
        return np.einsum("...j,...ij->...i", w, fr)

    def exp(self, p, v):
        c = _coords(p)
        w = self._ambient(c, v)
        s = np.linalg.norm(w, axis=-1, keepdims=True)
        small = s < 1e-300
        direction = np.where(small, 0.0, w / np.where(small, 1.0, s))
        out = np.cos(s) * c + np.sin(s) * direction
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def log(self, p, q):
        a, b = _coords(p), _coords(q)
        d = self.distance(a, b)[..., None]
        w = b - np.sum(a * b, axis=-1, keepdims=True) * a
        nw = np.linalg.norm(w, axis=-1, keepdims=True)
        # On the cut locus (antipodal) the direction is arbitrary; fall back
        # to the first frame vector so the result stays deterministic.
        degenerate = nw[..., 0] < 1e-14
        direction = np.where(degenerate[..., None], self.frame(a)[..., 0, :], w / np.where(nw < 1e-14, 1.0, nw))
        return self._to_frame(a, d * direction)

    def transport(self, p, q, comps):
        a, b = _coords(p), _coords(q)
        w = self._ambient(a, comps)
        d = self.distance(a, b)
        tang = b - np.sum(a * b, axis=-1, keepdims=True) * a
        nt = np.linalg.norm(tang, axis=-1, keepdims=True)
        close = nt[..., 0] < 1e-14
        e = np.where(close[..., None], 0.0, tang / np.where(nt < 1e-14, 1.0, nt))
        along = np.sum(w * e, axis=-1, keepdims=True)
        perp = w - along * e
        e_q = -np.sin(d)[..., None] * a + np.cos(d)[..., None] * e
        moved = perp + along * e_q
        moved = np.where(close[..., None], w, moved)
        return self._to_frame(b, moved)

    def ball_volume(self, r):
        if r <= 0:
            raise ValueError("radius must be positive")
        if r >= math.pi:
            return 4.0 * math.pi
        return 2.0 * math.pi * (1.0 - math.cos(r))


class Hyperbolic3(ManifoldModel):
    kind = "h3"
    dim = 3
    ambient_dim = 4
    curvature_const = -1.0
    injectivity_radius = math.inf

    @staticmethod
    def minkowski(a, b):
        return -a[..., 0] * b[..., 0] + np.sum(a[..., 1:] * b[..., 1:], axis=-1)

    def chart_defect(self, coords):
        # relative to the coordinate scale: the Minkowski form of a point at
        # distance r from the base has entries ~cosh(r)^2, so an absolute
        # defect would reject far points for pure roundoff
        defect = np.abs(self.minkowski(coords, coords) + 1.0) / (1.0 + coords[..., 0] ** 2)
        return np.where(coords[..., 0] > 0.0, defect, np.inf)

    def base_point(self):
        return np.array([1.0, 0.0, 0.0, 0.0])

    def distance(self, p, q):
        a, b = _coords(p), _coords(q)
        diff = a - b
        s = 0.5 * self.minkowski(diff, diff)  # = cosh(d) - 1, cancellation-free
        return _stable_acosh1p(np.maximum(s, 0.0))

    def frame(self, p):
        c = _coords(p)
        basis = np.zeros(c.shape[:-1] + (3, 4))
        for i in range(3):
            e = np.zeros(4)
            e[i + 1] = 1.0
            v = np.broadcast_to(e, c.shape).copy()
            v = v + self.minkowski(v, c)[..., None] * c  # project to tangent
            for j in range(i):
                v = v - self.minkowski(v, basis[..., j, :])[..., None] * basis[..., j, :]
            v = v / np.sqrt(self.minkowski(v, v))[..., None]
            basis[..., i, :] = v
        return basis

    def _ambient(self, p, comps):
        return np.einsum("...i,...ij->...j", _comps(comps), self.frame(p))

    def _to_frame(self, p, w):
        fr = self.frame(p)
        return np.stack([self.minkowski(w, fr[..., i, :]) for i in range(3)], axis=-1)

    def _project(self, x):
        """Re-seat onto the hyperboloid sheet (float hygiene only)."""
        spatial = x[..., 1:]
        x0 = np.sqrt(1.0 + np.sum(spatial**2, axis=-1))
        return np.concatenate([x0[..., None], spatial], axis=-1)

    def exp(self, p, v):
        c = _coords(p)
        w = self._ambient(c, v)
        s = np.sqrt(np.maximum(self.minkowski(w, w), 0.0))[..., None]
        small = s < 1e-300
        direction = np.where(small, 0.0, w / np.where(small, 1.0, s))
        out = np.cosh(s) * c + np.sinh(s) * direction
        return self._project(out)

    def log(self, p, q):
        a, b = _coords(p), _coords(q)
        d = self.distance(a, b)[..., None]
        ch = np.cosh(d)
        w = b - ch * a
        sh = np.sinh(d)
        close = sh[..., 0] < 1e-14
        e = np.where(close[..., None], 0.0, w / np.where(sh < 1e-14, 1.0, sh))
        return self._to_frame(a, d * e)

    def transport(self, p, q, comps):
        a, b = _coords(p), _coords(q)
        w = self._ambient(a, comps)
        d = self.distance(a, b)[..., None]
        sh = np.sinh(d)
        close = sh[..., 0] < 1e-14
        e = np.where(close[..., None], 0.0, (b - np.cosh(d) * a) / np.where(sh < 1e-14, 1.0, sh))
        along = self.minkowski(w, e)[..., None]
        perp = w - along * e
        e_q = np.sinh(d) * a + np.cosh(d) * e
        moved = perp + along * e_q
        moved = np.where(close[..., None], w, moved)
        return self._to_frame(b, moved)

    def ball_volume(self, r):
        if r <= 0:
            raise ValueError("radius must be positive")
        # 4*pi * int_0^r sinh(s)^2 ds = pi*(sinh(2r) - 2r)
        return math.pi * (math.sinh(2.0 * r) - 2.0 * r)


_MODELS = {"s1": Circle, "s2": Sphere2, "h3": Hyperbolic3}


def model_from_name(name: str) -> ManifoldModel:
    """Resolve "euclidean:m", "s1", "s2", "h3" to a model instance."""
    key = name.strip().lower()
    if key.startswith("euclidean"):
        parts = key.split(":")
        m = int(parts[1]) if len(parts) > 1 else 1
        return Euclidean(m)
    if key in _MODELS:
        return _MODELS[key]()
    raise ValueError(f"unknown model {name!r}; valid: euclidean:m, s1, s2, h3")


def model_names() -> list[str]:
    return ["euclidean:m", "s1", "s2", "h3"]
