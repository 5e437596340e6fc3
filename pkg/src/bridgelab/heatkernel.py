"""Exact minimal heat kernels for the (1/2)*Laplacian convention.

All four models admit closed forms or rapidly converging spectral series for
the transition density p(t, x, y) of Brownian motion (generator (1/2)*Delta)
with respect to the Riemannian volume:

    euclidean:m  (2*pi*t)^(-m/2) * exp(-d^2 / (2t))
    s1           wrapped Gaussian  sum_n (2*pi*t)^(-1/2) exp(-(d+2*pi*n)^2/(2t))
                 or its Poisson dual  (2*pi)^(-1) sum_k exp(-k^2 t/2) cos(k d)
    s2           sum_l (2l+1)/(4*pi) * exp(-l(l+1) t/2) * P_l(cos d)
    h3           (2*pi*t)^(-3/2) * (rho/sinh rho) * exp(-rho^2/(2t) - t/2)

Every kernel is a function of t and the geodesic distance d alone (the models
are two-point homogeneous), so values, log-values and radial log-derivatives
are computed together; the spatial log-gradient at x is the radial derivative
times the unit vector at x pointing away from y.

Numerical caveat (sphere): the Legendre series suffers float64 cancellation
once exp(d^2/(2t)) approaches 1/eps; evaluations outside that envelope raise
KernelAccuracyError rather than returning noise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    Circle,
    Euclidean,
    Hyperbolic3,
    ManifoldModel,
    Point,
    Sphere2,
    TangentVector,
    _coords,
)

LOG_EPS = -math.log(np.finfo(float).eps)  # ~36.0: float64 cancellation budget


class TruncationError(RuntimeError):
    """Series did not meet the tail tolerance within max_terms."""

    def __init__(self, message, partial_sum):
        super().__init__(message)
        self.partial_sum = partial_sum


class KernelAccuracyError(RuntimeError):
    """Requested evaluation cannot be produced at a trustworthy accuracy."""


class QuadratureAccuracyError(RuntimeError):
    """Quadrature error estimate exceeds the requested tolerance."""


class CutLocusWarning(UserWarning):
    """Gradient requested within the cut-locus band of the sphere."""


@dataclass(frozen=True)
class SeriesControl:
    tol: float = 1e-12
    max_terms: int = 10_000
    crossover_t: float = 0.5  # circle: wrapped Gaussian below, Fourier above

    def __post_init__(self):
        if not (0.0 < self.tol <= 1e-6):
            raise ValueError("tol must lie in (0, 1e-6]")
        if self.max_terms < 16:
            raise ValueError("max_terms must be >= 16")
        if self.crossover_t <= 0:
            raise ValueError("crossover_t must be positive")


DEFAULT_CTL = SeriesControl()


@dataclass(frozen=True)
class KernelEval:
    t: float
    x: Point
    y: Point
    value: float
    log_value: float
    log_grad_x: TangentVector


@dataclass(frozen=True)
class QuadratureSpec:
    nodes: int = 64
    panels: int = 8
    tol: float | None = 1e-8
    radial_cut: float = 9.0  # radial truncation in units of sqrt(t) (plus drift)


DEFAULT_QUAD = QuadratureSpec()


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float

    def __float__(self):
        return self.value


# ---------------------------------------------------------------------------
# radial kernels: log p and d(log p)/dd at scalar t, vectorized over d
# ---------------------------------------------------------------------------


def _euclid_radial(m: int, t: float, d: np.ndarray):
    logp = -0.5 * m * math.log(2.0 * math.pi * t) - d * d / (2.0 * t)
    return logp, -d / t


def circle_wrapped(t: float, delta, with_derivative: bool = True):
    """Wrapped-Gaussian circle kernel at angle difference delta (any real).

    Returns (log p, dp_ddelta / p); summation window covers 10 standard
    deviations, so the omitted tail is below 2e-22 relative.
    """
    delta = np.asarray(delta, dtype=float)
    r = np.mod(delta + math.pi, 2.0 * math.pi) - math.pi
    w = int(math.ceil((10.0 * math.sqrt(t) + math.pi) / (2.0 * math.pi))) + 1
    offsets = 2.0 * math.pi * np.arange(-w, w + 1)
    args = r[..., None] + offsets
    a = args * args / (2.0 * t)
    a_min = np.min(a, axis=-1, keepdims=True)
    expterm = np.exp(-(a - a_min))
    ssum = np.sum(expterm, axis=-1)
    logp = -a_min[..., 0] + np.log(ssum) - 0.5 * math.log(2.0 * math.pi * t)
    if not with_derivative:
        return logp, None
    dsum = np.sum(-(args / t) * expterm, axis=-1)
    return logp, dsum / ssum


def circle_wrapped_value(t: float, delta):
    """(p, dp/ddelta) of the wrapped Gaussian, in linear scale."""
    logp, dlog = circle_wrapped(t, delta)
    p = np.exp(logp)
    return p, p * dlog


def circle_fourier_value(t: float, delta, ctl: SeriesControl = DEFAULT_CTL):
    """(p, dp/ddelta) of the Fourier-mode circle kernel, the Poisson-summation
    dual of the wrapped Gaussian. Values below float64 noise (~1e-16) may come
    out non-positive; use `circle_fourier` when a log form is required."""
    delta = np.asarray(delta, dtype=float)
    kmax = int(math.ceil(math.sqrt(2.0 * (LOG_EPS + 10.0) / t)))
    if kmax > ctl.max_terms:
        raise TruncationError(
            f"circle Fourier series needs {kmax} modes > max_terms={ctl.max_terms}",
            partial_sum=None,
        )
    k = np.arange(1, kmax + 1)
    decay = np.exp(-k * k * t / 2.0)
    kd = delta[..., None] * k
    p = (1.0 + 2.0 * np.sum(decay * np.cos(kd), axis=-1)) / (2.0 * math.pi)
    dp = -np.sum(k * decay * np.sin(kd), axis=-1) / math.pi
    return p, dp


def circle_fourier(t: float, delta, ctl: SeriesControl = DEFAULT_CTL, with_derivative: bool = True):
    """Fourier-mode circle kernel in log form: (log p, dp_ddelta / p)."""
    p, dp = circle_fourier_value(t, delta, ctl)
    if np.any(p <= 0.0):
        raise KernelAccuracyError(
            "Fourier circle kernel lost positivity; evaluate below crossover_t "
            "with the wrapped-Gaussian form instead"
        )
    logp = np.log(p)
    if not with_derivative:
        return logp, None
    return logp, dp / p


def _circle_radial(t: float, d: np.ndarray, ctl: SeriesControl):
    if t < ctl.crossover_t:
        return circle_wrapped(t, d)
    return circle_fourier(t, d, ctl)


def _sphere_lmax(t: float, tol: float, max_terms: int) -> int:
    # tail bound: sum_{l>L} (2l+1) e^{-l(l+1)t/2} <= (2/t) e^{-L(L+1)t/2}
    target = -math.log(tol) + math.log(2.0 / t) + 25.0
    lmax = int(math.ceil(0.5 * (math.sqrt(1.0 + 8.0 * target / t) - 1.0))) + 8
    return min(lmax, max_terms)


def _sphere_series(t: float, d: np.ndarray, ctl: SeriesControl):
    """Legendre heat series on S^2: p, dp/dd, and a cancellation estimate."""
    d = np.asarray(d, dtype=float)
    u = np.cos(d)
    s = np.sin(d)
    lmax = _sphere_lmax(t, ctl.tol, ctl.max_terms)
    p_prev = np.ones_like(u)
    p_cur = u.copy()
    c0 = 1.0 / (4.0 * math.pi)
    total = c0 * p_prev.copy()
    abs_total = np.abs(total).copy()
    dtotal = np.zeros_like(u)
    safe_s = np.where(np.abs(s) < 1e-14, 1.0, s)
    for ell in range(1, lmax + 1):
        c = (2 * ell + 1) / (4.0 * math.pi) * math.exp(-ell * (ell + 1) * t / 2.0)
        total += c * p_cur
        abs_total += np.abs(c * p_cur)
        dpl = np.where(np.abs(s) < 1e-14, 0.0, -ell * (p_prev - u * p_cur) / safe_s)
        dtotal += c * dpl
        tail = (2.0 / t) / (4.0 * math.pi) * math.exp(-(ell + 1) * (ell + 2) * t / 2.0)
        if tail < ctl.tol * max(float(np.min(abs_total)), 1e-300) and ell >= 8:
            break
        p_next = ((2 * ell + 1) * u * p_cur - ell * p_prev) / (ell + 1)
        p_prev, p_cur = p_cur, p_next
    else:
        raise TruncationError(
            f"sphere series not converged after {lmax} terms (t={t})", partial_sum=total
        )
    cancel = np.finfo(float).eps * abs_total * math.sqrt(ell)
    return total, dtotal, cancel


def _sphere_radial(t: float, d: np.ndarray, ctl: SeriesControl):
    p, dp, cancel = _sphere_series(t, d, ctl)
    bad = (p <= 0.0) | (cancel > 1e-5 * np.abs(p))
    if np.any(bad):
        worst = float(np.max(np.asarray(d)[bad])) if np.ndim(d) else float(d)
        raise KernelAccuracyError(
            f"sphere kernel cancellation at t={t}, d up to {worst:.3f}: "
            f"exp(d^2/(2t)) exceeds the float64 budget"
        )
    return np.log(p), dp / p


def _h3_log_sinc(rho: np.ndarray):
    """log(rho / sinh rho), stable for all rho >= 0."""
    rho = np.asarray(rho, dtype=float)
    out = np.empty_like(rho)
    small = rho < 1e-4
    large = rho > 30.0
    mid = ~(small | large)
    out[small] = -rho[small] ** 2 / 6.0 + rho[small] ** 4 / 180.0
    rm = rho[mid]
    out[mid] = np.log(rm / np.sinh(rm))
    rl = rho[large]
    out[large] = np.log(rl) - rl + math.log(2.0)
    return out


def _h3_dlog_sinc(rho: np.ndarray):
    """d/drho of log(rho/sinh rho) = 1/rho - coth rho, stable near 0."""
    rho = np.asarray(rho, dtype=float)
    out = np.empty_like(rho)
    small = rho < 1e-4
    large = rho > 30.0
    mid = ~(small | large)
    out[small] = -rho[small] / 3.0 + rho[small] ** 3 / 45.0
    rm = rho[mid]
    out[mid] = 1.0 / rm - np.cosh(rm) / np.sinh(rm)
    out[large] = 1.0 / rho[large] - 1.0
    return out


def _h3_radial(t: float, d: np.ndarray):
    d = np.asarray(d, dtype=float)
    logp = -1.5 * math.log(2.0 * math.pi * t) + _h3_log_sinc(d) - d * d / (2.0 * t) - t / 2.0
    dlog = _h3_dlog_sinc(d) - d / t
    return logp, dlog


def radial_log_kernel(model: ManifoldModel, t: float, d, ctl: SeriesControl = DEFAULT_CTL):
    """(log p(t, d), d/dd log p(t, d)) for distances d (vectorized)."""
    if t <= 0:
        raise ValueError("time must be positive")
    d = np.asarray(d, dtype=float)
    if isinstance(model, Euclidean):
        return _euclid_radial(model.dim, t, d)
    if isinstance(model, Circle):
        return _circle_radial(t, d, ctl)
    if isinstance(model, Sphere2):
        return _sphere_radial(t, d, ctl)
    if isinstance(model, Hyperbolic3):
        return _h3_radial(t, d)
    raise TypeError(f"unsupported model {model!r}")


# ---------------------------------------------------------------------------
# fast radial profiles (tabulated where series evaluation is the bottleneck)
# ---------------------------------------------------------------------------


class RadialProfile:
    """Fast (log p, dlog/dd) evaluator at fixed t, for sampler/integrand loops.

    Circle and sphere profiles are tabulated on a t-adapted mesh and linearly
    interpolated (relative error ~1e-9 at the default resolution); beyond the
    sphere's float64-safe radius a Varadhan-type asymptotic takes over, which
    is accurate exactly where the table cannot be.
    """

    def __init__(self, model: ManifoldModel, t: float, ctl: SeriesControl = DEFAULT_CTL):
        self.model = model
        self.t = float(t)
        self.ctl = ctl
        self._mesh = None
        if isinstance(model, Circle):
            self._rmax = math.pi
            self._build_table(8192)
        elif isinstance(model, Hyperbolic3):
            self._rmax = 30.0
            self._build_table(8192)
        elif isinstance(model, Sphere2):
            self._rmax = min(math.pi, math.sqrt(2.0 * t * (LOG_EPS - 12.0)))
            for _ in range(60):
                try:
                    self._build_table(4096)
                    break
                except KernelAccuracyError:
                    self._rmax *= 0.95
            else:
                raise KernelAccuracyError(f"no float64-safe table radius at t={t}")

    def _build_table(self, n: int):
        r = np.linspace(0.0, self._rmax, n)
        logp, dlog = radial_log_kernel(self.model, self.t, r, self.ctl)
        self._mesh = r
        self._logp = logp
        self._dlog = dlog

    def _sphere_fallback(self, d):
        # small-time expansion: p ~ (2 pi t)^{-1} (d/sin d)^{1/2} e^{-d^2/(2t) + t/8}
        d = np.minimum(d, math.pi - 1e-9)
        logp = (
            -math.log(2.0 * math.pi * self.t)
            - d * d / (2.0 * self.t)
            + 0.5 * np.log(d / np.sin(d))
            + self.t / 8.0
        )
        dlog = -d / self.t + 0.5 * (1.0 / d - np.cos(d) / np.sin(d))
        return logp, dlog

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        if self._mesh is None:
            return radial_log_kernel(self.model, self.t, d, self.ctl)
        inside = d <= self._rmax
        dq = np.clip(d, 0.0, self._rmax)
        logp = np.interp(dq, self._mesh, self._logp)
        dlog = np.interp(dq, self._mesh, self._dlog)
        if not np.all(inside):
            far = np.where(inside, self._rmax, d)
            if isinstance(self.model, Hyperbolic3):
                fb_logp, fb_dlog = radial_log_kernel(self.model, self.t, far, self.ctl)
            else:
                fb_logp, fb_dlog = self._sphere_fallback(far)
            logp = np.where(inside, logp, fb_logp)
            dlog = np.where(inside, dlog, fb_dlog)
        return logp, dlog


# ---------------------------------------------------------------------------
# kernel evaluation with gradient
# ---------------------------------------------------------------------------


_PROFILE_CACHE: dict = {}
_PROFILE_CACHE_MAX = 6000


def radial_profile(model: ManifoldModel, t: float, ctl: SeriesControl = DEFAULT_CTL):
    """Cached RadialProfile; ensembles revisit the same time ladder chunk by
    chunk, so tables are shared process-wide (keyed by model kind, t, ctl)."""
    key = (model.kind, float(t), ctl)
    prof = _PROFILE_CACHE.get(key)
    if prof is None:
        if len(_PROFILE_CACHE) >= _PROFILE_CACHE_MAX:
            _PROFILE_CACHE.clear()
        prof = RadialProfile(model, t, ctl)
        _PROFILE_CACHE[key] = prof
    return prof


def _unit_toward(model: ManifoldModel, x, y, d):
    comps = model.log(x, y)
    dd = np.asarray(d, dtype=float)[..., None]
    return np.where(dd < 1e-14, 0.0, comps / np.where(dd < 1e-14, 1.0, dd))


def kernel(model: ManifoldModel, t: float, x, y, ctl: SeriesControl = DEFAULT_CTL) -> KernelEval:
    """Heat kernel value, log-value and spatial log-gradient at (t, x, y)."""
    if t <= 0:
        raise ValueError("time must be positive")
    xc = model.check_point(_coords(x))
    yc = model.check_point(_coords(y))
    d = float(model.distance(xc, yc))
    logp, dlog = radial_log_kernel(model, t, d, ctl)
    logp = float(logp)
    dlog = float(dlog)
    grad = -dlog * _unit_toward(model, xc, yc, d)
    value = math.exp(logp)
    return KernelEval(
        t=t,
        x=Point(xc.copy()),
        y=Point(yc.copy()),
        value=value,
        log_value=logp,
        log_grad_x=TangentVector(Point(xc.copy()), np.asarray(grad, dtype=float)),
    )


CUT_LOCUS_BAND = 1e-6


def log_kernel_gradient(
    model: ManifoldModel, t: float, x, y, ctl: SeriesControl = DEFAULT_CTL
) -> TangentVector:
    """Gradient of log p(t, ., y) at x, in the orthonormal frame at x.

    On the sphere within CUT_LOCUS_BAND of the antipode the geodesic direction
    is ill-conditioned; a one-sided finite-difference fallback is used and a
    CutLocusWarning is emitted.
    """
    if t <= 0:
        raise ValueError("time must be positive")
    xc = model.check_point(_coords(x))
    yc = model.check_point(_coords(y))
    d = float(model.distance(xc, yc))
    if isinstance(model, Sphere2) and d > math.pi - CUT_LOCUS_BAND:
        warnings.warn(
            "gradient requested within the sphere's cut-locus band; "
            "using one-sided finite differences",
            CutLocusWarning,
        )
        h = 1e-6
        base_log, _ = radial_log_kernel(model, t, d, ctl)
        comps = np.zeros(model.dim)
        frame_dirs = np.eye(model.dim)
        for i in range(model.dim):
            shifted = model.exp(xc, h * frame_dirs[i])
            d_i = float(model.distance(shifted, yc))
            log_i, _ = radial_log_kernel(model, t, d_i, ctl)
            comps[i] = (float(log_i) - float(base_log)) / h
        return TangentVector(Point(xc.copy()), comps)
    _, dlog = radial_log_kernel(model, t, d, ctl)
    grad = -float(dlog) * _unit_toward(model, xc, yc, d)
    return TangentVector(Point(xc.copy()), np.asarray(grad, dtype=float))


# ---------------------------------------------------------------------------
# quadrature: semigroup action, normalization, Chapman-Kolmogorov
# ---------------------------------------------------------------------------


def _gl_nodes(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _composite_gl(a: float, b: float, panels: int, n: int):
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for i in range(panels):
        x, w = _gl_nodes(edges[i], edges[i + 1], n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _integrate_against_kernel(model, t, f, x, quad, panels):
    """One quadrature pass of int p(t, x, w) f(w) dmu(w) at a given panel count."""
    xc = model.check_point(_coords(x))
    if isinstance(model, Circle):
        theta, w = _composite_gl(0.0, 2.0 * math.pi, panels, quad.nodes)
        d = model.distance(theta[:, None], np.broadcast_to(xc, (theta.size, 1)))
        logp, _ = radial_log_kernel(model, t, d)
        vals = np.array([f(np.array([th])) for th in theta])
        return float(np.sum(w * np.exp(logp) * vals)), 0.0
    if isinstance(model, Sphere2):
        u, wu = _gl_nodes(-1.0, 1.0, panels * quad.nodes // 2)
        phi, wphi = _gl_nodes(0.0, 2.0 * math.pi, panels * quad.nodes // 2)
        uu, pp = np.meshgrid(u, phi, indexing="ij")
        st = np.sqrt(np.maximum(1.0 - uu**2, 0.0))
        pts = np.stack([st * np.cos(pp), st * np.sin(pp), uu], axis=-1)
        d = model.distance(pts, xc)
        logp, _ = radial_log_kernel(model, t, d.ravel())
        vals = np.apply_along_axis(f, -1, pts.reshape(-1, 3))
        ww = (wu[:, None] * wphi[None, :]).ravel()
        return float(np.sum(ww * np.exp(logp) * vals)), 0.0
    if isinstance(model, Euclidean):
        m = model.dim
        if m > 3:
            raise NotImplementedError("euclidean semigroup quadrature supports m <= 3")
        L = quad.radial_cut * math.sqrt(t)
        axes = [_composite_gl(xc[i] - L, xc[i] + L, panels, quad.nodes) for i in range(m)]
        grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        wgt = np.ones(pts.shape[0])
        for i, (_, w) in enumerate(axes):
            shape = [1] * m
            shape[i] = -1
            wgt = wgt * np.broadcast_to(w.reshape(shape), [len(a[0]) for a in axes]).ravel()
        d = model.distance(pts, xc)
        logp, _ = radial_log_kernel(model, t, d)
        vals = np.apply_along_axis(f, -1, pts)
        fmax = float(np.max(np.abs(vals))) if vals.size else 0.0
        tail = fmax * m * math.erfc(quad.radial_cut / math.sqrt(2.0))
        return float(np.sum(wgt * np.exp(logp) * vals)), tail
    if isinstance(model, Hyperbolic3):
        L = quad.radial_cut * math.sqrt(t) + 2.0 * t + 1.0
        rho, wr = _composite_gl(0.0, L, panels, quad.nodes)
        u, wu = _gl_nodes(-1.0, 1.0, quad.nodes)
        phi, wphi = _gl_nodes(0.0, 2.0 * math.pi, quad.nodes)
        frame_comps = np.stack(
            [
                np.sqrt(np.maximum(1 - u[None, :, None] ** 2, 0.0)) * np.cos(phi[None, None, :]),
                np.sqrt(np.maximum(1 - u[None, :, None] ** 2, 0.0)) * np.sin(phi[None, None, :]),
                np.broadcast_to(u[None, :, None], (1, u.size, phi.size)),
            ],
            axis=-1,
        )
        comps = rho[:, None, None, None] * frame_comps
        base = np.broadcast_to(xc, comps.shape[:-1] + (4,))
        pts = model.exp(base, comps)
        logp, _ = radial_log_kernel(model, t, rho)
        dens = np.exp(logp) * np.sinh(rho) ** 2
        vals = np.apply_along_axis(f, -1, pts.reshape(-1, 4)).reshape(pts.shape[:-1])
        inner = np.einsum("rup,u,p->r", vals, wu, wphi)
        fmax = float(np.max(np.abs(vals))) if vals.size else 0.0
        tail = fmax * math.exp(-((L - t) ** 2) / (2.0 * t)) * (L + 1.0)
        return float(np.sum(wr * dens * inner)), tail
    raise TypeError(f"unsupported model {model!r}")


def semigroup_apply(
    model: ManifoldModel, t: float, f, x, quad: QuadratureSpec = DEFAULT_QUAD
) -> QuadratureResult:
    """P_t f(x) = int p(t, x, w) f(w) dmu(w) by model-adapted quadrature.

    The error estimate is the difference between two refinement levels plus a
    Gaussian tail bound on the truncated (noncompact) domains.
    """
    if t <= 0:
        raise ValueError("time must be positive")
    coarse, _ = _integrate_against_kernel(model, t, f, x, quad, quad.panels)
    fine, tail = _integrate_against_kernel(model, t, f, x, quad, 2 * quad.panels)
    est = abs(fine - coarse) + tail
    if quad.tol is not None and est > quad.tol:
        raise QuadratureAccuracyError(
            f"quadrature error estimate {est:.3e} exceeds tolerance {quad.tol:.3e}"
        )
    return QuadratureResult(value=fine, error_estimate=est)


def kernel_mass(model: ManifoldModel, t: float, x=None, quad: QuadratureSpec = DEFAULT_QUAD):
    """Total mass int p(t, x, .) dmu; equals 1 on stochastically complete models."""
    if x is None:
        x = model.base_point()
    return semigroup_apply(model, t, lambda _w: 1.0, x, quad)


def _pair_integral(model, s, t, x, y, quad, scale: int = 1):
    """int p(s, x, z) p(t, z, y) dmu(z), reduced by two-point homogeneity."""
    xc = model.check_point(_coords(x))
    yc = model.check_point(_coords(y))
    n = quad.nodes * scale
    if isinstance(model, Circle):
        theta, w = _composite_gl(0.0, 2.0 * math.pi, quad.panels * scale, quad.nodes)
        d1 = model.distance(theta[:, None], np.broadcast_to(xc, (theta.size, 1)))
        d2 = model.distance(theta[:, None], np.broadcast_to(yc, (theta.size, 1)))
        l1, _ = radial_log_kernel(model, s, d1)
        l2, _ = radial_log_kernel(model, t, d2)
        return float(np.sum(w * np.exp(l1 + l2)))
    if isinstance(model, Euclidean) and model.dim == 1:
        lo = min(xc[0], yc[0]) - quad.radial_cut * math.sqrt(max(s, t))
        hi = max(xc[0], yc[0]) + quad.radial_cut * math.sqrt(max(s, t))
        z, w = _composite_gl(lo, hi, quad.panels * scale, quad.nodes)
        l1, _ = radial_log_kernel(model, s, np.abs(z - xc[0]))
        l2, _ = radial_log_kernel(model, t, np.abs(z - yc[0]))
        return float(np.sum(w * np.exp(l1 + l2)))
    if isinstance(model, Sphere2):
        big = float(model.distance(xc, yc))
        u, wu = _gl_nodes(-1.0, 1.0, 2 * n)  # u = cos(theta), theta = d(x, z)
        psi, wpsi = _gl_nodes(0.0, 2.0 * math.pi, 2 * n)
        ct = u[:, None]
        st = np.sqrt(np.maximum(1.0 - ct**2, 0.0))
        cos_d2 = np.clip(ct * math.cos(big) + st * math.sin(big) * np.cos(psi)[None, :], -1, 1)
        d2 = np.arccos(cos_d2)
        l1, _ = radial_log_kernel(model, s, np.arccos(np.clip(u, -1, 1)))
        l2, _ = radial_log_kernel(model, t, d2.ravel())
        inner = np.sum(np.exp(l2.reshape(d2.shape)) * wpsi[None, :], axis=1)
        return float(np.sum(wu * np.exp(l1) * inner))
    if isinstance(model, Hyperbolic3):
        big = float(model.distance(xc, yc))
        L = quad.radial_cut * math.sqrt(max(s, t)) + 2.0 * max(s, t) + big + 1.0
        rho, wr = _composite_gl(0.0, L, quad.panels * scale, quad.nodes)
        u, wu = _gl_nodes(-1.0, 1.0, 2 * n)  # u = cos(psi)
        ch = np.cosh(rho)[:, None] * math.cosh(big) - np.sinh(rho)[:, None] * math.sinh(
            big
        ) * u[None, :]
        d2 = np.arccosh(np.maximum(ch, 1.0))
        l1, _ = radial_log_kernel(model, s, rho)
        l2, _ = radial_log_kernel(model, t, d2.ravel())
        inner = np.sum(np.exp(l2.reshape(d2.shape)) * wu[None, :], axis=1)
        return float(np.sum(wr * np.sinh(rho) ** 2 * 2.0 * math.pi * np.exp(l1) * inner))
    raise TypeError(f"chapman_kolmogorov_defect unsupported for {model!r}")


def chapman_kolmogorov_defect(
    model: ManifoldModel, s: float, t: float, x, y, quad: QuadratureSpec = DEFAULT_QUAD
) -> float:
    """| int p(s,x,z) p(t,z,y) dmu(z) - p(s+t,x,y) |."""
    if s <= 0 or t <= 0:
        raise ValueError("times must be positive")
    integral = _pair_integral(model, s, t, x, y, quad)
    d = float(model.distance(_coords(x), _coords(y)))
    logp, _ = radial_log_kernel(model, s + t, np.asarray(d))
    return abs(integral - math.exp(float(logp)))


def heat_equation_residual(
    model: ManifoldModel,
    t: float,
    x,
    y,
    h_t: float = 1e-4,
    h_x: float = 1e-4,
    ctl: SeriesControl = DEFAULT_CTL,
) -> float:
    """|d/dt p - (1/2) Laplacian_x p| by central finite differences.

    The Laplacian is the sum of second differences along geodesics in the
    orthonormal frame directions (exact for the Laplace-Beltrami operator up
    to O(h^2)), with kernel values from the radial closed forms/series.
    """
    if not (t > h_t > 0):
        raise ValueError("need t > h_t > 0")
    tight = replace(ctl, tol=min(ctl.tol, 1e-13))
    xc = model.check_point(_coords(x))
    yc = model.check_point(_coords(y))

    def p_at(tt, pt):
        d = model.distance(pt, yc)
        logp, _ = radial_log_kernel(model, tt, np.asarray(d), tight)
        return float(np.exp(logp))

    dpdt = (p_at(t + h_t, xc) - p_at(t - h_t, xc)) / (2.0 * h_t)
    p0 = p_at(t, xc)
    lap = 0.0
    for i in range(model.dim):
        e = np.zeros(model.dim)
        e[i] = 1.0
        plus = model.exp(xc, h_x * e)
        minus = model.exp(xc, -h_x * e)
        lap += (p_at(t, plus) + p_at(t, minus) - 2.0 * p0) / (h_x * h_x)
    return abs(dpdt - 0.5 * lap)
