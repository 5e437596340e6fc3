"""The compensated process Y along bridge paths, and its martingale checks.

For a smooth compactly supported f and a bridge path X on a grid, Y is

    Y_s = f(X_s) - f(X_0) - int_0^s [ (1/2) Lap f(X_r)
              + < grad log p^y(T - r, X_r), grad f(X_r) > ] dr,

discretized by the trapezoid rule, except that the drift integrand on the
final sub-interval [T - dt, T] enters with its left-endpoint value (it is
undefined at r = T; the integral converges, and the induced bias vanishes
under dt refinement, which integrability_estimate monitors).

Test functions are radial polynomial bumps with closed-form gradient and
Laplacian in each model's chart, so no numerical differentiation enters Y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import (
    BridgePath,
    PathEnsemble,
    _drift_ambient,
    restrict_to_stride,
    tangent_inner,
    toward_target,
)
from .geometry import Circle, Euclidean, Hyperbolic3, ManifoldModel, Sphere2, _coords
from .heatkernel import DEFAULT_CTL, SeriesControl, radial_profile


@dataclass(frozen=True)
class TestFunction:
    """Scalar field with exact gradient (frame components) and Laplacian.

    gradient_ambient, when set, returns the same gradient as an ambient
    tangent vector; sampler-scale loops prefer it because it avoids frame
    construction."""

    id: str
    eval: callable
    gradient: callable
    laplacian: callable
    support_radius: float
    center: np.ndarray | None = None
    gradient_ambient: callable | None = None
    gradient_norm: callable | None = None  # |grad f|, cheap radial form


def _cot_kappa(model: ManifoldModel, r: np.ndarray) -> np.ndarray:
    """(m-1) * cot_curvature(r), the radial volume term of the Laplacian."""
    m = model.dim
    if m == 1:
        return np.zeros_like(r)
    safe = np.maximum(r, 1e-300)
    if isinstance(model, Sphere2):
        return (m - 1) * np.cos(safe) / np.sin(safe)
    if isinstance(model, Hyperbolic3):
        return (m - 1) * np.cosh(safe) / np.sinh(safe)
    return (m - 1) / safe


def radial_bump(
    model: ManifoldModel, center, radius: float, amplitude: float = 1.0, fid: str | None = None
) -> TestFunction:
    """Smooth compactly supported bump  A * (1 - (d/rho)^2)^3  of the geodesic
    distance d to `center`; C^2 across the support boundary, smooth inside.

    Gradient and Laplacian are closed-form:  with u = (d/rho)^2,
        phi'(d)  = -6 A d / rho^2 * (1 - u)^2,
        phi''(d) = -6 A / rho^2 * (1 - u)^2 + 24 A d^2 / rho^4 * (1 - u),
        Lap f    = phi'' + (m - 1) cot_kappa(d) phi'.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if radius >= model.injectivity_radius:
        raise ValueError("bump must fit inside the injectivity radius")
    c = model.check_point(_coords(center)).copy()
    rho2 = radius * radius
    lap0 = -6.0 * amplitude / rho2 * model.dim  # limit of Lap f at the center

    def _eval(pts):
        d = np.asarray(model.distance(pts, c))
        u = d * d / rho2
        return np.where(u < 1.0, amplitude * (1.0 - np.minimum(u, 1.0)) ** 3, 0.0)

    def _dphi(d):
        u = d * d / rho2
        return np.where(u < 1.0, -6.0 * amplitude * d / rho2 * (1.0 - np.minimum(u, 1.0)) ** 2, 0.0)

    def _gradient(pts):
        pts = np.asarray(pts, dtype=float)
        d = np.asarray(model.distance(pts, c))
        dphi = _dphi(d)
        toward_center = model.log(pts, np.broadcast_to(c, pts.shape))
        dd = d[..., None]
        away = np.where(dd > 1e-14, -toward_center / np.where(dd > 1e-14, dd, 1.0), 0.0)
        return dphi[..., None] * away

    def _gradient_ambient(pts):
        pts = np.asarray(pts, dtype=float)
        d, unit_toward = toward_target(model, pts, c)
        return -_dphi(d)[..., None] * unit_toward

    def _gradient_norm(pts):
        return np.abs(_dphi(np.asarray(model.distance(pts, c))))

    def _laplacian(pts):
        d = np.asarray(model.distance(pts, c))
        u = np.minimum(d * d / rho2, 1.0)
        inside = d * d / rho2 < 1.0
        one_m = 1.0 - u
        ddphi = -6.0 * amplitude / rho2 * one_m**2 + 24.0 * amplitude * d * d / (rho2 * rho2) * one_m
        dphi = -6.0 * amplitude * d / rho2 * one_m**2
        radial = ddphi + _cot_kappa(model, d) * dphi
        out = np.where(inside, np.where(d < 1e-8, lap0, radial), 0.0)
        return out

    return TestFunction(
        id=fid or f"bump(r={radius:.3g})",
        eval=_eval,
        gradient=_gradient,
        laplacian=_laplacian,
        support_radius=radius,
        center=c,
        gradient_ambient=_gradient_ambient,
        gradient_norm=_gradient_norm,
    )


def _smoothstep(u):
    """Quintic smoothstep: 0 -> 1 on [0, 1] with vanishing first and second
    derivatives at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _smoothstep_d1(u):
    inside = (u > 0.0) & (u < 1.0)
    return np.where(inside, 30.0 * u**2 - 60.0 * u**3 + 30.0 * u**4, 0.0)


def _smoothstep_d2(u):
    inside = (u > 0.0) & (u < 1.0)
    return np.where(inside, 60.0 * u - 180.0 * u**2 + 120.0 * u**3, 0.0)


def coordinate_window(flat_radius: float = 2.0, taper: float = 2.0, m: int = 1) -> TestFunction:
    """Euclidean f with f(z) = z_1 exactly on |z_1| <= flat_radius, tapered to
    zero over [flat_radius, flat_radius + taper] by a quintic smoothstep."""

    R, W = float(flat_radius), float(taper)

    def window(r):
        return 1.0 - _smoothstep((r - R) / W)

    def window_d1(r):
        return -_smoothstep_d1((r - R) / W) / W

    def window_d2(r):
        return -_smoothstep_d2((r - R) / W) / (W * W)

    def _eval(pts):
        z = np.asarray(pts, dtype=float)[..., 0]
        r = np.abs(z)
        return z * window(r)

    def _gradient(pts):
        pts = np.asarray(pts, dtype=float)
        z = pts[..., 0]
        r = np.abs(z)
        g = window(r) + z * np.sign(z) * window_d1(r)
        out = np.zeros_like(pts)
        out[..., 0] = g
        return out

    def _laplacian(pts):
        z = np.asarray(pts, dtype=float)[..., 0]
        r = np.abs(z)
        return 2.0 * np.sign(z) * window_d1(r) + z * window_d2(r)

    return TestFunction(
        id=f"coord*window({R:.3g}+{W:.3g})",
        eval=_eval,
        gradient=_gradient,
        laplacian=_laplacian,
        support_radius=R + W,
        center=np.zeros(m),
        gradient_ambient=_gradient,
    )


def standard_bumps(model: ManifoldModel, x, y) -> list[TestFunction]:
    """Three bumps along the geodesic from x to y, with supports that keep a
    gap of at least 0.1 d(x, y) from y (so the drift integrand vanishes
    identically near the terminal point)."""
    xc = model.check_point(_coords(x))
    yc = model.check_point(_coords(y))
    D = float(model.distance(xc, yc))
    if D < 1e-9:
        raise ValueError("standard bump suite needs x != y")
    out = []
    for s, frac in ((0.25, 0.20), (0.5, 0.30), (0.75, 0.15)):
        center = model.geopoint(xc, yc, s)
        out.append(radial_bump(model, center, frac * D, fid=f"bump@{s:g}"))
    return out


def terminal_bump(model: ManifoldModel, x, y) -> TestFunction:
    """A bump whose support contains y strictly inside but off-center, so the
    drift integrand keeps its integrable 1/sqrt(T - r) singularity."""
    xc = model.check_point(_coords(x))
    yc = model.check_point(_coords(y))
    D = float(model.distance(xc, yc))
    center = model.geopoint(xc, yc, 0.85)
    return radial_bump(model, center, 0.3 * D, fid="bump@terminal")


# ---------------------------------------------------------------------------
# the compensated process Y
# ---------------------------------------------------------------------------


def drift_integrand(
    model: ManifoldModel,
    f: TestFunction,
    t: float,
    z,
    y,
    T: float,
    ctl: SeriesControl = DEFAULT_CTL,
) -> float:
    """< grad log p^y(T - t, z), grad f(z) > in the metric at z."""
    if t >= T:
        raise ValueError("need t < T")
    from .heatkernel import log_kernel_gradient

    zc = model.check_point(_coords(z))
    grad_logp = log_kernel_gradient(model, T - t, zc, y, ctl).components
    grad_f = np.asarray(f.gradient(zc))
    return float(np.dot(grad_logp, grad_f))


def _drift_dot_gradf(model, pts, y, tau, f, profile, drift_amb=None):
    """Batch < grad log p^y(tau, .), grad f > at path points pts (k, amb)."""
    if f.gradient_ambient is not None and drift_amb is not None:
        return tangent_inner(model, drift_amb, np.asarray(f.gradient_ambient(pts)))
    if f.gradient_ambient is not None:
        grad_f = np.asarray(f.gradient_ambient(pts))
        d, unit = toward_target(model, pts, np.asarray(y, dtype=float))
        if isinstance(model, Euclidean):
            return (d / tau) * tangent_inner(model, unit, grad_f)
        _, dlog = profile(d) if profile is not None else (None, None)
        if dlog is None:
            from .heatkernel import radial_log_kernel

            _, dlog = radial_log_kernel(model, tau, d)
        return -np.asarray(dlog) * tangent_inner(model, unit, grad_f)
    grad_f = np.asarray(f.gradient(pts))
    if isinstance(model, Euclidean):
        return np.sum((y[None, :] - pts) / tau * grad_f, axis=-1)
    if isinstance(model, Circle):
        delta = Circle.signed_difference(pts[:, 0], y[0])
        _, dlog = profile(np.abs(delta))
        return np.sign(delta) * dlog * grad_f[:, 0]
    d = np.asarray(model.distance(pts, y))
    _, dlog = profile(d)
    unit = model.log(pts, np.broadcast_to(y, pts.shape))
    dd = d[:, None]
    unit = np.where(dd > 1e-14, unit / np.where(dd > 1e-14, dd, 1.0), 0.0)
    return -np.asarray(dlog) * np.sum(unit * grad_f, axis=-1)


def _profiles_for(model, taus, ctl):
    """RadialProfile per positive tau (None where closed forms are direct)."""
    if isinstance(model, (Circle, Sphere2, Hyperbolic3)):
        return {tau: radial_profile(model, tau, ctl) for tau in taus}
    return {tau: None for tau in taus}


def compute_Y_ensemble(
    ensemble: PathEnsemble,
    fs: list[TestFunction],
    at_indices=None,
    ctl: SeriesControl = DEFAULT_CTL,
):
    """Y per path for several test functions in one sweep over the grid.

    Returns {f.id: array (n_paths, len(at_indices))}; at_indices defaults to
    every grid index. Trapezoid in time; the final interval takes the drift
    integrand at its left endpoint.
    """
    spec = ensemble.spec
    model = spec.model
    grid = ensemble.grid
    times = grid.times
    n_t = times.size
    if at_indices is None:
        at_indices = list(range(n_t))
    at_set = {int(i) for i in at_indices}
    pts = ensemble.points
    n = ensemble.n_paths

    taus = [float(spec.T - times[j]) for j in range(n_t - 1)]
    needs_profile = isinstance(model, (Circle, Sphere2, Hyperbolic3))

    out = {f.id: np.empty((n, len(at_indices))) for f in fs}
    order = {int(i): col for col, i in enumerate(at_indices)}

    ambient_ok = all(f.gradient_ambient is not None for f in fs)

    def step_drift(j, prof):
        if not ambient_ok:
            return None
        return _drift_ambient(model, pts[:, j, :], spec.y, taus[j], ctl, prof)

    f0 = {f.id: np.asarray(f.eval(pts[:, 0, :])) for f in fs}
    quad = {f.id: np.zeros(n) for f in fs}
    prev = {}
    prof0 = radial_profile(model, taus[0], ctl) if needs_profile else None
    drift0 = step_drift(0, prof0)
    for f in fs:
        lap0 = np.asarray(f.laplacian(pts[:, 0, :]))
        dr0 = _drift_dot_gradf(model, pts[:, 0, :], spec.y, taus[0], f, prof0, drift0)
        prev[f.id] = (lap0, dr0)
        if 0 in at_set:
            out[f.id][:, order[0]] = 0.0

    for j in range(1, n_t):
        dt = float(times[j] - times[j - 1])
        last = j == n_t - 1
        prof = None
        drift_j = None
        if not last:
            if needs_profile:
                prof = radial_profile(model, taus[j], ctl)
            drift_j = step_drift(j, prof)
        for f in fs:
            lap_prev, dr_prev = prev[f.id]
            lap_j = np.asarray(f.laplacian(pts[:, j, :]))
            if last:
                # Lap f by trapezoid; drift by its left-endpoint value
                quad[f.id] += dt * (0.25 * (lap_prev + lap_j) + dr_prev)
                dr_j = np.zeros(n)
            else:
                dr_j = _drift_dot_gradf(model, pts[:, j, :], spec.y, taus[j], f, prof, drift_j)
                quad[f.id] += dt * (0.25 * (lap_prev + lap_j) + 0.5 * (dr_prev + dr_j))
            prev[f.id] = (lap_j, dr_j)
            if j in at_set:
                fj = np.asarray(f.eval(pts[:, j, :]))
                out[f.id][:, order[j]] = fj - f0[f.id] - quad[f.id]
    return out


def compute_Y(path: BridgePath, f: TestFunction, ctl: SeriesControl = DEFAULT_CTL) -> np.ndarray:
    """Y along one path at every grid time (Y_0 = 0)."""
    ens = PathEnsemble(
        spec=path.spec,
        grid=path.grid,
        points=path.points[None, :, :],
        stream_id=path.stream_id,
        terminal_snap=path.terminal_snap,
    )
    return compute_Y_ensemble(ens, [f], ctl=ctl)[f.id][0]


# ---------------------------------------------------------------------------
# martingale tests and integrability
# ---------------------------------------------------------------------------


@dataclass
class MartingaleReport:
    f_id: str
    times: list
    mean_Y: list  # (time, mean, se)
    conditional_defects: list  # (s, t, g_id, defect, se)
    integrability_estimate: float
    integrability_se: float
    passed: bool
    note: str = (
        "pass criterion: |defect| <= 4*SE per entry (two-sided false-alarm "
        "~6e-5 each; apply a Bonferroni correction when reading the battery "
        "as a whole)"
    )

    def to_dict(self):
        return {
            "f_id": self.f_id,
            "times": [float(t) for t in self.times],
            "mean_Y": [
                {"time": float(t), "mean": float(m), "se": float(s)} for t, m, s in self.mean_Y
            ],
            "conditional_defects": [
                {"s": float(s), "t": float(t), "g": g, "defect": float(d), "se": float(se)}
                for s, t, g, d, se in self.conditional_defects
            ],
            "integrability_estimate": float(self.integrability_estimate),
            "integrability_se": float(self.integrability_se),
            "pass": bool(self.passed),
            "note": self.note,
        }


def standard_conditioners(model: ManifoldModel, grid, t: float):
    """Bounded F_t-measurable functionals: constants, a coordinate projection
    at time ~t/2, and (on angular models) cos/sin of the angle there."""
    idx = int(np.argmin(np.abs(grid.times - t / 2.0)))
    time_used = float(grid.times[idx])
    conds = [("1", idx, lambda v: np.ones(v.shape[0]))]
    if isinstance(model, Circle):
        conds.append((f"cos@{time_used:g}", idx, lambda v: np.cos(v[:, 0])))
        conds.append((f"sin@{time_used:g}", idx, lambda v: np.sin(v[:, 0])))
    elif isinstance(model, Sphere2):
        conds.append((f"z@{time_used:g}", idx, lambda v: v[:, 2]))
    elif isinstance(model, Hyperbolic3):
        conds.append((f"tanh_x1@{time_used:g}", idx, lambda v: np.tanh(v[:, 1])))
    else:
        conds.append((f"x@{time_used:g}", idx, lambda v: v[:, 0]))
    return conds


def martingale_test(
    ensemble: PathEnsemble,
    f: TestFunction,
    pairs,
    conditioners=None,
    ctl: SeriesControl = DEFAULT_CTL,
) -> MartingaleReport:
    """E[(Y_s - Y_t) g] for each pair t < s (s may equal T) and each bounded
    conditioning functional g of the path up to t; passes when every defect
    is within 4 standard errors of zero and the integrability estimate is
    finite."""
    grid = ensemble.grid
    pairs = [(float(s), float(t)) for s, t in pairs]
    for s, t in pairs:
        if not (t < s):
            raise ValueError("pairs must have t < s")
    all_times = sorted({t for p in pairs for t in p})
    idx = [grid.index_of(t) for t in all_times]
    Y = compute_Y_ensemble(ensemble, [f], at_indices=idx, ctl=ctl)[f.id]
    col = {t: k for k, t in enumerate(all_times)}
    n = ensemble.n_paths

    mean_Y = []
    for t in all_times:
        v = Y[:, col[t]]
        mean_Y.append((t, float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(n))))

    defects = []
    ok = True
    for s, t in pairs:
        conds = conditioners
        if conds is None:
            conds = standard_conditioners(ensemble.spec.model, grid, t)
        inc = Y[:, col[s]] - Y[:, col[t]]
        for gid, gidx, fn in conds:
            if grid.times[gidx] > t + 1e-12:
                raise ValueError(f"conditioner {gid} looks into the future of t={t}")
            g = np.asarray(fn(ensemble.points[:, gidx, :]), dtype=float)
            prod = inc * g
            defect = float(np.mean(prod))
            se = float(np.std(prod, ddof=1) / math.sqrt(n))
            defects.append((s, t, gid, defect, se))
            if abs(defect) > 4.0 * se:
                ok = False

    integ = integrability_estimate(ensemble, f, strides=(1,), ctl=ctl)
    ok = ok and math.isfinite(integ.value)
    return MartingaleReport(
        f_id=f.id,
        times=all_times,
        mean_Y=mean_Y,
        conditional_defects=defects,
        integrability_estimate=integ.value,
        integrability_se=integ.se,
        passed=ok,
    )


@dataclass
class IntegrabilityResult:
    value: float
    se: float
    refinement: list  # (dt, estimate), coarse to fine, on common paths
    increments: list  # |I_{k+1} - I_k|

    @property
    def increments_decreasing(self) -> bool:
        if len(self.increments) < 2:
            return True
        return all(b < 0.9 * a for a, b in zip(self.increments, self.increments[1:]))


def integrability_estimate(
    ensemble: PathEnsemble,
    f: TestFunction,
    strides=(4, 2, 1),
    ctl: SeriesControl = DEFAULT_CTL,
) -> IntegrabilityResult:
    """Monte Carlo + trapezoid estimate of
    E int_0^T |grad log p^y(T - r, X_r)| |grad f(X_r)| dr,
    with a refinement sequence across the given strides of the ensemble grid
    (stride k = the same paths viewed at spacing k * dt, so the sequence has
    common randomness and its Cauchy increments isolate quadrature error)."""
    strides = sorted(set(int(s) for s in strides), reverse=True)
    seq = []
    value = se = math.nan
    for stride in strides:
        view = restrict_to_stride(ensemble, stride) if stride > 1 else ensemble
        I = _integrability_single(view, f, ctl)
        est = float(np.mean(I))
        seq.append((float(view.grid.uniform_dt or np.diff(view.grid.times).max()), est))
        value = est
        se = float(np.std(I, ddof=1) / math.sqrt(len(I)))
    increments = [abs(b[1] - a[1]) for a, b in zip(seq, seq[1:])]
    return IntegrabilityResult(value=value, se=se, refinement=seq, increments=increments)


def _integrability_single(ensemble: PathEnsemble, f: TestFunction, ctl) -> np.ndarray:
    spec = ensemble.spec
    model = spec.model
    times = ensemble.grid.times
    pts = ensemble.points
    n = ensemble.n_paths
    needs_profile = isinstance(model, (Circle, Sphere2, Hyperbolic3))

    def norm_drift_gradf(j):
        tau = float(spec.T - times[j])
        p = pts[:, j, :]
        if f.gradient_norm is not None:
            gf = np.asarray(f.gradient_norm(p))
        elif f.gradient_ambient is not None:
            ga = np.asarray(f.gradient_ambient(p))
            gf = np.sqrt(np.maximum(tangent_inner(model, ga, ga), 0.0))
        else:
            gf = np.linalg.norm(np.asarray(f.gradient(p)), axis=-1)
        d = np.asarray(model.distance(p, spec.y))
        if isinstance(model, Euclidean):
            gl = d / tau
        else:
            prof = radial_profile(model, tau, ctl) if needs_profile else None
            if prof is None:
                from .heatkernel import radial_log_kernel

                _, dlog = radial_log_kernel(model, tau, d, ctl)
            else:
                _, dlog = prof(d)
            gl = np.abs(np.asarray(dlog))
        return gl * gf

    total = np.zeros(n)
    prev = norm_drift_gradf(0)
    for j in range(1, times.size):
        dt = float(times[j] - times[j - 1])
        if j == times.size - 1:
            total += dt * prev  # left endpoint on the final interval
        else:
            cur = norm_drift_gradf(j)
            total += 0.5 * dt * (prev + cur)
            prev = cur
    return total


def exit_time_localization(path: BridgePath, radii) -> list[int]:
    """First grid index at which the path leaves B(x, r), per radius r
    (the grid length N if it never does); nondecreasing in r."""
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing")
    model = path.spec.model
    d = np.asarray(model.distance(path.points, path.spec.x))
    N = path.grid.n_steps
    out = []
    for r in radii:
        exited = np.nonzero(d >= r)[0]
        exited = exited[exited > 0]
        out.append(int(exited[0]) if exited.size else N)
    return out


def stopped_Y_difference(path: BridgePath, f: TestFunction, radius: float,
                         ctl: SeriesControl = DEFAULT_CTL) -> float:
    """|Y_T - Y_{tau}| for tau the first exit from B(x, radius); identically
    zero when the path never re-enters supp(f) after tau (the integrand and
    f vanish outside the support)."""
    Y = compute_Y(path, f, ctl)
    [j] = exit_time_localization(path, [radius])
    return abs(float(Y[-1] - Y[j]))