"""Brownian bridge sampling and the laws that define it.

Two samplers produce pinned paths from x to y over [0, T]:

  * sample_bridge_exact: sequential draws from the exact one-step conditional
    density  q(z) ~ p(dt, x_prev, z) * p(T - t, z, y).  On Euclidean models
    the conditional is Gaussian and is drawn by inverse CDF on a fine
    standard-normal mesh; on the circle the wrapped-Gaussian kernel makes the
    conditional an exact winding-number mixture of Gaussians (same mesh for
    the Gaussian component); on the sphere and H^3 it is rejection sampling
    with the heat-kernel step as proposal and the radially decreasing pinning
    factor as envelope, escalating rare far-out paths to an exact 2-D mesh
    draw.  Exact up to mesh resolution / table interpolation accuracy.

  * sample_bridge_sde: geodesic Euler-Maruyama for the guided equation with
    the exact drift grad log p(T - t, ., y), a per-step cap on the drift
    displacement, and a terminal snap to y.

Both record the stream address that produced them, making every path
replayable bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Circle, Euclidean, Hyperbolic3, ManifoldModel, Sphere2, _coords
from .heatkernel import DEFAULT_CTL, SeriesControl, radial_log_kernel, radial_profile
from .rng import RngStream


class GridError(ValueError):
    """Times not aligned with (or not forming) a valid grid."""


class EfficiencyError(RuntimeError):
    """Rejection sampler acceptance rate collapsed; refine the grid."""


class BudgetError(RuntimeError):
    """Nested Monte Carlo request exceeds the configured budget."""


MIN_ACCEPT_RATE = 1e-4
_MESH_N = 4096


@dataclass(frozen=True)
class BridgeSpec:
    model: ManifoldModel
    x: np.ndarray
    y: np.ndarray
    T: float

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("terminal time T must be positive")
        object.__setattr__(self, "x", self.model.check_point(_coords(self.x)).copy())
        object.__setattr__(self, "y", self.model.check_point(_coords(self.y)).copy())

    def reversed(self) -> "BridgeSpec":
        return BridgeSpec(self.model, self.y.copy(), self.x.copy(), self.T)


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise GridError("grid needs at least the two endpoint times")
        if np.any(np.diff(t) <= 0):
            raise GridError("grid times must be strictly increasing")
        if t[0] != 0.0:
            raise GridError("grid must start at exactly 0")
        object.__setattr__(self, "times", t.copy())

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n_steps + 1))

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def uniform_dt(self) -> float | None:
        d = np.diff(self.times)
        dt = d[0]
        return float(dt) if np.allclose(d, dt, rtol=1e-12, atol=0.0) else None

    def index_of(self, s: float) -> int:
        i = int(np.argmin(np.abs(self.times - s)))
        if abs(self.times[i] - s) > 1e-12 * max(1.0, self.T):
            raise GridError(f"time {s} is not on the grid")
        return i


@dataclass
class BridgePath:
    spec: BridgeSpec
    grid: TimeGrid
    points: np.ndarray  # (n_times, ambient_dim)
    stream_id: str
    terminal_snap: bool
    metadata: dict = field(default_factory=dict)


@dataclass
class PathEnsemble:
    """Paths sharing one spec and grid, stacked as (n_paths, n_times, ambient)."""

    spec: BridgeSpec
    grid: TimeGrid
    points: np.ndarray
    stream_id: str
    terminal_snap: bool
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.points.shape[0]

    def path(self, i: int) -> BridgePath:
        return BridgePath(
            spec=self.spec,
            grid=self.grid,
            points=self.points[i].copy(),
            stream_id=f"{self.stream_id}[{i}]",
            terminal_snap=self.terminal_snap,
            metadata=dict(self.metadata),
        )


# ---------------------------------------------------------------------------
# finite-dimensional bridge density
# ---------------------------------------------------------------------------


def fdd_log_density(
    spec: BridgeSpec, grid: TimeGrid, points, ctl: SeriesControl = DEFAULT_CTL
):
    """Log of the bridge's finite-dimensional density at the interior points.

    `points` holds the positions at the interior grid times t_1 .. t_{N-1}
    (leading batch dimensions allowed); the density is with respect to the
    product volume measure:

        sum_j log p(dt_j, x_{j-1}, x_j) + log p(dt_N, x_{N-1}, y)
            - log p(T, x, y).
    """
    if abs(grid.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise GridError("grid terminal time does not match the bridge spec")
    model = spec.model
    n_int = grid.n_steps - 1
    pts = np.asarray(points, dtype=float)
    if n_int == 0:
        if pts.size not in (0,):
            raise GridError("grid has no interior times but points were supplied")
        return 0.0
    if pts.shape[-2] != n_int or pts.shape[-1] != model.ambient_dim:
        raise GridError(f"expected points shaped (..., {n_int}, {model.ambient_dim})")
    deltas = np.diff(grid.times)
    out = 0.0
    prev = np.broadcast_to(spec.x, pts.shape[:-2] + (model.ambient_dim,))
    for j in range(n_int):
        d = model.distance(prev, pts[..., j, :])
        logp, _ = radial_log_kernel(model, float(deltas[j]), np.asarray(d), ctl)
        out = out + logp
        prev = pts[..., j, :]
    d = model.distance(prev, spec.y)
    logp, _ = radial_log_kernel(model, float(deltas[-1]), np.asarray(d), ctl)
    out = out + logp
    dxy = model.distance(spec.x, spec.y)
    log_total, _ = radial_log_kernel(model, spec.T, np.asarray(dxy), ctl)
    out = out - log_total
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# exact-marginal sampling machinery
# ---------------------------------------------------------------------------

_STD_MESH = np.linspace(-8.5, 8.5, 8193)
_STD_CDF = None


def _std_normal_cdf_table():
    global _STD_CDF
    if _STD_CDF is None:
        pdf = np.exp(-0.5 * _STD_MESH**2)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(_STD_MESH))])
        _STD_CDF = cdf / cdf[-1]
    return _STD_CDF


def _std_normal_mesh_draw(gen: np.random.Generator, shape):
    """Standard normal draws by inverse CDF on the fixed fine mesh."""
    cdf = _std_normal_cdf_table()
    u = gen.uniform(0.0, 1.0, shape)
    return np.interp(u, cdf, _STD_MESH)


def _circle_winding_step(starts, targets, delta, tau, gen):
    """Exact pinned conditional on the circle.

    The circle kernel is the projection of a line Gaussian, so

        q(z) ~ p(delta, a, z) p(tau, z, b)
             = sum_m  w_m N(z; a + delta (Delta + 2 pi m)/(delta + tau), v)

    with Delta the signed angle b - a, v = delta tau / (delta + tau), and
    winding weights w_m ~ exp(-(Delta + 2 pi m)^2 / (2 (delta + tau))):
    draw the winding from the categorical, then the Gaussian component via
    the standard-normal inverse-CDF mesh.
    """
    k = starts.shape[0]
    big = Circle.signed_difference(targets[:, 0], starts[:, 0])
    w = int(math.ceil((10.0 * math.sqrt(delta + tau) + math.pi) / (2.0 * math.pi))) + 1
    offsets = 2.0 * math.pi * np.arange(-w, w + 1)
    a_m = big[:, None] + offsets[None, :]
    logw = -a_m * a_m / (2.0 * (delta + tau))
    logw -= logw.max(axis=1, keepdims=True)
    weights = np.exp(logw)
    cdf = np.cumsum(weights, axis=1)
    u = gen.uniform(0.0, 1.0, k) * cdf[:, -1]
    sel = np.minimum((u[:, None] > cdf).sum(axis=1), a_m.shape[1] - 1)
    a_sel = a_m[np.arange(k), sel]
    v = delta * tau / (delta + tau)
    mean = starts[:, 0] + delta * a_sel / (delta + tau)
    z = mean + math.sqrt(v) * _std_normal_mesh_draw(gen, k)
    return Circle.wrap_angle(z)[:, None]


def _radial_proposal_table(model, delta, ctl):
    """Inverse-CDF table for the radial heat-kernel step r ~ p(delta, r) dA(r)."""
    if isinstance(model, Sphere2):
        rcap = min(math.pi, 14.0 * math.sqrt(delta))
        prof = radial_profile(model, delta, ctl)
        r = np.linspace(0.0, rcap, _MESH_N)
        logp, _ = prof(r)
        dens = np.exp(logp - logp.max()) * np.sin(r)
    elif isinstance(model, Hyperbolic3):
        rcap = 14.0 * math.sqrt(delta) + 2.0 * delta + 0.1
        r = np.linspace(0.0, rcap, _MESH_N)
        logp, _ = radial_log_kernel(model, delta, r, ctl)
        dens = np.exp(logp - logp.max()) * np.sinh(r) ** 2
    else:
        raise TypeError("radial proposals are for sphere/h3 only")
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
    cdf /= cdf[-1]
    return r, cdf


def _rowwise_inverse_cdf(cdf, mesh, u):
    """Inverse of per-row piecewise-linear CDFs at per-row query values."""
    j = np.clip((u[:, None] > cdf).sum(axis=1), 1, cdf.shape[1] - 1)
    rows = np.arange(cdf.shape[0])
    c0 = cdf[rows, j - 1]
    c1 = cdf[rows, j]
    frac = (u - c0) / np.maximum(c1 - c0, 1e-300)
    return mesh[j - 1] + np.clip(frac, 0.0, 1.0) * (mesh[j] - mesh[j - 1])


def _pinned_step_mesh2d(model, starts, targets, delta, tau, gen, ctl, prof_tau):
    """Exact-to-mesh draws of z ~ p(delta, a, z) p(tau, z, b) for hard paths.

    The conditional density depends on z only through (r, psi) = (distance
    from a, angle at a between z and b); r is drawn from its marginal and psi
    from the exact conditional row at the drawn r, by inverse CDF on fine
    meshes, vectorized across the batch.
    """
    k = starts.shape[0]
    big = np.asarray(model.distance(starts, targets)).reshape(k, 1, 1)
    psi = np.linspace(0.0, math.pi, 65)
    if isinstance(model, Sphere2):
        rcap = min(math.pi, 14.0 * math.sqrt(delta))
        r = np.linspace(1e-9, rcap, 257)
        logpr, _ = radial_profile(model, delta, ctl)(r)
        log_area = np.log(np.sin(np.minimum(r, math.pi - 1e-9)))
        log_psi_weight = np.zeros_like(psi)

        def dist2(rr, pp):
            return np.arccos(
                np.clip(np.cos(rr) * np.cos(big[..., 0]) + np.sin(rr) * np.sin(big[..., 0]) * np.cos(pp), -1, 1)
            )

        d2 = np.arccos(
            np.clip(
                np.cos(r)[None, :, None] * np.cos(big)
                + np.sin(r)[None, :, None] * np.sin(big) * np.cos(psi)[None, None, :],
                -1.0,
                1.0,
            )
        )
    else:
        rcap = 14.0 * math.sqrt(delta) + 2.0 * delta + 0.1
        r = np.linspace(1e-9, rcap, 257)
        logpr, _ = radial_profile(model, delta, ctl)(r)
        log_area = 2.0 * np.log(np.sinh(r))
        log_psi_weight = np.log(np.maximum(np.sin(psi), 1e-300))

        def dist2(rr, pp):
            return np.arccosh(
                np.maximum(np.cosh(rr) * np.cosh(big[..., 0]) - np.sinh(rr) * np.sinh(big[..., 0]) * np.cos(pp), 1.0)
            )

        d2 = np.arccosh(
            np.maximum(
                np.cosh(r)[None, :, None] * np.cosh(big)
                - np.sinh(r)[None, :, None] * np.sinh(big) * np.cos(psi)[None, None, :],
                1.0,
            )
        )
    log_pin, _ = prof_tau(d2.reshape(-1))
    logq = (logpr + log_area)[None, :, None] + log_pin.reshape(d2.shape) + log_psi_weight[None, None, :]
    logq -= logq.max(axis=(1, 2), keepdims=True)
    q = np.exp(logq)

    wpsi = np.full(psi.size, psi[1] - psi[0])
    wpsi[0] = wpsi[-1] = 0.5 * (psi[1] - psi[0])
    marg = q @ wpsi  # (k, nr)
    dr = r[1] - r[0]
    cdf_r = np.concatenate(
        [np.zeros((k, 1)), np.cumsum(0.5 * (marg[:, 1:] + marg[:, :-1]) * dr, axis=1)], axis=1
    )
    u = gen.uniform(0.0, 1.0, k) * cdf_r[:, -1]
    r_star = _rowwise_inverse_cdf(cdf_r, r, u)

    row_logpr = np.interp(r_star, r, logpr) + np.interp(r_star, r, log_area)
    d2_row = dist2(r_star.reshape(k, 1, 1), psi[None, None, :])[:, 0, :]
    log_pin_row, _ = prof_tau(d2_row.reshape(-1))
    logrow = row_logpr[:, None] + log_pin_row.reshape(k, psi.size) + log_psi_weight[None, :]
    logrow -= logrow.max(axis=1, keepdims=True)
    qrow = np.exp(logrow)
    dpsi = psi[1] - psi[0]
    cdf_p = np.concatenate(
        [np.zeros((k, 1)), np.cumsum(0.5 * (qrow[:, 1:] + qrow[:, :-1]) * dpsi, axis=1)], axis=1
    )
    up = gen.uniform(0.0, 1.0, k) * cdf_p[:, -1]
    psi_star = _rowwise_inverse_cdf(cdf_p, psi, up)

    toward = model.log(starts, targets)
    nt = np.linalg.norm(toward, axis=-1, keepdims=True)
    unit = np.where(nt > 1e-14, toward / np.where(nt > 1e-14, nt, 1.0), 0.0)
    unit[nt[:, 0] <= 1e-14, 0] = 1.0
    if model.dim == 2:
        perp = np.stack([-unit[:, 1], unit[:, 0]], axis=-1)
        sign = np.where(gen.uniform(size=k) < 0.5, 1.0, -1.0)[:, None]
        direction = np.cos(psi_star)[:, None] * unit + sign * np.sin(psi_star)[:, None] * perp
    else:
        ref = np.zeros_like(unit)
        use_alt = np.abs(unit[:, 0]) > 0.9
        ref[:, 0] = 1.0
        ref[use_alt, 0] = 0.0
        ref[use_alt, 1] = 1.0
        v1 = ref - np.sum(ref * unit, axis=-1, keepdims=True) * unit
        v1 /= np.linalg.norm(v1, axis=-1, keepdims=True)
        v2 = np.cross(unit, v1)
        phi = gen.uniform(0.0, 2.0 * math.pi, k)[:, None]
        perp = np.cos(phi) * v1 + np.sin(phi) * v2
        direction = np.cos(psi_star)[:, None] * unit + np.sin(psi_star)[:, None] * perp
    return model.exp(starts, r_star[:, None] * direction)


_MAIN_REJECTION_ROUNDS = 300


def _rejection_step(model, starts, targets, delta, tau, gen, ctl):
    """One conditional step z ~ p(delta, start, z) p(tau, z, target) by
    rejection: propose a heat-kernel move from each start and accept with
    probability p(tau, z, target) / p(tau, target, target) (the kernel is
    radially decreasing, so the on-diagonal value is a valid envelope).

    Paths whose prior acceptance probability p(delta+tau, start, target) /
    p(tau, 0) is too small for rejection to finish (far-out excursions) are
    escalated to the exact 2-D mesh sampler. If the ensemble-average
    acceptance collapses below MIN_ACCEPT_RATE the step refuses to run."""
    k = starts.shape[0]
    targets = np.broadcast_to(targets, starts.shape)
    prof_tau = radial_profile(model, tau, ctl)
    log_peak = float(prof_tau(np.zeros(1))[0][0])
    big = np.asarray(model.distance(starts, targets))
    logsum, _ = radial_profile(model, delta + tau, ctl)(big)
    screen = np.exp(np.minimum(np.asarray(logsum) - log_peak, 0.0))
    if float(np.mean(screen)) < MIN_ACCEPT_RATE:
        raise EfficiencyError(
            f"mean step acceptance {float(np.mean(screen)):.2e} below "
            f"{MIN_ACCEPT_RATE}; use a finer time grid"
        )
    out = np.empty_like(starts)
    # only paths with workable acceptance go through plain rejection
    workable = screen > 3.0 / _MAIN_REJECTION_ROUNDS
    pending = np.nonzero(workable)[0]
    rmesh, rcdf = _radial_proposal_table(model, delta, ctl)
    for _ in range(_MAIN_REJECTION_ROUNDS):
        if pending.size == 0:
            break
        kp = pending.size
        radii = np.interp(gen.uniform(0.0, 1.0, kp), rcdf, rmesh)
        direction = gen.standard_normal((kp, model.dim))
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        z = model.exp(starts[pending], radii[:, None] * direction)
        d = np.asarray(model.distance(z, targets[pending]))
        logp, _ = prof_tau(d)
        ratio = np.exp(np.minimum(np.asarray(logp) - log_peak, 0.0))
        acc = gen.uniform(0.0, 1.0, kp) < ratio
        out[pending[acc]] = z[acc]
        pending = pending[~acc]
    stragglers = np.concatenate([pending, np.nonzero(~workable)[0]])
    if stragglers.size:
        for block in np.array_split(stragglers, max(1, stragglers.size // 64)):
            out[block] = _pinned_step_mesh2d(
                model, starts[block], targets[block], delta, tau, gen, ctl, prof_tau
            )
    return out


def _conditional_steps(model, starts, y, schedule, gen, ctl):
    """Sequential one-step conditional sampling from per-path starts.

    schedule is a list of (delta_j, tau_j) pairs with tau_j the remaining time
    to the pinned endpoint after the step. Returns (k, n_steps, ambient).
    """
    k = starts.shape[0]
    y = np.asarray(y, dtype=float)
    out = np.empty((k, len(schedule), starts.shape[1]))
    cur = starts
    for j, (delta, tau) in enumerate(schedule):
        if isinstance(model, Euclidean):
            v = delta * tau / (delta + tau)
            mean = (cur * tau + y[None, :] * delta) / (delta + tau)
            xi = _std_normal_mesh_draw(gen, cur.shape)
            cur = mean + math.sqrt(v) * xi
        elif isinstance(model, Circle):
            cur = _circle_winding_step(cur, np.broadcast_to(y, cur.shape), delta, tau, gen)
        else:
            cur = _rejection_step(model, cur, y[None, :], delta, tau, gen, ctl)
        out[:, j, :] = cur
    return out


def sample_bridge_exact_ensemble(
    spec: BridgeSpec,
    grid: TimeGrid,
    n_paths: int,
    stream: RngStream,
    ctl: SeriesControl = DEFAULT_CTL,
) -> PathEnsemble:
    """Exact-marginal bridge paths: each interior point is drawn from its
    one-step conditional density given the previous point and the pinned
    endpoint; the terminal point is y by construction."""
    if abs(grid.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise GridError("grid terminal time does not match the bridge spec")
    model = spec.model
    gen = stream.generator()
    times = grid.times
    schedule = [
        (float(times[j] - times[j - 1]), float(spec.T - times[j]))
        for j in range(1, times.size - 1)
    ]
    starts = np.broadcast_to(spec.x, (n_paths, model.ambient_dim)).copy()
    pts = np.empty((n_paths, times.size, model.ambient_dim))
    pts[:, 0, :] = spec.x
    if schedule:
        pts[:, 1:-1, :] = _conditional_steps(model, starts, spec.y, schedule, gen, ctl)
    pts[:, -1, :] = spec.y
    return PathEnsemble(
        spec=spec,
        grid=grid,
        points=pts,
        stream_id=stream.id,
        terminal_snap=True,
        metadata={"sampler": "exact"},
    )


def sample_bridge_exact(
    spec: BridgeSpec, grid: TimeGrid, stream: RngStream, ctl: SeriesControl = DEFAULT_CTL
) -> BridgePath:
    ens = sample_bridge_exact_ensemble(spec, grid, 1, stream, ctl)
    path = ens.path(0)
    path.stream_id = stream.id
    return path


def restrict_to_stride(ensemble: PathEnsemble, stride: int) -> PathEnsemble:
    """The same paths on every stride-th grid time (endpoints kept).

    The bridge law is consistent under restriction to a subgrid, so for
    exact-marginal ensembles this is a perfectly coupled coarse-dt ensemble;
    refinement sequences built from one fine ensemble and decreasing strides
    have common randomness by construction.
    """
    if stride < 1 or (ensemble.grid.n_steps % stride) != 0:
        raise GridError(f"stride {stride} does not divide {ensemble.grid.n_steps} steps")
    idx = np.arange(0, ensemble.grid.times.size, stride)
    return PathEnsemble(
        spec=ensemble.spec,
        grid=TimeGrid(ensemble.grid.times[idx]),
        points=ensemble.points[:, idx, :],
        stream_id=ensemble.stream_id,
        terminal_snap=ensemble.terminal_snap,
        metadata=dict(ensemble.metadata),
    )


# ---------------------------------------------------------------------------
# guided SDE sampler
# ---------------------------------------------------------------------------


def toward_target(model, pts, target):
    """(distance, ambient unit tangent at pts pointing toward target).

    Ambient representation avoids frame construction in sampler loops; on H^3
    the tangent inner product is the Minkowski one, under which these vectors
    are unit."""
    target = np.broadcast_to(target, pts.shape)
    if isinstance(model, Euclidean):
        diff = target - pts
        d = np.linalg.norm(diff, axis=-1)
        unit = np.where(d[:, None] > 1e-300, diff / np.maximum(d[:, None], 1e-300), 0.0)
        return d, unit
    if isinstance(model, Circle):
        delta = Circle.signed_difference(target[:, 0], pts[:, 0])
        return np.abs(delta), np.sign(delta)[:, None]
    if isinstance(model, Sphere2):
        dot = np.sum(pts * target, axis=-1)
        w = target - dot[:, None] * pts
        s = np.linalg.norm(w, axis=-1)
        d = np.arctan2(s, dot)
        unit = np.where(s[:, None] > 1e-14, w / np.maximum(s[:, None], 1e-300), 0.0)
        return d, unit
    d = np.asarray(model.distance(pts, target))
    sh = np.sinh(d)
    w = target - np.cosh(d)[:, None] * pts
    unit = np.where(sh[:, None] > 1e-14, w / np.maximum(sh[:, None], 1e-300), 0.0)
    return d, unit


def tangent_inner(model, a, b):
    """Metric inner product of ambient tangent vectors."""
    if isinstance(model, Hyperbolic3):
        return Hyperbolic3.minkowski(a, b)
    return np.sum(a * b, axis=-1)


def _isotropic_tangent_ambient(model, pts, gen):
    """Standard-normal tangent vectors at pts, ambient, isotropic in the
    metric (projection for the sphere; transport of a base-point Gaussian for
    H^3, where a raw Euclidean projection would not be isotropic)."""
    k = pts.shape[0]
    if isinstance(model, (Euclidean, Circle)):
        return gen.standard_normal((k, model.ambient_dim))
    if isinstance(model, Sphere2):
        g = gen.standard_normal((k, 3))
        return g - np.sum(g * pts, axis=-1, keepdims=True) * pts
    g = gen.standard_normal((k, 3))
    w0 = np.concatenate([np.zeros((k, 1)), g], axis=1)  # tangent at the base point
    base = np.broadcast_to(model.base_point(), pts.shape)
    d = np.asarray(model.distance(base, pts))
    close = d < 1e-14
    sh = np.where(close, 1.0, np.sinh(d))
    e = np.where(close[:, None], 0.0, (pts - np.cosh(d)[:, None] * base) / sh[:, None])
    along = Hyperbolic3.minkowski(w0, e)[:, None]
    e_q = np.sinh(d)[:, None] * base + np.cosh(d)[:, None] * e
    moved = (w0 - along * e) + along * e_q
    return np.where(close[:, None], w0, moved)


def _exp_ambient(model, pts, w):
    """Geodesic exponential with an ambient tangent vector."""
    if isinstance(model, Euclidean):
        return pts + w
    if isinstance(model, Circle):
        return Circle.wrap_angle(pts[:, 0] + w[:, 0])[:, None]
    if isinstance(model, Sphere2):
        s = np.linalg.norm(w, axis=-1, keepdims=True)
        unit = np.where(s > 1e-300, w / np.maximum(s, 1e-300), 0.0)
        out = np.cos(s) * pts + np.sin(s) * unit
        return out / np.linalg.norm(out, axis=-1, keepdims=True)
    s = np.sqrt(np.maximum(Hyperbolic3.minkowski(w, w), 0.0))[:, None]
    unit = np.where(s > 1e-300, w / np.maximum(s, 1e-300), 0.0)
    out = np.cosh(s) * pts + np.sinh(s) * unit
    spatial = out[..., 1:]
    x0 = np.sqrt(1.0 + np.sum(spatial**2, axis=-1, keepdims=True))
    return np.concatenate([x0, spatial], axis=-1)


def _drift_ambient(model, pts, y, tau, ctl, profile=None):
    """grad log p^y(tau, .) at pts, as an ambient tangent vector."""
    d, unit = toward_target(model, pts, np.asarray(y, dtype=float))
    if isinstance(model, Euclidean):
        return (d / tau)[:, None] * unit
    if profile is not None:
        _, dlog = profile(d)
    else:
        _, dlog = radial_log_kernel(model, tau, d, ctl)
    return -np.asarray(dlog)[:, None] * unit


def _drift_components(model, pts, y, tau, ctl, profile=None):
    """grad log p^y(tau, .) at pts, as frame components (vectorized)."""
    if isinstance(model, Euclidean):
        return (y[None, :] - pts) / tau
    if isinstance(model, Circle):
        delta = Circle.signed_difference(pts[:, 0], y[0])
        prof = profile if profile is not None else radial_profile(model, tau, ctl)
        _, dlog = prof(np.abs(delta))
        return (np.sign(delta) * dlog)[:, None]
    d = np.asarray(model.distance(pts, y))
    if profile is not None:
        _, dlog = profile(d)
    else:
        _, dlog = radial_log_kernel(model, tau, d, ctl)
    unit = model.log(pts, np.broadcast_to(y, pts.shape))
    dd = d[:, None]
    unit = np.where(dd < 1e-14, 0.0, unit / np.where(dd < 1e-14, 1.0, dd))
    return -np.asarray(dlog)[:, None] * unit


def sample_bridge_sde_ensemble(
    spec: BridgeSpec,
    grid: TimeGrid,
    n_paths: int,
    stream: RngStream,
    max_drift_step: float | None = None,
    ctl: SeriesControl = DEFAULT_CTL,
) -> PathEnsemble:
    """Geodesic Euler-Maruyama for the guided bridge SDE on a uniform grid:

        X_{j+1} = exp_{X_j}( grad log p^y(T - t_j, X_j) dt + sqrt(dt) xi_j ),

    with the per-step drift displacement capped at max_drift_step (default:
    min(injectivity_radius/2, 1.0)) and the final point snapped to y.
    """
    dt = grid.uniform_dt
    if dt is None:
        raise GridError("SDE sampler requires a uniform grid")
    if grid.n_steps < 8:
        raise GridError("SDE sampler requires at least 8 steps")
    if abs(grid.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise GridError("grid terminal time does not match the bridge spec")
    model = spec.model
    if max_drift_step is None:
        max_drift_step = min(0.5 * model.injectivity_radius, 1.0)
    gen = stream.generator()
    times = grid.times
    n_steps = grid.n_steps
    pts = np.empty((n_paths, times.size, model.ambient_dim))
    pts[:, 0, :] = spec.x
    cur = np.broadcast_to(spec.x, (n_paths, model.ambient_dim)).copy()
    capped = 0
    needs_profile = isinstance(model, (Circle, Sphere2))
    sqdt = math.sqrt(dt)
    for j in range(n_steps - 1):
        tau = float(spec.T - times[j])
        profile = radial_profile(model, tau, ctl) if needs_profile else None
        disp = _drift_ambient(model, cur, spec.y, tau, ctl, profile) * dt
        norm = np.sqrt(np.maximum(tangent_inner(model, disp, disp), 0.0))[:, None]
        over = norm[:, 0] > max_drift_step
        if np.any(over):
            capped += int(np.count_nonzero(over))
            disp = np.where(over[:, None], disp * (max_drift_step / norm), disp)
        noise = sqdt * _isotropic_tangent_ambient(model, cur, gen)
        cur = _exp_ambient(model, cur, disp + noise)
        pts[:, j + 1, :] = cur
    pts[:, -1, :] = spec.y
    frac = capped / max(1, n_paths * (n_steps - 1))
    meta = {"sampler": "sde", "capped_fraction": frac, "max_drift_step": max_drift_step}
    if frac > 0.05:
        meta["stability_warning"] = (
            f"drift cap triggered on {100 * frac:.1f}% of steps; decrease dt"
        )
    return PathEnsemble(
        spec=spec,
        grid=grid,
        points=pts,
        stream_id=stream.id,
        terminal_snap=True,
        metadata=meta,
    )


def sample_bridge_sde(
    spec: BridgeSpec,
    grid: TimeGrid,
    stream: RngStream,
    max_drift_step: float | None = None,
    ctl: SeriesControl = DEFAULT_CTL,
) -> BridgePath:
    ens = sample_bridge_sde_ensemble(spec, grid, 1, stream, max_drift_step, ctl)
    path = ens.path(0)
    path.stream_id = stream.id
    path.metadata = ens.metadata
    return path


# ---------------------------------------------------------------------------
# time reversal
# ---------------------------------------------------------------------------


def _reversed_times(grid: TimeGrid, metadata: dict):
    """t -> T - t, bit-exactly involutive: the pre-reversal times are stashed
    in the metadata so a second reversal restores them rather than recomputing
    T - (T - t) (which rounds)."""
    stash = metadata.pop("pre_reversal_times", None)
    if stash is not None:
        return np.array(stash, dtype=float), metadata
    T = grid.T
    new_times = T - grid.times[::-1]
    new_times[0] = 0.0
    new_times[-1] = T
    metadata["pre_reversal_times"] = [float(t) for t in grid.times]
    return new_times, metadata


def reverse_path(path: BridgePath) -> BridgePath:
    """The pathwise time reversal: grid t -> T - t, points reversed, endpoints
    swapped. An exact involution on the data structure."""
    new_times, meta = _reversed_times(path.grid, dict(path.metadata))
    return BridgePath(
        spec=path.spec.reversed(),
        grid=TimeGrid(new_times),
        points=path.points[::-1].copy(),
        stream_id=path.stream_id,
        terminal_snap=path.terminal_snap,
        metadata=meta,
    )


def reverse_ensemble(ens: PathEnsemble) -> PathEnsemble:
    new_times, meta = _reversed_times(ens.grid, dict(ens.metadata))
    return PathEnsemble(
        spec=ens.spec.reversed(),
        grid=TimeGrid(new_times),
        points=ens.points[:, ::-1].copy(),
        stream_id=ens.stream_id,
        terminal_snap=ens.terminal_snap,
        metadata=meta,
    )


# ---------------------------------------------------------------------------
# time-inhomogeneous Markov property (nested Monte Carlo)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovDefect:
    defect: float
    se: float
    n_outer: int
    inner_size: int

    @property
    def passed(self) -> bool:
        return abs(self.defect) <= 4.0 * self.se


def markov_defect(
    ensemble: PathEnsemble,
    S: float,
    phi_times,
    psi_times,
    phi,
    psi,
    inner_size: int = 100,
    stream: RngStream | None = None,
    budget: int = 200_000_000,
    ctl: SeriesControl = DEFAULT_CTL,
) -> MarkovDefect:
    """Estimate | E[Phi * Psi(X_{S+.})] - E[Phi * E'[Psi]] |, where E' runs
    over fresh sub-bridges from X_S to y with horizon T - S (inner size
    inner_size per outer path).

    phi maps values at phi_times, shape (n_paths, len(phi_times), ambient),
    to one bounded real per path; psi likewise at psi_times. All times must
    lie on the ensemble's grid, with phi_times <= S <= psi_times.
    """
    spec = ensemble.spec
    grid = ensemble.grid
    phi_times = list(phi_times)
    psi_times = list(psi_times)
    if any(t > S + 1e-12 for t in phi_times):
        raise GridError("phi_times must lie in [0, S]")
    if any(t < S - 1e-12 for t in psi_times):
        raise GridError("psi_times must lie in [S, T]")
    i_s = grid.index_of(S)
    i_phi = [grid.index_of(t) for t in phi_times]
    i_psi = [grid.index_of(t) for t in psi_times]
    n = ensemble.n_paths
    if n * inner_size * max(1, len(psi_times)) > budget:
        raise BudgetError(
            f"nested budget {n} x {inner_size} x {len(psi_times)} exceeds {budget}"
        )
    if stream is None:
        stream = RngStream(42, "markov-inner")
    gen = stream.generator()

    phi_vals = np.asarray(phi(ensemble.points[:, i_phi, :]), dtype=float)
    own = np.asarray(psi(ensemble.points[:, i_psi, :]), dtype=float)

    # fresh sub-bridges: starts are the outer X_S replicated inner_size times
    starts = np.repeat(ensemble.points[:, i_s, :], inner_size, axis=0)
    rel = [float(grid.times[i] - S) for i in i_psi]
    horizon = spec.T - S
    schedule = []
    prev = 0.0
    for r in rel:
        schedule.append((r - prev, horizon - r))
        prev = r
    # a psi time equal to T has tau = 0: the sub-bridge is pinned there
    sub_pts = np.empty((n * inner_size, len(rel), spec.model.ambient_dim))
    live = [j for j, (dlt, tau) in enumerate(schedule) if tau > 1e-14]
    if live:
        live_schedule = [schedule[j] for j in live]
        drawn = _conditional_steps(spec.model, starts, spec.y, live_schedule, gen, ctl)
        for col, j in enumerate(live):
            sub_pts[:, j, :] = drawn[:, col, :]
    for j, (dlt, tau) in enumerate(schedule):
        if tau <= 1e-14:
            sub_pts[:, j, :] = spec.y
    inner_vals = np.asarray(psi(sub_pts), dtype=float).reshape(n, inner_size)
    inner_mean = inner_vals.mean(axis=1)

    diff = phi_vals * (own - inner_mean)
    defect = float(np.mean(diff))
    se = float(np.std(diff, ddof=1) / math.sqrt(n))
    return MarkovDefect(defect=abs(defect), se=se, n_outer=n, inner_size=inner_size)
