"""Grid certificates for heat-kernel, gradient, and volume inequalities.

Each check sweeps a (t, x, y) grid inside a metric ball, fits the free
multiplicative constants of an inequality in log space (the exponent
constants are inputs), and returns a BoundCertificate recording the fitted
constants, the worst margin RHS - LHS, and any violating grid points.
Fitted constants are regression baselines: the inequalities assert existence
of constants, so a finite fit with zero violations is the checkable content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .geometry import Circle, Euclidean, ManifoldModel, Sphere2, _coords
from .heatkernel import DEFAULT_CTL, LOG_EPS, SeriesControl, radial_log_kernel

INEQUALITIES = (
    "GaussianUpper",
    "GaussianLower",
    "GradientBound",
    "LocalizedKernelUpper",
    "LocalizedKernelLower",
    "CheegerGromov",
    "VolumeDoubling",
    "ArnaudonThalmaier",
)

MARGIN_TOL = 1e-12  # relative slack below which a margin counts as a violation


@dataclass(frozen=True)
class RegionSpec:
    """Ball B(center, radius) with a Ricci lower bound -K on (a neighbourhood
    of) the ball; K >= 0."""

    center: np.ndarray
    radius: float
    ricci_lower: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.ricci_lower < 0:
            raise ValueError("ricci_lower must be >= 0 (it bounds Ric >= -K)")


def region_for(model: ManifoldModel, radius: float, center=None) -> RegionSpec:
    c = _coords(center) if center is not None else model.base_point()
    K = max(0.0, -model.curvature_const * (model.dim - 1))
    return RegionSpec(center=model.check_point(c), radius=radius, ricci_lower=K)


@dataclass
class BoundCertificate:
    inequality_id: str
    grid: dict
    fitted_constants: dict
    worst_margin: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return len(self.violations) == 0

    def to_dict(self) -> dict:
        return {
            "inequality_id": self.inequality_id,
            "grid": self.grid,
            "fitted_constants": {k: float(v) for k, v in self.fitted_constants.items()},
            "worst_margin": float(self.worst_margin),
            "violations": self.violations,
        }


# ---------------------------------------------------------------------------
# grid construction
# ---------------------------------------------------------------------------


def pair_grid(model: ManifoldModel, region: RegionSpec, n_pairs: int, seed: int = 42):
    """Point pairs inside B(center, radius): random pairs plus a radial ladder
    through the center (which includes coincident and near-diameter pairs)."""
    gen = rngmod.stream(seed, f"bounds-pairs/{model.kind}")
    R = region.radius

    def sample(n):
        direction = gen.standard_normal((n, model.dim))
        direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
        radius = R * gen.uniform(0.0, 1.0, (n, 1)) ** (1.0 / model.dim)
        base = np.broadcast_to(region.center, (n,) + region.center.shape)
        return model.exp(base, radius * direction)

    xs, ys = sample(n_pairs), sample(n_pairs)
    e = np.zeros(model.dim)
    e[0] = 1.0
    ladder_r = np.linspace(-0.95 * R, 0.95 * R, 9)
    ladder = model.exp(
        np.broadcast_to(region.center, (ladder_r.size,) + region.center.shape),
        ladder_r[:, None] * e,
    )
    xs = np.concatenate([xs, ladder, ladder])
    ys = np.concatenate([ys, ladder, ladder[::-1]])
    return xs, ys


def log_t_grid(t_min: float, t_max: float, n: int):
    return np.geomspace(t_min, t_max, n)


def default_grids(model: ManifoldModel, n_t: int = 40, n_pairs: int = 40, seed: int = 42):
    """Default (region, t_grid, xy_grid) sweeps per model.

    Curved compact models keep 2*radius below the injectivity radius (so the
    enlarged domains of the gradient machinery have a boundary) and sphere
    times start at 0.05, inside the float64-safe series envelope. The
    Euclidean t-grid carries a deep small-t tail where the closed-form
    gradient pins the fitted gradient constant at its asymptotic value.
    """
    if isinstance(model, Euclidean):
        region = region_for(model, 2.0)
        t = log_t_grid(0.01, 2.0, n_t)
    elif isinstance(model, Circle):
        region = region_for(model, 0.7)
        t = log_t_grid(0.01, 0.7, n_t)
    elif isinstance(model, Sphere2):
        region = region_for(model, 0.7)
        t = log_t_grid(0.05, 0.7, n_t)
    else:
        region = region_for(model, 2.0)
        t = log_t_grid(0.01, 2.0, n_t)
    xs, ys = pair_grid(model, region, n_pairs, seed)
    return region, t, (xs, ys)


def _grid_meta(model, region, t_grid, n_pairs, extra=None):
    meta = {
        "model": model.kind,
        "region_radius": float(region.radius),
        "ricci_lower": float(region.ricci_lower),
        "t_min": float(np.min(t_grid)),
        "t_max": float(np.max(t_grid)),
        "n_t": int(len(t_grid)),
        "n_pairs": int(n_pairs),
    }
    if extra:
        meta.update(extra)
    return meta


def _sphere_safe(model: ManifoldModel, t: float, d: np.ndarray):
    """Mask of pairs the float64 Legendre series can evaluate reliably."""
    if not isinstance(model, Sphere2):
        return np.ones_like(d, dtype=bool)
    return d * d / (2.0 * t) < (LOG_EPS - 13.0)


# ---------------------------------------------------------------------------
# Gaussian two-sided kernel bounds
# ---------------------------------------------------------------------------


def gaussian_bound_check(
    model: ManifoldModel,
    region: RegionSpec,
    t_grid,
    xy_grid,
    fit: bool = True,
    c2: float | None = None,
    c4: float | None = None,
    c1: float | None = None,
    c3: float | None = None,
    ctl: SeriesControl = DEFAULT_CTL,
) -> BoundCertificate:
    """Certify C1 t^(-m/2) e^(-C2 d^2/t) <= p(t,x,y) <= C3 t^(-m/2) e^(-C4 d^2/t).

    The exponent constants C2, C4 are inputs (defaults: exactly 1/2 on
    Euclidean models, 1/2 +/- 0.1 elsewhere); with fit=True the sharp
    multiplicative constants on the given grid are computed in log space.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.size == 0:
        raise ValueError("empty t grid")
    if np.any(t_grid <= 0) or np.any(t_grid > region.radius):
        raise ValueError("t grid must lie in (0, radius]")
    xs, ys = xy_grid
    if len(xs) == 0:
        raise ValueError("empty point grid")
    if c2 is None:
        c2 = 0.5 if isinstance(model, Euclidean) else 0.6
    if c4 is None:
        c4 = 0.5 if isinstance(model, Euclidean) else 0.4
    m = model.dim
    d = np.asarray(model.distance(xs, ys), dtype=float)

    rows = []  # (t, mask, logp)
    skipped = 0
    for t in t_grid:
        mask = _sphere_safe(model, float(t), d)
        skipped += int(d.size - np.count_nonzero(mask))
        if not np.any(mask):
            continue
        logp, _ = radial_log_kernel(model, float(t), d[mask], ctl)
        rows.append((float(t), mask, np.atleast_1d(logp)))
    if not rows:
        raise ValueError("no admissible grid points after accuracy filtering")

    if fit:
        log_c3 = -math.inf
        log_c1 = math.inf
        for t, mask, logp in rows:
            shift = logp + 0.5 * m * math.log(t)
            log_c3 = max(log_c3, float(np.max(shift + c4 * d[mask] ** 2 / t)))
            log_c1 = min(log_c1, float(np.min(shift + c2 * d[mask] ** 2 / t)))
        c3 = math.exp(log_c3)
        c1 = math.exp(log_c1)
    else:
        if c1 is None or c3 is None:
            raise ValueError("fit=False requires explicit c1 and c3")

    worst = math.inf
    violations = []
    for t, mask, logp in rows:
        dm = d[mask]
        p = np.exp(logp)
        upper = c3 * t ** (-0.5 * m) * np.exp(-c4 * dm * dm / t)
        lower = c1 * t ** (-0.5 * m) * np.exp(-c2 * dm * dm / t)
        for margin_arr, side in ((upper - p, "upper"), (p - lower, "lower")):
            worst = min(worst, float(np.min(margin_arr)))
            scale = np.maximum(p, 1e-300)
            bad = margin_arr < -MARGIN_TOL * scale
            for i in np.nonzero(bad)[0]:
                violations.append(
                    {"t": t, "d": float(dm[i]), "side": side, "margin": float(margin_arr[i])}
                )

    return BoundCertificate(
        inequality_id="GaussianUpper/GaussianLower",
        grid=_grid_meta(model, region, t_grid, len(xs), {"skipped_unsafe": skipped}),
        fitted_constants={"C1": c1, "C2": c2, "C3": c3, "C4": c4},
        worst_margin=worst,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# gradient bound |d log p^y(t,x)| <= C (t^(-1/2) + t^(-1) d(x,y))
# ---------------------------------------------------------------------------


def gradient_bound_check(
    model: ManifoldModel,
    region: RegionSpec,
    t_grid,
    xy_grid,
    c: float | None = None,
    ctl: SeriesControl = DEFAULT_CTL,
) -> BoundCertificate:
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.size == 0:
        raise ValueError("empty t grid")
    if np.any(t_grid <= 0) or np.any(t_grid > region.radius):
        raise ValueError("t grid must lie in (0, radius]")
    xs, ys = xy_grid
    if len(xs) == 0:
        raise ValueError("empty point grid")
    d = np.asarray(model.distance(xs, ys), dtype=float)
    if isinstance(model, Sphere2):
        d = d[d <= math.pi - 0.1]  # cut-locus band excluded

    rows = []
    for t in t_grid:
        mask = _sphere_safe(model, float(t), d)
        if not np.any(mask):
            continue
        _, dlog = radial_log_kernel(model, float(t), d[mask], ctl)
        rows.append((float(t), d[mask], np.abs(np.atleast_1d(dlog))))
    if not rows:
        raise ValueError("no admissible grid points after accuracy filtering")

    if c is None:
        c = 0.0
        for t, dm, lhs in rows:
            base = t ** (-0.5) + dm / t
            c = max(c, float(np.max(lhs / base)))

    worst = math.inf
    violations = []
    for t, dm, lhs in rows:
        margin = c * (t ** (-0.5) + dm / t) - lhs
        worst = min(worst, float(np.min(margin)))
        bad = margin < -MARGIN_TOL * np.maximum(lhs, 1.0)
        for i in np.nonzero(bad)[0]:
            violations.append({"t": t, "d": float(dm[i]), "margin": float(margin[i])})

    return BoundCertificate(
        inequality_id="GradientBound",
        grid=_grid_meta(model, region, t_grid, len(xs), {"cut_locus_band": 0.1}),
        fitted_constants={"C": c},
        worst_margin=worst,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# Arnaudon-Thalmaier localized Hamilton gradient estimate
# ---------------------------------------------------------------------------


def arnaudon_thalmaier_rhs(
    S: float,
    dist_to_boundary: float,
    K: float,
    beta: float,
    m: int,
    sup_u: float,
    u_val: float,
) -> float:
    """Square of the localized gradient bound for positive heat-equation
    solutions u on [0, S] x D, at points half a boundary distance deep:

        2 (1/S + pi^2 (m + beta m + 7)/dist^2 + K/(4 beta) + K)
          * (4 + log(sup u / u_val))^2
    """
    if S <= 0 or dist_to_boundary <= 0 or beta <= 0 or sup_u <= 0 or u_val <= 0:
        raise ValueError("S, dist_to_boundary, beta, sup_u, u_val must be positive")
    if K < 0:
        raise ValueError("K must be >= 0")
    if u_val > sup_u:
        raise ValueError("u_val exceeds sup_u")
    lead = 1.0 / S + math.pi**2 * (m + beta * m + 7.0) / dist_to_boundary**2 + K / (4.0 * beta) + K
    return 2.0 * lead * (4.0 + math.log(sup_u / u_val)) ** 2


def arnaudon_thalmaier_check(
    model: ManifoldModel,
    region: RegionSpec,
    t_grid,
    xy_grid,
    beta: float = 1.0,
    ctl: SeriesControl = DEFAULT_CTL,
) -> BoundCertificate:
    """Sweep |d log p^y(t, x)|^2 <= arnaudon_thalmaier_rhs with S = t/2,
    u(s, z) = p^y(s + t/2, z), D = B(center, 2*radius), covered by the single
    ball B(center, radius), so dist_to_boundary = 2*radius.

    sup u = p(t/2, y, y): the kernel is radially decreasing with a diagonal
    decreasing in time, and y lies inside D, so the on-diagonal value at the
    earliest time dominates.
    """
    R = region.radius
    if model.injectivity_radius < math.inf and 2.0 * R >= model.injectivity_radius:
        raise ValueError("need 2*radius < injectivity radius so D has a boundary")
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.size == 0:
        raise ValueError("empty t grid")
    xs, ys = xy_grid
    d = np.asarray(model.distance(xs, ys), dtype=float)
    if isinstance(model, Sphere2):
        d = d[d <= math.pi - 0.1]
    K = region.ricci_lower
    m = model.dim

    worst = math.inf
    violations = []
    for t in t_grid:
        mask = _sphere_safe(model, float(t), d)
        if not np.any(mask):
            continue
        dm = d[mask]
        logp, dlog = radial_log_kernel(model, float(t), dm, ctl)
        diag, _ = radial_log_kernel(model, float(t) / 2.0, np.zeros(1), ctl)
        # log(sup_u / u_val) computed in log space (u_val may underflow)
        log_ratio = float(np.atleast_1d(diag)[0]) - np.atleast_1d(logp)
        lead = (
            2.0 / float(t)
            + math.pi**2 * (m + beta * m + 7.0) / (2.0 * R) ** 2
            + K / (4.0 * beta)
            + K
        )
        lhs = np.atleast_1d(np.asarray(dlog)) ** 2
        rhs = 2.0 * lead * (4.0 + log_ratio) ** 2
        margin = rhs - lhs
        worst = min(worst, float(np.min(margin)))
        bad = margin < -MARGIN_TOL * np.maximum(lhs, 1.0)
        for i in np.nonzero(bad)[0]:
            violations.append({"t": float(t), "d": float(dm[i]), "margin": float(margin[i])})

    return BoundCertificate(
        inequality_id="ArnaudonThalmaier",
        grid=_grid_meta(model, region, t_grid, len(xs), {"beta": beta, "S": "t/2"}),
        fitted_constants={"beta": beta, "K": K, "dist_to_boundary": 2.0 * R},
        worst_margin=worst,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# localized (volume-normalized) kernel bounds
# ---------------------------------------------------------------------------


def localized_kernel_bounds(mu_ball_x: float, mu_ball_y: float, t: float, d_xy: float, A):
    """(lower, upper) of the volume-normalized kernel sandwich with constants
    A = (A1, A2, A3, A4):

        e^(-A1 t) (mu_x mu_y)^(-1/2) e^(-A2 d^2/t)
            <= p <= e^(A3 t) (mu_x mu_y)^(-1/2) e^(-A4 d^2/t)
    """
    if mu_ball_x <= 0 or mu_ball_y <= 0 or t <= 0:
        raise ValueError("volumes and time must be positive")
    a1, a2, a3, a4 = A
    vol = (mu_ball_x * mu_ball_y) ** (-0.5)
    lower = math.exp(-a1 * t) * vol * math.exp(-a2 * d_xy**2 / t)
    upper = math.exp(a3 * t) * vol * math.exp(-a4 * d_xy**2 / t)
    return lower, upper


def localized_bound_check(
    model: ManifoldModel,
    region: RegionSpec,
    t_grid,
    xy_grid,
    a2: float | None = None,
    a4: float | None = None,
    ctl: SeriesControl = DEFAULT_CTL,
):
    """Fit A1, A3 so the volume-normalized sandwich holds on the grid;
    returns (lower_certificate, upper_certificate). Ball volumes are
    center-independent on the homogeneous models."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t_grid.size == 0:
        raise ValueError("empty t grid")
    xs, ys = xy_grid
    d = np.asarray(model.distance(xs, ys), dtype=float)
    if a2 is None:
        a2 = 0.5 if isinstance(model, Euclidean) else 0.6
    if a4 is None:
        a4 = 0.5 if isinstance(model, Euclidean) else 0.4

    rows = []
    for t in t_grid:
        mask = _sphere_safe(model, float(t), d)
        if not np.any(mask):
            continue
        logp, _ = radial_log_kernel(model, float(t), d[mask], ctl)
        logvol = -math.log(model.ball_volume(math.sqrt(float(t))))
        rows.append((float(t), d[mask], np.atleast_1d(logp), logvol))
    if not rows:
        raise ValueError("no admissible grid points after accuracy filtering")

    a1 = 1e-12
    a3 = 1e-12
    for t, dm, logp, logvol in rows:
        a1 = max(a1, float(np.max((logvol - a2 * dm * dm / t - logp) / t)))
        a3 = max(a3, float(np.max((logp - logvol + a4 * dm * dm / t) / t)))

    worst_lo = math.inf
    worst_up = math.inf
    viol_lo, viol_up = [], []
    for t, dm, logp, logvol in rows:
        p = np.exp(logp)
        lower = np.exp(-a1 * t + logvol - a2 * dm * dm / t)
        upper = np.exp(a3 * t + logvol - a4 * dm * dm / t)
        mlo = p - lower
        mup = upper - p
        worst_lo = min(worst_lo, float(np.min(mlo)))
        worst_up = min(worst_up, float(np.min(mup)))
        for i in np.nonzero(mlo < -MARGIN_TOL * np.maximum(p, 1e-300))[0]:
            viol_lo.append({"t": t, "d": float(dm[i]), "margin": float(mlo[i])})
        for i in np.nonzero(mup < -MARGIN_TOL * np.maximum(p, 1e-300))[0]:
            viol_up.append({"t": t, "d": float(dm[i]), "margin": float(mup[i])})

    consts = {"A1": a1, "A2": a2, "A3": a3, "A4": a4}
    meta = _grid_meta(model, region, t_grid, len(xs))
    return (
        BoundCertificate("LocalizedKernelLower", meta, consts, worst_lo, viol_lo),
        BoundCertificate("LocalizedKernelUpper", meta, consts, worst_up, viol_up),
    )


# ---------------------------------------------------------------------------
# volume comparison: Cheeger-Gromov and local volume doubling
# ---------------------------------------------------------------------------


def unit_sphere_volume(m: int) -> float:
    """|S^m|, the Riemannian volume of the unit m-sphere."""
    return 2.0 * math.pi ** ((m + 1) / 2.0) / math.gamma((m + 1) / 2.0)


def cheeger_gromov_bound(m: int, K: float, s: float) -> float:
    """|S^m| s^m e^(sqrt((m-1)K) s), dominating mu(B(x, s)) under Ric >= -K."""
    if s <= 0:
        raise ValueError("s must be positive")
    if K < 0:
        raise ValueError("K must be >= 0")
    return unit_sphere_volume(m) * s**m * math.exp(math.sqrt((m - 1) * K) * s)


def volume_doubling_bound(m: int, K: float, s: float, s_prime: float) -> float:
    """(s/s')^m e^(sqrt((m-1)K) s), dominating mu(B(x,s))/mu(B(x,s'))."""
    if not (0.0 < s_prime < s):
        raise ValueError("need 0 < s_prime < s")
    if K < 0:
        raise ValueError("K must be >= 0")
    return (s / s_prime) ** m * math.exp(math.sqrt((m - 1) * K) * s)


def cheeger_gromov_check(model: ManifoldModel, s_grid) -> BoundCertificate:
    s_grid = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if s_grid.size == 0:
        raise ValueError("empty s grid")
    K = max(0.0, -model.curvature_const * (model.dim - 1))
    worst = math.inf
    violations = []
    for s in s_grid:
        bound = cheeger_gromov_bound(model.dim, K, float(s))
        actual = model.ball_volume(float(s))
        margin = bound - actual
        worst = min(worst, margin)
        if margin < -MARGIN_TOL * actual:
            violations.append({"s": float(s), "margin": margin})
    return BoundCertificate(
        inequality_id="CheegerGromov",
        grid={
            "model": model.kind,
            "s_min": float(s_grid.min()),
            "s_max": float(s_grid.max()),
            "n": int(s_grid.size),
        },
        fitted_constants={"K": K, "unit_sphere_volume": unit_sphere_volume(model.dim)},
        worst_margin=worst,
        violations=violations,
    )


def volume_doubling_check(model: ManifoldModel, s_pairs) -> BoundCertificate:
    pairs = [(float(s), float(sp)) for s, sp in s_pairs]
    if not pairs:
        raise ValueError("empty pair grid")
    K = max(0.0, -model.curvature_const * (model.dim - 1))
    worst = math.inf
    violations = []
    for s, sp in pairs:
        bound = volume_doubling_bound(model.dim, K, s, sp)
        ratio = model.ball_volume(s) / model.ball_volume(sp)
        margin = bound - ratio
        worst = min(worst, margin)
        if margin < -MARGIN_TOL * ratio:
            violations.append({"s": s, "s_prime": sp, "margin": margin})
    return BoundCertificate(
        inequality_id="VolumeDoubling",
        grid={"model": model.kind, "n_pairs": len(pairs)},
        fitted_constants={"K": K},
        worst_margin=worst,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# full default sweep
# ---------------------------------------------------------------------------


def gradient_t_grid(model: ManifoldModel, t_grid) -> np.ndarray:
    """Gradient-check time grid: on Euclidean models a deep small-t tail is
    prepended, where the closed-form gradient d/t pins the fitted constant at
    its asymptotic value 1 (kernel-value fits must not see these times: the
    d^2/t terms there are far outside float range)."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if isinstance(model, Euclidean):
        return np.concatenate([[1e-20, 1e-16, 1e-12], t_grid])
    return t_grid


def default_certificates(model: ManifoldModel, seed: int = 42) -> dict[str, BoundCertificate]:
    """All certificate types on the model's default grids."""
    region, t_grid, xy = default_grids(model, seed=seed)
    s_max = min(2.0, 0.95 * model.injectivity_radius)
    s_grid = np.linspace(0.1 * s_max, s_max, 12)
    s_pairs = [(s, sp) for s in s_grid[2:] for sp in (0.3 * s, 0.6 * s)]
    lower, upper = localized_bound_check(model, region, t_grid, xy)
    return {
        "gaussian": gaussian_bound_check(model, region, t_grid, xy, fit=True),
        "gradient": gradient_bound_check(model, region, gradient_t_grid(model, t_grid), xy),
        "arnaudon_thalmaier": arnaudon_thalmaier_check(model, region, t_grid, xy),
        "localized_lower": lower,
        "localized_upper": upper,
        "cheeger_gromov": cheeger_gromov_check(model, s_grid),
        "volume_doubling": volume_doubling_check(model, s_pairs),
    }
