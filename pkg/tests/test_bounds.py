import math

import numpy as np
import pytest

from bridgelab import bounds as B
from bridgelab.geometry import Circle, Euclidean, Hyperbolic3, Sphere2, model_from_name

ALL = ["euclidean:1", "euclidean:2", "s1", "s2", "h3"]


def test_region_spec_validation():
    with pytest.raises(ValueError):
        B.RegionSpec(center=np.zeros(1), radius=0.0, ricci_lower=0.0)
    with pytest.raises(ValueError):
        B.RegionSpec(center=np.zeros(1), radius=1.0, ricci_lower=-1.0)
    r = B.region_for(Hyperbolic3(), 2.0)
    assert r.ricci_lower == pytest.approx(2.0)  # Ric = -2 g on H3
    assert B.region_for(Sphere2(), 0.7).ricci_lower == 0.0


def test_gaussian_bound_euclid_equality():
    e1 = Euclidean(1)
    region, t_grid, xy = B.default_grids(e1)
    cert = B.gaussian_bound_check(e1, region, t_grid, xy, fit=True)
    assert cert.passed
    c = (2.0 * math.pi) ** -0.5
    assert cert.fitted_constants["C1"] == pytest.approx(c, rel=1e-12)
    assert cert.fitted_constants["C3"] == pytest.approx(c, rel=1e-12)
    # equality margins at the sharp exponents
    assert abs(cert.worst_margin) < 1e-12


def test_gaussian_bound_errors():
    e1 = Euclidean(1)
    region, t_grid, xy = B.default_grids(e1)
    with pytest.raises(ValueError, match="empty"):
        B.gaussian_bound_check(e1, region, [], xy)
    with pytest.raises(ValueError, match="radius"):
        B.gaussian_bound_check(e1, region, [region.radius * 2.0], xy)
    with pytest.raises(ValueError, match="explicit"):
        B.gaussian_bound_check(e1, region, t_grid, xy, fit=False)


def test_gaussian_bound_sphere_small_t_softer_exponent():
    s2 = Sphere2()
    region, _, xy = B.default_grids(s2)
    t_grid = B.log_t_grid(0.05, 0.3, 10)
    cert = B.gaussian_bound_check(s2, region, t_grid, xy, fit=True, c4=0.6)
    assert cert.passed
    assert math.isfinite(cert.fitted_constants["C3"])


def test_gradient_bound_euclid_fitted_constant_is_one():
    e1 = Euclidean(1)
    region, t_grid, xy = B.default_grids(e1)
    cert = B.gradient_bound_check(e1, region, B.gradient_t_grid(e1, t_grid), xy)
    assert cert.passed
    assert abs(cert.fitted_constants["C"] - 1.0) < 1e-9


def test_gradient_bound_margin_at_coincident_points():
    e1 = Euclidean(1)
    region = B.region_for(e1, 1.0)
    xy = (np.zeros((3, 1)), np.zeros((3, 1)))
    cert = B.gradient_bound_check(e1, region, [0.25], xy, c=1.0)
    # LHS = 0 at d = 0, so the margin is C * t^(-1/2)
    assert cert.worst_margin == pytest.approx(2.0, rel=1e-12)


def test_h3_gradient_constant_regression():
    h3 = Hyperbolic3()
    region, t_grid, xy = B.default_grids(h3)
    cert = B.gradient_bound_check(h3, region, t_grid, xy)
    assert cert.passed
    assert cert.fitted_constants["C"] <= 3.0  # regression baseline


def test_arnaudon_thalmaier_formula_value():
    v = B.arnaudon_thalmaier_rhs(
        S=1.0, dist_to_boundary=math.pi, K=0.0, beta=1.0, m=1, sup_u=2.0, u_val=2.0
    )
    assert v == pytest.approx(320.0, rel=1e-14)


def test_arnaudon_thalmaier_monotone_in_ratio():
    args = dict(S=0.5, dist_to_boundary=2.0, K=1.0, beta=0.7, m=3)
    lo = B.arnaudon_thalmaier_rhs(sup_u=1.0, u_val=1.0, **args)
    hi = B.arnaudon_thalmaier_rhs(sup_u=10.0, u_val=1.0, **args)
    assert hi > lo


def test_arnaudon_thalmaier_domain_errors():
    with pytest.raises(ValueError):
        B.arnaudon_thalmaier_rhs(1.0, 1.0, 0.0, 1.0, 2, sup_u=1.0, u_val=2.0)
    with pytest.raises(ValueError):
        B.arnaudon_thalmaier_rhs(0.0, 1.0, 0.0, 1.0, 2, sup_u=1.0, u_val=1.0)


@pytest.mark.parametrize("name", ["s1", "s2"])
def test_arnaudon_thalmaier_dominates_gradient(name):
    model = model_from_name(name)
    region, t_grid, xy = B.default_grids(model, n_t=20, n_pairs=20)
    cert = B.arnaudon_thalmaier_check(model, region, t_grid, xy)
    assert cert.passed
    assert cert.worst_margin > 0.0


def test_localized_bounds_collapse_and_diagonal():
    lower, upper = B.localized_kernel_bounds(2.0, 2.0, 1.0, 0.0, (0.0, 0.6, 0.0, 0.4))
    assert lower == pytest.approx(0.5)
    assert upper == pytest.approx(0.5)
    # on-diagonal small-t comparison on the circle: both bounds match
    # mu(B(x, sqrt(t)))^-1 up to the fitted e^(+-A t) factors
    s1 = Circle()
    t = 1e-3
    from bridgelab.heatkernel import radial_log_kernel

    logp, _ = radial_log_kernel(s1, t, np.zeros(1))
    p = float(np.exp(logp[0]))
    vol = s1.ball_volume(math.sqrt(t))
    assert p * vol == pytest.approx(math.sqrt(2.0 / math.pi), rel=1e-3)


@pytest.mark.parametrize("name", ALL)
def test_localized_sandwich_fits(name):
    model = model_from_name(name)
    region, t_grid, xy = B.default_grids(model, n_t=20, n_pairs=20)
    lower, upper = B.localized_bound_check(model, region, t_grid, xy)
    assert lower.passed and upper.passed
    for c in (*lower.fitted_constants.values(), *upper.fitted_constants.values()):
        assert math.isfinite(c) and c > 0


def test_cheeger_gromov_values_and_sweeps():
    assert B.cheeger_gromov_bound(1, 0.0, 1.0) == pytest.approx(2.0 * math.pi)
    assert B.unit_sphere_volume(2) == pytest.approx(4.0 * math.pi)
    # H3 with K = 2 dominates the exact ball volume
    h3 = Hyperbolic3()
    for s in (0.5, 1.0, 2.0):
        assert B.cheeger_gromov_bound(3, 2.0, s) >= h3.ball_volume(s)
    # small-ball ratio approaches a constant
    r1 = B.cheeger_gromov_bound(3, 2.0, 1e-4) / h3.ball_volume(1e-4)
    r2 = B.cheeger_gromov_bound(3, 2.0, 1e-5) / h3.ball_volume(1e-5)
    assert r1 == pytest.approx(r2, rel=1e-3)
    with pytest.raises(ValueError):
        B.cheeger_gromov_bound(2, 0.0, 0.0)


def test_volume_doubling_values():
    e2 = Euclidean(2)
    assert B.volume_doubling_bound(2, 0.0, 2.0, 1.0) == pytest.approx(
        e2.ball_volume(2.0) / e2.ball_volume(1.0), rel=1e-14
    )
    h3 = Hyperbolic3()
    bound = B.volume_doubling_bound(3, 2.0, 2.0, 1.0)
    assert bound >= h3.ball_volume(2.0) / h3.ball_volume(1.0)
    with pytest.raises(ValueError):
        B.volume_doubling_bound(2, 0.0, 1.0, 1.0)


@pytest.mark.parametrize("name", ALL)
def test_default_certificates_all_pass(name):
    model = model_from_name(name)
    certs = B.default_certificates(model)
    for key, cert in certs.items():
        assert cert.passed, f"{name}/{key}: {cert.violations[:3]}"
        d = cert.to_dict()
        assert set(d) == {"inequality_id", "grid", "fitted_constants", "worst_margin", "violations"}
