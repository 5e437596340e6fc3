import math

import numpy as np
import pytest

from bridgelab import heatkernel as HK
from bridgelab.geometry import Circle, Euclidean, Hyperbolic3, Sphere2
from bridgelab.rng import stream

E1, S1, S2, H3 = Euclidean(1), Circle(), Sphere2(), Hyperbolic3()
MODELS = [E1, Euclidean(2), S1, S2, H3]


def test_series_control_validation():
    with pytest.raises(ValueError):
        HK.SeriesControl(tol=1e-5)
    with pytest.raises(ValueError):
        HK.SeriesControl(max_terms=8)
    HK.SeriesControl(tol=1e-12, max_terms=16)


def test_euclid_on_diagonal_value():
    k = HK.kernel(E1, 1.0, [0.0], [0.0])
    assert k.value == pytest.approx((2.0 * math.pi) ** -0.5, rel=1e-14)
    assert k.value == pytest.approx(math.exp(k.log_value), rel=1e-12)
    assert np.all(k.log_grad_x.components == 0.0)


def test_kernel_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        HK.kernel(E1, 0.0, [0.0], [0.0])
    with pytest.raises(ValueError):
        HK.kernel(E1, -1.0, [0.0], [1.0])


def test_circle_dual_series_agreement():
    angles = np.linspace(0.0, 2.0 * math.pi, 20, endpoint=False)
    for t in (0.05, 0.5, 5.0):
        pw, dpw = HK.circle_wrapped_value(t, angles)
        pf, dpf = HK.circle_fourier_value(t, angles)
        assert np.max(np.abs(pw - pf)) < 1e-10
        assert np.max(np.abs(dpw - dpf)) < 1e-10


def test_h3_diagonal_limit():
    x = np.array([1.0, 0.0, 0.0, 0.0])
    k = HK.kernel(H3, 1.0, x, x)
    assert k.value == pytest.approx((2.0 * math.pi) ** -1.5 * math.exp(-0.5), rel=1e-13)


def test_euclid_gradient_closed_form():
    g = HK.log_kernel_gradient(E1, 1.0, [0.0], [1.0])
    assert g.components[0] == pytest.approx(1.0, abs=1e-14)
    # gradient of log Gaussian is (y - x) / t in general
    e2 = Euclidean(2)
    g2 = HK.log_kernel_gradient(e2, 0.5, [0.2, -0.1], [1.0, 1.0])
    assert np.allclose(g2.components, (np.array([1.0, 1.0]) - [0.2, -0.1]) / 0.5)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_gradient_zero_at_coincident_points(model):
    gen = stream(2, f"hk-zero/{model.kind}")
    x = model.random_points(1, gen)[0]
    g = HK.log_kernel_gradient(model, 0.7, x, x)
    assert np.all(g.components == 0.0)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_gradient_matches_finite_differences(model):
    gen = stream(4, f"hk-fd/{model.kind}")
    h = 1e-5
    for _ in range(40):
        t = float(np.exp(gen.uniform(math.log(0.1), math.log(2.0))))
        x = model.random_points(1, gen)[0]
        if isinstance(model, Sphere2):
            dmax = min(math.sqrt(24.0 * t), math.pi - 0.15)
        elif isinstance(model, Circle):
            dmax = math.pi - 0.05
        else:
            dmax = 3.0
        d = gen.uniform(0.05, dmax)
        u = gen.standard_normal(model.dim)
        u /= np.linalg.norm(u)
        y = model.exp(x, d * u)
        g = HK.log_kernel_gradient(model, t, x, y).components
        fd = np.empty(model.dim)
        for i in range(model.dim):
            e = np.zeros(model.dim)
            e[i] = 1.0
            lp, _ = HK.radial_log_kernel(model, t, np.asarray(model.distance(model.exp(x, h * e), y)))
            lm, _ = HK.radial_log_kernel(model, t, np.asarray(model.distance(model.exp(x, -h * e), y)))
            fd[i] = (float(lp) - float(lm)) / (2.0 * h)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-5


def test_sphere_gradient_against_fd_at_unit_distance():
    x = np.array([0.0, 0.0, 1.0])
    y = S2.exp(x, np.array([1.0, 0.0]))
    g = HK.log_kernel_gradient(S2, 0.3, x, y).components
    h = 1e-5
    fd = np.empty(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1.0
        lp, _ = HK.radial_log_kernel(S2, 0.3, np.asarray(S2.distance(S2.exp(x, h * e), y)))
        lm, _ = HK.radial_log_kernel(S2, 0.3, np.asarray(S2.distance(S2.exp(x, -h * e), y)))
        fd[i] = (float(lp) - float(lm)) / (2.0 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-5


def test_sphere_cut_locus_warning_and_fallback():
    x = np.array([0.0, 0.0, 1.0])
    y = S2.exp(x, np.array([math.pi - 1e-8, 0.0]))
    with pytest.warns(HK.CutLocusWarning):
        g = HK.log_kernel_gradient(S2, 0.3, x, y)
    assert np.all(np.isfinite(g.components))


def test_sphere_accuracy_error_outside_envelope():
    x = np.array([0.0, 0.0, 1.0])
    y = np.array([0.0, 0.0, -1.0])
    with pytest.raises(HK.KernelAccuracyError):
        HK.kernel(S2, 0.01, x, y)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_symmetry_and_positivity(model):
    gen = stream(6, f"hk-sym/{model.kind}")
    p = model.random_points(1000, gen)
    q = model.random_points(1000, gen)
    t = 0.6
    cap = math.sqrt(2.0 * t * (HK.LOG_EPS - 13.0)) * 0.999 if isinstance(model, Sphere2) else np.inf
    dxy = np.minimum(np.asarray(model.distance(p, q)), cap)
    dyx = np.minimum(np.asarray(model.distance(q, p)), cap)
    lxy, _ = HK.radial_log_kernel(model, t, dxy)
    lyx, _ = HK.radial_log_kernel(model, t, dyx)
    pxy = np.exp(lxy)
    assert np.all(pxy > 0.0)
    assert np.max(np.abs(pxy - np.exp(lyx))) <= 1e-12 * np.max(pxy)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.kind)
def test_normalization(model):
    res = HK.kernel_mass(model, 0.7)
    assert res.value == pytest.approx(1.0, abs=1e-8)


def test_semigroup_constant_and_eigenfunction():
    one = HK.semigroup_apply(S1, 1.0, lambda w: 1.0, np.array([0.3]))
    assert one.value == pytest.approx(1.0, abs=1e-10)
    one_e = HK.semigroup_apply(E1, 1.0, lambda w: 1.0, np.array([0.0]))
    assert one_e.value == pytest.approx(1.0, abs=1e-8)
    # cos is an eigenfunction with eigenvalue exp(-t/2) at frequency 1
    x = 0.7
    val = HK.semigroup_apply(S1, 1.0, lambda w: math.cos(w[0]), np.array([x]))
    assert val.value == pytest.approx(math.exp(-0.5) * math.cos(x), abs=1e-8)


def test_semigroup_accuracy_error():
    # 4 nodes cannot resolve cos(5 w) over the truncated domain
    tight = HK.QuadratureSpec(nodes=4, panels=1, tol=1e-12)
    with pytest.raises(HK.QuadratureAccuracyError):
        HK.semigroup_apply(E1, 1.0, lambda w: math.cos(5.0 * w[0]), np.array([0.0]), tight)


def test_chapman_kolmogorov_defects():
    assert HK.chapman_kolmogorov_defect(S1, 0.5, 0.5, [0.0], [0.0]) < 1e-9
    assert HK.chapman_kolmogorov_defect(E1, 0.5, 0.5, [0.0], [0.3]) < 1e-10
    x = np.array([0.0, 0.0, 1.0])
    y = S2.exp(x, np.array([1.0, 0.0]))
    assert HK.chapman_kolmogorov_defect(S2, 0.2, 0.3, x, y) < 1e-8
    with pytest.raises(ValueError):
        HK.chapman_kolmogorov_defect(S1, 0.0, 0.5, [0.0], [0.0])


def test_heat_equation_residuals():
    assert HK.heat_equation_residual(E1, 1.0, [0.0], [1.0]) < 1e-6
    assert HK.heat_equation_residual(S1, 0.5, [0.0], [1.0]) < 1e-6
    x = np.array([1.0, 0.0, 0.0, 0.0])
    y = H3.exp(x, np.array([1.0, 0.0, 0.0]))
    assert HK.heat_equation_residual(H3, 1.0, x, y) < 1e-5
    with pytest.raises(ValueError):
        HK.heat_equation_residual(E1, 1e-5, [0.0], [1.0])


def test_radial_profile_matches_direct_evaluation():
    for model, t in ((S1, 0.05), (S1, 0.9), (S2, 0.02), (S2, 0.8), (H3, 0.3)):
        prof = HK.RadialProfile(model, t)
        rmax = prof._rmax if prof._mesh is not None else 2.5
        d = np.linspace(1e-4, 0.999 * rmax, 333)
        lp, dl = prof(d)
        lpe, dle = HK.radial_log_kernel(model, t, d)
        assert np.max(np.abs(lp - lpe)) < 5e-4
        assert np.max(np.abs((dl - dle) / (np.abs(dle) + 1.0))) < 5e-4
