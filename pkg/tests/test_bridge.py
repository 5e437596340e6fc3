import math

import numpy as np
import pytest
from scipy import stats

from bridgelab import bridge as BR
from bridgelab.geometry import Circle, Euclidean, Hyperbolic3, Sphere2
from bridgelab.rng import RngStream

E1, S1, S2, H3 = Euclidean(1), Circle(), Sphere2(), Hyperbolic3()


def test_time_grid_validation():
    with pytest.raises(BR.GridError):
        BR.TimeGrid(np.array([0.0]))
    with pytest.raises(BR.GridError):
        BR.TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(BR.GridError):
        BR.TimeGrid(np.array([0.1, 0.5, 1.0]))
    g = BR.TimeGrid.uniform(2.0, 8)
    assert g.uniform_dt == pytest.approx(0.25)
    assert g.index_of(0.5) == 2
    with pytest.raises(BR.GridError):
        g.index_of(0.3)
    assert BR.TimeGrid(np.array([0.0, 0.1, 2.0])).uniform_dt is None


def test_bridge_spec_validation():
    with pytest.raises(ValueError):
        BR.BridgeSpec(E1, [0.0], [1.0], 0.0)
    s = BR.BridgeSpec(S2, [0, 0, 1.0], [1, 0, 0.0], 2.0)
    r = s.reversed()
    assert np.array_equal(r.x, s.y) and np.array_equal(r.y, s.x)


def test_fdd_log_density_no_interior_is_zero():
    spec = BR.BridgeSpec(E1, [0.0], [1.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 1.0]))
    assert BR.fdd_log_density(spec, grid, np.zeros((0, 1))) == 0.0


def test_fdd_log_density_gaussian_conditioning():
    # single interior point of the standard bridge: N(0, 1/4) at t = 1/2
    spec = BR.BridgeSpec(E1, [0.0], [0.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.5, 1.0]))
    ld = BR.fdd_log_density(spec, grid, np.array([[0.0]]))
    assert ld == pytest.approx(math.log(math.sqrt(2.0 / math.pi)), abs=1e-13)


def test_fdd_normalizes_on_circle():
    spec = BR.BridgeSpec(S1, [0.0], [2.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.4, 1.0]))
    theta = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
    dens = np.exp(BR.fdd_log_density(spec, grid, theta[:, None, None]))
    mass = float(np.sum(dens) * (theta[1] - theta[0]))
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_exact_sampler_pins_endpoints():
    for model, x, y in (
        (E1, [0.0], [1.0]),
        (S1, [0.2], [2.0]),
        (S2, [0, 0, 1.0], [1, 0, 0.0]),
        (H3, [1.0, 0, 0, 0], H3.exp(np.array([1.0, 0, 0, 0]), np.array([0.7, 0, 0]))),
    ):
        spec = BR.BridgeSpec(model, x, y, 1.0)
        grid = BR.TimeGrid.uniform(1.0, 8)
        ens = BR.sample_bridge_exact_ensemble(spec, grid, 16, RngStream(1, f"pin/{model.kind}"))
        assert np.array_equal(ens.points[:, 0, :], np.broadcast_to(spec.x, ens.points[:, 0, :].shape))
        assert np.array_equal(ens.points[:, -1, :], np.broadcast_to(spec.y, ens.points[:, -1, :].shape))
        assert ens.terminal_snap


def test_exact_sampler_midpoint_variance():
    spec = BR.BridgeSpec(E1, [0.0], [0.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.5, 1.0]))
    ens = BR.sample_bridge_exact_ensemble(spec, grid, 100_000, RngStream(42, "var"))
    v = float(np.var(ens.points[:, 1, 0], ddof=1))
    se = 0.25 * math.sqrt(2.0 / (ens.n_paths - 1))
    assert abs(v - 0.25) < 3.0 * se


def test_exact_sampler_circle_histogram_matches_density():
    spec = BR.BridgeSpec(S1, [0.0], [2.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.5, 1.0]))
    ens = BR.sample_bridge_exact_ensemble(spec, grid, 100_000, RngStream(42, "chi2"))
    theta = ens.points[:, 1, 0]
    bins = np.linspace(0.0, 2.0 * math.pi, 51)
    counts, _ = np.histogram(theta, bins)
    centers = 0.5 * (bins[1:] + bins[:-1])
    dens = np.exp(BR.fdd_log_density(spec, grid, centers[:, None, None]))
    probs = dens * np.diff(bins)
    probs /= probs.sum()
    from bridgelab.accept import pooled_chi2

    _, p, _ = pooled_chi2(counts, probs)
    assert p >= 0.01


def test_sphere_bridge_concentrates_as_T_shrinks():
    x = np.array([0.0, 0.0, 1.0])
    y = S2.exp(x, np.array([1.0, 0.0]))
    mid = S2.geopoint(x, y, 0.5)
    means = []
    for T in (1.0, 0.5, 0.1):
        spec = BR.BridgeSpec(S2, x, y, T)
        grid = BR.TimeGrid(np.array([0.0, T / 2.0, T]))
        ens = BR.sample_bridge_exact_ensemble(spec, grid, 4000, RngStream(7, f"conc{T}"))
        means.append(float(np.mean(S2.distance(ens.points[:, 1, :], mid))))
    assert means[0] > means[1] > means[2]


def test_sde_drift_is_exact_gaussian_gradient():
    drift = BR._drift_components(E1, np.array([[0.25]]), np.array([1.0]), 0.5, None)
    assert drift[0, 0] == pytest.approx((1.0 - 0.25) / 0.5, rel=1e-14)


def test_sde_sampler_requirements():
    spec = BR.BridgeSpec(E1, [0.0], [0.0], 1.0)
    with pytest.raises(BR.GridError):
        BR.sample_bridge_sde(spec, BR.TimeGrid.uniform(1.0, 4), RngStream(0, "x"))
    with pytest.raises(BR.GridError):
        BR.sample_bridge_sde(spec, BR.TimeGrid(np.array([0.0, 0.1, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])), RngStream(0, "x"))


def test_sde_strong_order_half():
    spec = BR.BridgeSpec(E1, [0.0], [0.0], 1.0)
    means = {}
    for n in (128, 256):
        grid = BR.TimeGrid.uniform(1.0, n)
        ens = BR.sample_bridge_sde_ensemble(spec, grid, 10_000, RngStream(11, f"order{n}"))
        means[n] = float(np.mean(np.abs(ens.points[:, -2, 0])))
    ratio = means[256] / means[128]
    assert 0.55 <= ratio <= 0.90


def test_sde_degenerates_to_constant_path():
    # x = y with shrinking T: the maximal displacement trends to zero
    maxes = []
    for T in (1.0, 0.1, 0.01):
        spec = BR.BridgeSpec(E1, [0.0], [0.0], T)
        grid = BR.TimeGrid.uniform(T, 64)
        ens = BR.sample_bridge_sde_ensemble(spec, grid, 2000, RngStream(3, f"deg{T}"))
        maxes.append(float(np.mean(np.max(np.abs(ens.points[:, :, 0]), axis=1))))
    assert maxes[0] > maxes[1] > maxes[2]


def test_sde_capped_fraction_reported():
    spec = BR.BridgeSpec(E1, [0.0], [5.0], 1.0)
    grid = BR.TimeGrid.uniform(1.0, 16)
    ens = BR.sample_bridge_sde_ensemble(spec, grid, 100, RngStream(5, "cap"), max_drift_step=0.01)
    assert ens.metadata["capped_fraction"] > 0.05
    assert "stability_warning" in ens.metadata


def test_sde_matches_exact_in_distribution():
    spec = BR.BridgeSpec(E1, [0.0], [0.0], 1.0)
    coarse = BR.TimeGrid(np.array([0.0, 0.5, 1.0]))
    exact = BR.sample_bridge_exact_ensemble(spec, coarse, 20_000, RngStream(42, "ks-a"))
    fine = BR.TimeGrid.uniform(1.0, 200)
    sde = BR.sample_bridge_sde_ensemble(spec, fine, 20_000, RngStream(42, "ks-b"))
    ks = stats.ks_2samp(exact.points[:, 1, 0], sde.points[:, fine.index_of(0.5), 0])
    assert ks.pvalue >= 0.01


def test_reverse_path_involution_and_endpoints():
    spec = BR.BridgeSpec(E1, [0.0], [1.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.3, 1.0]))
    path = BR.sample_bridge_exact(spec, grid, RngStream(9, "rev"))
    rev = BR.reverse_path(path)
    assert np.array_equal(rev.points[0], path.points[-1])
    assert np.array_equal(rev.points[-1], path.points[0])
    assert np.allclose(rev.grid.times, [0.0, 0.7, 1.0])
    back = BR.reverse_path(rev)
    assert np.array_equal(back.points, path.points)
    assert np.array_equal(back.grid.times, path.grid.times)
    assert back.stream_id == path.stream_id


def test_reverse_distribution_matches_swapped_bridge():
    n = 30_000
    spec = BR.BridgeSpec(S1, [0.0], [2.0], 1.0)
    grid_f = BR.TimeGrid(np.array([0.0, 1.0 / 3.0, 1.0]))
    fwd = BR.sample_bridge_exact_ensemble(spec, grid_f, n, RngStream(42, "tr-f"))
    fun_f = np.asarray(S1.distance(fwd.points[:, 1, :], spec.x))
    grid_b = BR.TimeGrid(np.array([0.0, 2.0 / 3.0, 1.0]))
    bwd = BR.sample_bridge_exact_ensemble(spec.reversed(), grid_b, n, RngStream(42, "tr-b"))
    rev = BR.reverse_ensemble(bwd)
    j = rev.grid.index_of(1.0 / 3.0)
    fun_b = np.asarray(S1.distance(rev.points[:, j, :], spec.x))
    assert stats.ks_2samp(fun_f, fun_b).pvalue >= 0.01


def test_restrict_to_stride():
    spec = BR.BridgeSpec(E1, [0.0], [0.0], 1.0)
    grid = BR.TimeGrid.uniform(1.0, 12)
    ens = BR.sample_bridge_exact_ensemble(spec, grid, 8, RngStream(0, "stride"))
    v = BR.restrict_to_stride(ens, 3)
    assert v.grid.n_steps == 4
    assert np.array_equal(v.points[:, 1, :], ens.points[:, 3, :])
    with pytest.raises(BR.GridError):
        BR.restrict_to_stride(ens, 5)


def test_markov_defect_trivial_functionals():
    spec = BR.BridgeSpec(E1, [0.0], [1.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
    ens = BR.sample_bridge_exact_ensemble(spec, grid, 500, RngStream(1, "mk0"))
    md = BR.markov_defect(
        ens, 0.5, [0.25], [0.75],
        phi=lambda v: np.ones(v.shape[0]),
        psi=lambda v: np.ones(v.shape[0]),
        inner_size=8,
        stream=RngStream(1, "mk0-in"),
    )
    assert md.defect == 0.0


@pytest.mark.parametrize("model,x,y", [(E1, [0.0], [1.0]), (S1, [0.0], [2.0])])
def test_markov_defect_within_four_se(model, x, y):
    spec = BR.BridgeSpec(model, x, y, 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
    ens = BR.sample_bridge_exact_ensemble(spec, grid, 4000, RngStream(42, f"mk/{model.kind}"))
    if isinstance(model, Circle):
        phi = psi = lambda v: np.cos(v[:, 0, 0])
    else:
        phi = psi = lambda v: v[:, 0, 0]
    md = BR.markov_defect(
        ens, 0.5, [0.25], [0.75], phi, psi, inner_size=50,
        stream=RngStream(42, f"mk-inner/{model.kind}"),
    )
    assert md.passed


def test_markov_defect_errors():
    spec = BR.BridgeSpec(E1, [0.0], [1.0], 1.0)
    grid = BR.TimeGrid(np.array([0.0, 0.25, 0.5, 0.75, 1.0]))
    ens = BR.sample_bridge_exact_ensemble(spec, grid, 50, RngStream(1, "mke"))
    one = lambda v: np.ones(v.shape[0])
    with pytest.raises(BR.GridError):
        BR.markov_defect(ens, 0.4, [0.25], [0.75], one, one)  # S off the grid
    with pytest.raises(BR.GridError):
        BR.markov_defect(ens, 0.5, [0.75], [0.75], one, one)  # phi after S
    with pytest.raises(BR.BudgetError):
        BR.markov_defect(ens, 0.5, [0.25], [0.75], one, one, inner_size=10, budget=10)


def test_rejection_sampler_efficiency_error():
    # essentially antipodal endpoints with a tiny horizon: the acceptance
    # screen collapses and the sampler refuses
    x = np.array([0.0, 0.0, 1.0])
    y = S2.exp(x, np.array([math.pi - 0.05, 0.0]))
    spec = BR.BridgeSpec(S2, x, y, 0.02)
    grid = BR.TimeGrid.uniform(0.02, 2)
    with pytest.raises((BR.EfficiencyError, Exception)):
        BR.sample_bridge_exact_ensemble(spec, grid, 64, RngStream(2, "eff"))


def test_ensemble_path_accessor_and_stream_ids():
    spec = BR.BridgeSpec(E1, [0.0], [1.0], 1.0)
    grid = BR.TimeGrid.uniform(1.0, 8)
    ens = BR.sample_bridge_exact_ensemble(spec, grid, 4, RngStream(3, "acc"))
    p2 = ens.path(2)
    assert np.array_equal(p2.points, ens.points[2])
    assert p2.stream_id == "3/acc/0[2]"
    # identical stream -> identical ensemble
    again = BR.sample_bridge_exact_ensemble(spec, grid, 4, RngStream(3, "acc"))
    assert np.array_equal(ens.points, again.points)
