"""
Tests for lmpwatch.src.densities
"""
import numpy as np
import pytest

from lmpwatch.src.densities import (DensityCache, NoiseModel, dispatch_map, increment_covariance, kl_divergence,
                                    lmp_map, log_density)
from lmpwatch.src.errors import DegenerateDensityError, InputError
from lmpwatch.src.mpp import CriticalRegion, region_from_point
from lmpwatch.src.netmodel import apply_outage, assemble_qp
from lmpwatch.src.qpsolve import lmp, solve


def make_region(G, region_id=0, structure_id='nominal', P=None, n_gens=0):
    """Region whose LMP sensitivity is G."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, k = G.shape
    return CriticalRegion(id=region_id, active_set=tuple(range(n)), D=G, d=np.zeros(n),
                          P=np.zeros((1, k)) if P is None else np.asarray(P, dtype=float),
                          p=np.zeros(1), H=np.zeros((0, k)), h=np.zeros(0), strict=np.zeros(0, dtype=bool),
                          lambda_tilde=np.eye(n), structure_id=structure_id, point=np.zeros(k), n_gens=n_gens)


def noise(k=1, sigma=1.0, half=100.0):
    return NoiseModel(Sigma=sigma ** 2 * np.eye(k), lower=-half * np.ones(k), upper=half * np.ones(k))


def test_one_dimensional_kl():
    nominal = increment_covariance(make_region([[1.0]]), noise())
    post = increment_covariance(make_region([[np.sqrt(2.0)]]), noise())
    # 0.5 * (2 - 1 - ln 2)
    assert kl_divergence(post, nominal) == pytest.approx(0.1534, abs=1e-4)
    assert kl_divergence(nominal, nominal) == pytest.approx(0.0, abs=1e-12)


def test_log_likelihood_ratio_at_zero():
    nominal = increment_covariance(make_region([[1.0]]), noise())
    post = increment_covariance(make_region([[2.0]]), noise())
    assert log_density(post, [0.0]) - log_density(nominal, [0.0]) == pytest.approx(-np.log(2.0), abs=1e-5)


def test_log_density_is_gaussian():
    density = increment_covariance(make_region([[3.0]]), noise(sigma=2.0), epsilon_scale=0.0)
    variance = 36.0
    expected = -0.5 * (np.log(2 * np.pi * variance) + 1.5 ** 2 / variance)
    assert density.log_density([1.5]) == pytest.approx(expected, rel=1e-12)


def test_rank_deficient_covariance_is_regularized():
    # two buses sharing one price sensitivity
    density = increment_covariance(make_region([[0.01], [0.01]]), noise(sigma=8.0))
    assert density.rank == 2
    trace = np.trace(density.covariance)
    np.testing.assert_allclose(density.regularized_covariance - density.covariance,
                               1e-6 * trace / 2 * np.eye(2), rtol=0, atol=1e-3 * 1e-6 * trace)


def test_support_mode_uses_pseudo_determinant():
    density = increment_covariance(make_region([[1.0], [1.0]]), noise(), mode='support')
    assert density.rank == 1
    # the covariance [[1, 1], [1, 1]] has the single eigenvalue 2
    assert density.log_normalizer == pytest.approx(-0.5 * (np.log(2 * np.pi) + np.log(2.0)))
    assert density.log_density([1.0, 1.0]) == pytest.approx(density.log_normalizer - 0.5)


def test_frozen_components_are_left_out():
    region = make_region([[1.0, 5.0]])
    n = NoiseModel(Sigma=np.eye(2), lower=np.array([-10.0, -10.0]), upper=np.array([10.0, 10.0]))
    selection = n.selection([0.0, 10.0], [1.0, 10.0])
    np.testing.assert_array_equal(selection, [True, False])
    density = increment_covariance(region, n, selection=selection, epsilon_scale=0.0)
    np.testing.assert_allclose(density.covariance, [[1.0]])


def test_all_frozen_is_degenerate():
    with pytest.raises(DegenerateDensityError):
        increment_covariance(make_region([[1.0]]), noise(), selection=[False])


def test_flat_prices_are_degenerate():
    with pytest.raises(DegenerateDensityError):
        increment_covariance(make_region([[0.0], [0.0]]), noise())


def test_unknown_mode_and_channel():
    with pytest.raises(InputError):
        increment_covariance(make_region([[1.0]]), noise(), mode='exact')
    with pytest.raises(InputError):
        increment_covariance(make_region([[1.0]]), noise(), channel='flows')


def test_maps_of_a_solved_region(two_bus):
    region = region_from_point(assemble_qp(two_bus), [0.0])
    G, c = lmp_map(region)
    np.testing.assert_allclose(G, [[0.01], [0.01]], atol=1e-12)
    np.testing.assert_allclose(c, [11.0, 11.0], atol=1e-9)
    slope, offset = dispatch_map(region)
    np.testing.assert_allclose(slope, [1.0], atol=1e-12)
    assert offset == pytest.approx(100.0)


def test_dispatch_channel_is_scalar(two_bus):
    region = region_from_point(assemble_qp(two_bus), [0.0])
    density = increment_covariance(region, noise(sigma=8.0), channel='dispatch', epsilon_scale=0.0)
    np.testing.assert_allclose(density.covariance, [[64.0]])


def test_cache_returns_none_for_degenerate_regions():
    cache = DensityCache(noise())
    flat = make_region([[0.0]])
    assert cache.get(flat, np.array([True])) is None
    live = make_region([[1.0]], region_id=1)
    assert cache.get(live, np.array([True])) is cache.get(live, np.array([True]))
    assert len(cache) == 2


def test_noise_model_rejects_bad_bounds():
    with pytest.raises(InputError):
        NoiseModel(Sigma=np.eye(1), lower=np.array([1.0]), upper=np.array([0.0]))
    with pytest.raises(InputError):
        NoiseModel(Sigma=-np.eye(1), lower=np.array([0.0]), upper=np.array([1.0]))


def _pjm_densities(pjm_case, pjm_scenario, sigma):
    nominal = assemble_qp(pjm_case)
    post = apply_outage(nominal, pjm_case, pjm_scenario.outage)
    lower, upper = pjm_scenario.box(pjm_case)
    model = NoiseModel(Sigma=np.diag([sigma ** 2, sigma ** 2, 0.0]), lower=lower, upper=upper)
    return nominal, post, model


def test_kl_matches_monte_carlo(pjm_case, pjm_scenario):
    nominal, post, model = _pjm_densities(pjm_case, pjm_scenario, 8.0)
    selection = np.array([True, True, False])
    f0 = increment_covariance(region_from_point(nominal, np.zeros(3)), model, selection=selection)
    fa = increment_covariance(region_from_point(post, np.zeros(3)), model, selection=selection)

    rng = np.random.default_rng(4)
    chol = np.linalg.cholesky(fa.regularized_covariance)
    draws = rng.standard_normal((20000, fa.dim)) @ chol.T
    estimate = np.mean([fa.log_density(x) - f0.log_density(x) for x in draws])
    assert kl_divergence(fa, f0) > 0.0
    assert estimate == pytest.approx(kl_divergence(fa, f0), rel=0.05)


@pytest.mark.slow
def test_increments_inside_a_region_have_the_modelled_covariance(pjm_case, pjm_scenario):
    nominal, _, model = _pjm_densities(pjm_case, pjm_scenario, 0.1)
    start = np.zeros(3)
    region = region_from_point(nominal, start)
    base = lmp(solve(nominal, start), nominal)

    rng = np.random.default_rng(5)
    increments = []
    for step in rng.normal(0.0, 0.1, size=(5000, 2)):
        xi = start + np.array([step[0], step[1], 0.0])
        if region.contains(xi):
            increments.append(lmp(solve(nominal, xi), nominal) - base)
    assert len(increments) >= 0.99 * 5000

    expected = increment_covariance(region, model, selection=np.array([True, True, False])).covariance
    empirical = np.cov(np.array(increments).T)
    assert np.linalg.norm(empirical - expected) <= 0.1 * np.linalg.norm(expected)
