"""Mixture fitting, AR identification, and timescale conversion tests."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import signal, stats

from gridbse.injections import (
    ARFitError,
    ARModel,
    DownscaleError,
    GaussianMixture,
    MeterSeries,
    build_autocovariance_system,
    downscale_mixture,
    downscale_variance,
    fit_ar_ls,
    fit_gmm_em,
    load_meter_csv,
    sample_mixture,
    save_meter_csv,
)


def _make_bimodal_samples(rng, n=10_000):
    half = n // 2
    x = np.concatenate([rng.normal(0.0, 1.0, half), rng.normal(10.0, 1.0, n - half)])
    rng.shuffle(x)
    return x


def _simulate_ar(coefficients, n, rng, sigma=1.0):
    """Stationary AR trace via the filter recursion, burn-in discarded."""
    burn = 1000
    eps = rng.normal(0.0, sigma, n + burn)
    denom = np.concatenate([[1.0], -np.asarray(coefficients, dtype=float)])
    return signal.lfilter([1.0], denom, eps)[burn:]


# -- mixture container ----------------------------------------------------


def test_mixture_moments_match_hand_computation():
    gmm = GaussianMixture(
        weights=np.array([0.3, 0.7]),
        means=np.array([0.0, 10.0]),
        variances=np.array([1.0, 4.0]),
    )
    assert_allclose(gmm.mean(), 7.0, rtol=0, atol=1e-12)
    # 0.3 (1 + 0) + 0.7 (4 + 100) - 49 = 24.1
    assert_allclose(gmm.variance(), 24.1, rtol=0, atol=1e-12)


def test_mixture_log_density_matches_scipy():
    gmm = GaussianMixture(
        weights=np.array([0.4, 0.6]),
        means=np.array([-1.0, 2.0]),
        variances=np.array([0.5, 2.0]),
    )
    x = np.linspace(-4.0, 6.0, 21)
    dens = 0.4 * stats.norm.pdf(x, -1.0, math.sqrt(0.5)) + 0.6 * stats.norm.pdf(
        x, 2.0, math.sqrt(2.0)
    )
    assert_allclose(gmm.log_density(x), np.log(dens), rtol=1e-12, atol=0)


def test_mixture_validation_and_json_round_trip():
    with pytest.raises(ValueError):
        GaussianMixture(np.array([0.5, 0.4]), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        GaussianMixture(np.array([1.0]), np.zeros(1), np.array([0.0]))
    gmm = GaussianMixture(np.array([0.25, 0.75]), np.array([1.5, -2.0]), np.array([0.1, 3.0]))
    back = GaussianMixture.from_json(gmm.to_json())
    assert (back.weights == gmm.weights).all()
    assert (back.means == gmm.means).all()
    assert (back.variances == gmm.variances).all()


# -- EM fitting -----------------------------------------------------------


def test_single_component_fit_is_the_closed_form_mle():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, 500)
    fit = fit_gmm_em(x, n_components=1)
    assert_allclose(fit.mixture.means[0], x.mean(), rtol=0, atol=1e-9)
    assert_allclose(fit.mixture.variances[0], x.var(), rtol=0, atol=1e-9)
    assert_allclose(fit.mixture.weights[0], 1.0, rtol=0, atol=0)


def test_two_component_recovery_on_separated_modes():
    rng = np.random.default_rng(7)
    x = _make_bimodal_samples(rng, n=10_000)
    fit = fit_gmm_em(x, n_components=2, seed=7)
    gmm = fit.mixture
    assert abs(gmm.means[0] - 0.0) < 0.1
    assert abs(gmm.means[1] - 10.0) < 0.1
    assert abs(gmm.weights[0] - 0.5) < 0.02
    assert abs(gmm.weights[1] - 0.5) < 0.02
    assert not fit.degenerate


def test_em_log_likelihood_never_decreases():
    for seed in range(5):
        rng = np.random.default_rng(40 + seed)
        x = np.concatenate([
            rng.normal(-2.0, 0.5, 400),
            rng.normal(1.0, 1.5, 600),
        ])
        fit = fit_gmm_em(x, n_components=2, seed=seed)
        assert np.all(np.diff(fit.log_likelihoods) >= -1e-9)


def test_identical_samples_hit_the_variance_floor():
    x = np.full(200, 3.0)
    with pytest.warns(RuntimeWarning):
        fit = fit_gmm_em(x, n_components=1)
    assert fit.degenerate
    assert_allclose(fit.mixture.variances[0], 1e-9, rtol=0, atol=0)
    assert_allclose(fit.mixture.means[0], 3.0, rtol=0, atol=1e-12)


def test_components_come_back_sorted_by_mean():
    rng = np.random.default_rng(11)
    x = _make_bimodal_samples(rng, n=4000)
    gmm = fit_gmm_em(x, n_components=2, seed=3).mixture
    assert gmm.means[0] < gmm.means[1]


# -- sampling -------------------------------------------------------------


def test_sample_mixture_concentrates_on_a_narrow_component():
    gmm = GaussianMixture(np.array([1.0]), np.array([5.0]), np.array([1e-9]))
    rng = np.random.default_rng(0)
    draws = sample_mixture(gmm, rng, size=100)
    assert np.abs(draws - 5.0).max() < 1e-3


def test_sample_mixture_mean_converges():
    gmm = GaussianMixture(
        weights=np.array([0.3, 0.7]),
        means=np.array([0.0, 10.0]),
        variances=np.array([1.0, 4.0]),
    )
    rng = np.random.default_rng(5)
    draws = sample_mixture(gmm, rng, size=100_000)
    assert abs(draws.mean() - gmm.mean()) < 0.01 * abs(gmm.mean()) + 0.05
    scalar = sample_mixture(gmm, np.random.default_rng(9))
    assert isinstance(scalar, float)


# -- AR identification ----------------------------------------------------


def test_white_noise_fit_has_negligible_coefficient():
    rng = np.random.default_rng(21)
    x = rng.normal(0.0, 1.0, 10_000)
    model = fit_ar_ls(x, order=1)
    assert abs(model.coefficients[0]) < 0.05


def test_ar1_coefficient_recovered_from_long_trace():
    rng = np.random.default_rng(22)
    x = _simulate_ar([0.8], 100_000, rng)
    model = fit_ar_ls(x, order=1)
    assert 0.78 <= model.coefficients[0] <= 0.82
    assert model.is_stationary()


def test_order_zero_fit_is_mean_and_variance():
    rng = np.random.default_rng(23)
    x = rng.normal(2.0, 0.5, 300)
    model = fit_ar_ls(x, order=0)
    assert model.order == 0
    assert_allclose(model.innovation_mean, x.mean(), rtol=0, atol=1e-12)
    assert_allclose(model.innovation_variance, x.var(), rtol=0, atol=1e-12)


def test_short_or_constant_traces_are_rejected():
    with pytest.raises(ARFitError):
        fit_ar_ls(np.zeros(10), order=1)
    with pytest.raises(ARFitError):
        fit_ar_ls(np.full(500, 4.0), order=1)


def test_explosive_trace_is_rejected():
    rng = np.random.default_rng(24)
    t = np.arange(500)
    x = 1.02**t + rng.normal(0.0, 1e-3, 500)
    with pytest.raises(ARFitError):
        fit_ar_ls(x, order=1)


def test_spectral_radius_flags_non_stationary_models():
    assert ARModel(np.array([0.9]), 1.0).is_stationary()
    assert not ARModel(np.array([1.05]), 1.0).is_stationary()
    assert ARModel(np.empty(0), 1.0).spectral_radius() == 0.0


# -- timescale conversion -------------------------------------------------


def test_autocovariance_system_hand_values():
    ar1 = ARModel(np.array([0.5]), 1.0)
    assert_allclose(
        build_autocovariance_system(ar1, 2), [[0.0, 0.5], [0.5, 0.0]], rtol=0, atol=0
    )
    iid = ARModel(np.empty(0), 1.0)
    assert (build_autocovariance_system(iid, 3) == 0.0).all()
    with pytest.raises(DownscaleError):
        build_autocovariance_system(ar1, 1)


def test_iid_conversion_is_exact_division():
    iid = ARModel(np.empty(0), 1.0)
    assert_allclose(downscale_variance(iid, 4, 8.0), 2.0, rtol=0, atol=1e-15)
    for t in range(1, 101):
        assert_allclose(downscale_variance(iid, t, 5.0), 5.0 / t, rtol=0, atol=1e-12)


def test_ar1_conversion_matches_closed_form():
    """For AR(1) the fast variance is V^2 / (T + 2 sum_k (T-k) a^k)."""
    assert_allclose(downscale_variance(ARModel(np.array([0.5]), 1.0), 2, 3.0), 1.0, rtol=0, atol=1e-12)
    assert_allclose(downscale_variance(ARModel(np.array([0.9]), 1.0), 3, 8.22), 1.0, rtol=0, atol=1e-12)
    for a in (0.1, 0.35, 0.6, 0.85):
        for t in (2, 5, 12, 24):
            denom = t + 2.0 * sum((t - k) * a**k for k in range(1, t))
            expected = 7.5 / denom
            got = downscale_variance(ARModel(np.array([a]), 1.0), t, 7.5)
            assert abs(got - expected) < 1e-12


def test_ar2_autocovariance_shape_matches_simulation():
    """The Yule-Walker solve must agree with empirical autocovariances."""
    coeffs = np.array([0.5, 0.2])
    ar = ARModel(coeffs, 1.0)
    system = np.eye(4) - build_autocovariance_system(ar, 4)
    e1 = np.zeros(4)
    e1[0] = 1.0
    theory = np.linalg.solve(system, e1)  # autocovariances per unit innovation variance

    rng = np.random.default_rng(31)
    x = _simulate_ar(coeffs, 1_000_000, rng)
    x = x - x.mean()
    empirical = np.array([np.mean(x[: x.size - k] * x[k:]) for k in range(4)])
    assert_allclose(empirical, theory, rtol=0.02, atol=0)


def test_mixture_conversion_scales_means_and_keeps_weights():
    slow = GaussianMixture(np.array([1.0]), np.array([8.0]), np.array([8.0]))
    fast = downscale_mixture(slow, ARModel(np.empty(0), 1.0), 4)
    assert_allclose(fast.means[0], 2.0, rtol=0, atol=0)
    assert_allclose(fast.variances[0], 2.0, rtol=0, atol=1e-15)
    assert (fast.weights == slow.weights).all()

    slow2 = GaussianMixture(
        np.array([0.25, 0.75]), np.array([4.0, 12.0]), np.array([2.0, 6.0])
    )
    fast2 = downscale_mixture(slow2, [ARModel(np.array([0.5]), 1.0)], 2)
    assert (fast2.weights == slow2.weights).all()
    assert_allclose(fast2.means, [2.0, 6.0], rtol=0, atol=0)
    assert_allclose(fast2.variances, [2.0 / 3.0, 2.0], rtol=0, atol=1e-12)
    with pytest.raises(DownscaleError):
        downscale_mixture(slow2, [ARModel(np.empty(0), 1.0)] * 3, 2)


def test_downscale_rejects_bad_inputs():
    iid = ARModel(np.empty(0), 1.0)
    with pytest.raises(DownscaleError):
        downscale_variance(iid, 4, 0.0)
    with pytest.raises(DownscaleError):
        downscale_variance(ARModel(np.array([0.3, 0.3]), 1.0), 2, 1.0)


# -- meter CSV interchange ------------------------------------------------


def test_meter_csv_round_trip(tmp_path):
    series = {
        "m1": MeterSeries("m1", 4, np.array([1.5, 2.25, 0.125])),
        "m2": MeterSeries("m2", 4, np.array([0.0, -1.75, 3.5])),
    }
    path = tmp_path / "meters.csv"
    save_meter_csv(path, series)
    loaded = load_meter_csv(path, aggregation=4)
    assert set(loaded) == {"m1", "m2"}
    for key in series:
        assert (loaded[key].readings == series[key].readings).all()
        assert loaded[key].aggregation == 4


def test_meter_csv_requires_expected_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("meter,value\nm1,1.0\n")
    with pytest.raises(ValueError):
        load_meter_csv(path, aggregation=4)
