"""Scenario sampling, sensor noise, gross errors, and training set I/O tests."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import full_injection_spec, two_bus_network
from gridbse.injections import GaussianMixture
from gridbse.powerflow import MeasurementVector
from gridbse.sampling import (
    BadDataConfig,
    NoiseModel,
    SamplingError,
    ScenarioDistributions,
    generate_training_set,
    inject_bad_data,
    inject_missing,
    load_training_set,
    sample_injections,
    save_training_set,
    synthesize_meter_series,
)


def _point_mass(value, var=1e-18):
    """Mixture so narrow every draw is numerically the given value."""
    return GaussianMixture(np.array([1.0]), np.array([float(value)]), np.array([var]))


def _make_scenario(network, load=0.3, generation=None, power_factor=0.95, var=1e-18):
    gen = None
    if generation is not None:
        gen = {bus: _point_mass(val, var) for bus, val in generation.items()}
    return ScenarioDistributions.build(
        network,
        _point_mass(load, var),
        generation=gen,
        power_factor=power_factor,
    )


def test_degenerate_draw_is_generation_minus_load():
    net = two_bus_network()
    dists = _make_scenario(net, load=0.5, generation={2: 0.2}, power_factor=1.0)
    inj = sample_injections(dists, np.random.default_rng(0))
    assert_allclose(inj.p[0], -0.3, rtol=0, atol=1e-6)
    assert inj.q[0] == 0.0


def test_reactive_power_follows_the_power_factor():
    """At pf 0.95 a unit load consumes about 0.3287 reactive."""
    net = two_bus_network()
    dists = _make_scenario(net, load=1.0, power_factor=0.95)
    inj = sample_injections(dists, np.random.default_rng(1))
    assert_allclose(inj.q[0], -0.3287, rtol=0, atol=1e-4)
    assert_allclose(inj.q[0], inj.p[0] * math.tan(math.acos(0.95)), rtol=0, atol=1e-12)
    assert_allclose(dists.tan_phi, math.tan(math.acos(0.95)), rtol=0, atol=0)


def test_mean_net_injection_and_default_noise_level():
    net = two_bus_network()
    dists = _make_scenario(net, load=0.5, generation={2: 0.2})
    assert_allclose(dists.mean_net_injection(), [-0.3], rtol=0, atol=1e-12)
    spec = full_injection_spec(net)
    noise = NoiseModel.from_scenario(dists, spec)
    assert_allclose(noise.sigma, np.full(2, 0.003), rtol=0, atol=1e-15)


def test_build_with_per_bus_overrides():
    net = two_bus_network()
    dists = ScenarioDistributions.build(
        net, {"default": _point_mass(0.4), 2: _point_mass(0.7)}
    )
    assert_allclose(dists.mean_net_injection(), [-0.7], rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        ScenarioDistributions.build(net, {3: _point_mass(0.4)})


def test_training_noise_has_the_requested_standard_deviation():
    """Replicated degenerate scenarios isolate the additive sensor noise."""
    net = two_bus_network()
    dists = _make_scenario(net, load=0.3)
    spec = full_injection_spec(net)
    noise = NoiseModel.uniform(0.02, spec.n_channels)
    ts = generate_training_set(net, dists, spec, noise, count=10_000, seed=17)
    sd = ts.measurements.std(axis=0)
    assert np.abs(sd - 0.02).max() < 0.03 * 0.02
    # States are all the same draw, so the spread comes from noise alone.
    assert np.ptp(ts.states, axis=0).max() < 1e-6


def test_bad_data_channel_selection_is_binomial():
    n = 100_000
    z = MeasurementVector(np.zeros(n))
    cfg = BadDataConfig(eta=0.3, ratio=10.0, noise=NoiseModel.uniform(0.01, n))
    corrupted, flags = inject_bad_data(z, cfg, np.random.default_rng(3))
    assert abs(flags.mean() - 0.3) < 0.01
    # Untouched channels stay bit-identical; hit channels get extra noise
    # with standard deviation sqrt(ratio^2 - 1) sigma0.
    assert (corrupted.values[~flags] == 0.0).all()
    extra_sd = corrupted.values[flags].std()
    assert_allclose(extra_sd, math.sqrt(99.0) * 0.01, rtol=0.03, atol=0)


def test_bad_data_config_validation():
    noise = NoiseModel.uniform(0.01, 4)
    with pytest.raises(ValueError):
        BadDataConfig(eta=0.3, ratio=1.0, noise=noise)
    with pytest.raises(ValueError):
        BadDataConfig(eta=1.2, ratio=5.0, noise=noise)
    cfg = BadDataConfig(eta=0.3, ratio=5.0, noise=noise)
    assert_allclose(cfg.sigma1, 0.05 * np.ones(4), rtol=0, atol=1e-15)


def test_missing_channels_lose_validity_not_values():
    z = MeasurementVector(np.arange(10_000, dtype=float))
    dropped, mask = inject_missing(z, 0.25, np.random.default_rng(4))
    assert abs(mask.mean() - 0.25) < 0.02
    assert (dropped.values == z.values).all()
    assert (dropped.valid == ~mask).all()
    with pytest.raises(ValueError):
        inject_missing(z, 1.5, np.random.default_rng(0))


def test_training_set_generation_is_deterministic_and_thread_invariant():
    net = two_bus_network()
    dists = _make_scenario(net, load=0.3, var=1e-4)
    spec = full_injection_spec(net)
    noise = NoiseModel.uniform(0.01, spec.n_channels)
    a = generate_training_set(net, dists, spec, noise, count=50, seed=5)
    b = generate_training_set(net, dists, spec, noise, count=50, seed=5)
    c = generate_training_set(net, dists, spec, noise, count=50, seed=5, threads=3)
    assert (a.states == b.states).all()
    assert (a.measurements == b.measurements).all()
    assert (a.states == c.states).all()
    assert (a.measurements == c.measurements).all()
    d = generate_training_set(net, dists, spec, noise, count=50, seed=6)
    assert not (a.measurements == d.measurements).all()


def test_diverged_samples_are_skipped_and_counted():
    net = two_bus_network()
    # One load component in twenty is far beyond the feeder's capacity.
    heavy = GaussianMixture(
        weights=np.array([0.95, 0.05]),
        means=np.array([0.3, 100.0]),
        variances=np.array([1e-8, 1e-8]),
    )
    dists = ScenarioDistributions.build(net, heavy)
    spec = full_injection_spec(net)
    noise = NoiseModel.uniform(0.01, spec.n_channels)
    ts = generate_training_set(net, dists, spec, noise, count=400, seed=9)
    assert 0 < ts.skipped <= 40
    assert ts.n_samples == 400 - ts.skipped


def test_hopeless_scenario_aborts():
    net = two_bus_network()
    dists = _make_scenario(net, load=100.0)
    spec = full_injection_spec(net)
    noise = NoiseModel.uniform(0.01, spec.n_channels)
    with pytest.raises(SamplingError):
        generate_training_set(net, dists, spec, noise, count=20, seed=0)
    with pytest.raises(SamplingError):
        generate_training_set(net, dists, spec, noise, count=0, seed=0)


def test_meter_synthesis_block_sums():
    fast = {"a": np.array([1.0, 2.0, 3.0, 4.0])}
    assert (synthesize_meter_series(fast, 1)["a"].readings == fast["a"]).all()
    const = {"b": np.full(8, 2.5)}
    assert (synthesize_meter_series(const, 4)["b"].readings == np.array([10.0, 10.0])).all()
    rng = np.random.default_rng(6)
    series = {"c": rng.integers(0, 16, 24).astype(float)}
    readings = synthesize_meter_series(series, 6)["c"].readings
    assert readings.size == 4
    assert readings.sum() == series["c"].sum()
    with pytest.raises(ValueError):
        synthesize_meter_series({"d": np.ones(5)}, 2)


def test_training_set_round_trip(tmp_path):
    net = two_bus_network()
    dists = _make_scenario(net, load=0.3, var=1e-4)
    spec = full_injection_spec(net)
    noise = NoiseModel.uniform(0.01, spec.n_channels)
    ts = generate_training_set(net, dists, spec, noise, count=20, seed=12, config_hash="abc")
    save_training_set(ts, tmp_path, net, tag="train")
    back = load_training_set(tmp_path, tag="train")
    assert (back.states == ts.states).all()
    assert (back.measurements == ts.measurements).all()
    assert back.spec.channels == ts.spec.channels
    assert back.seed == 12
    assert back.skipped == ts.skipped
    assert back.config_hash == "abc"
