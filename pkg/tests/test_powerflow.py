"""Power flow solver, measurement functions, and analytic Jacobian tests."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import full_injection_spec, random_radial_network, two_bus_network
from gridbse.powerflow import (
    Channel,
    InjectionVector,
    MeasurementSpec,
    MeasurementVector,
    PowerFlowConvergenceError,
    StateVector,
    branch_currents,
    build_measurement_plan,
    evaluate_h,
    flat_state,
    measurement_jacobian,
    solve_powerflow,
    total_injections,
)


def _make_mixed_spec(network):
    """Injection channels everywhere plus every branch quantity."""
    channels = list(full_injection_spec(network).channels)
    for kind in ("pinj", "qinj"):
        channels.append(Channel(kind=kind, element=network.slack_id, phase=1))
    for idx in range(len(network.branches)):
        for kind in ("pflow", "qflow", "imag"):
            channels.append(Channel(kind=kind, element=idx, phase=1))
    return MeasurementSpec(channels=tuple(channels))


def _random_state(network, rng):
    n = network.n_bus_phases
    return StateVector(
        vm=rng.uniform(0.95, 1.05, size=n),
        va=rng.uniform(-0.1, 0.1, size=n),
    )


def _fd_jacobian(state, network, spec, step=3e-6):
    """Central differences in the (angle block, magnitude block) ordering."""
    n = network.n_bus_phases
    jac = np.zeros((spec.n_channels, 2 * n))
    for col in range(2 * n):
        vm_hi, va_hi = state.vm.copy(), state.va.copy()
        vm_lo, va_lo = state.vm.copy(), state.va.copy()
        if col < n:
            va_hi[col] += step
            va_lo[col] -= step
        else:
            vm_hi[col - n] += step
            vm_lo[col - n] -= step
        hi = evaluate_h(StateVector(vm=vm_hi, va=va_hi), network, spec).values
        lo = evaluate_h(StateVector(vm=vm_lo, va=va_lo), network, spec).values
        jac[:, col] = (hi - lo) / (2.0 * step)
    return jac


def test_state_vector_flatten_round_trip():
    state = StateVector(vm=np.array([1.0, 0.98]), va=np.array([0.0, -0.03]))
    flat = state.flatten()
    assert_allclose(flat, [1.0, 0.98, 0.0, -0.03], rtol=0, atol=0)
    back = StateVector.from_flat(flat)
    assert (back.vm == state.vm).all()
    assert (back.va == state.va).all()


def test_channel_labels_disambiguate_duplicates():
    spec = MeasurementSpec(
        channels=(
            Channel(kind="imag", element=0),
            Channel(kind="imag", element=0),
            Channel(kind="pinj", element=2),
        )
    )
    assert spec.labels() == ["imag_br0_p1", "imag_br0_p1_2", "pinj_bus2_p1"]


def test_spec_validation_catches_bad_references():
    net = two_bus_network()
    with pytest.raises(Exception):
        MeasurementSpec(channels=(Channel(kind="pinj", element=9),)).validate(net)
    with pytest.raises(ValueError):
        MeasurementSpec(channels=(Channel(kind="imag", element=5),)).validate(net)
    with pytest.raises(ValueError):
        MeasurementSpec(channels=(Channel(kind="pinj", element=2, phase=3),)).validate(net)
    MeasurementSpec(channels=(Channel(kind="imag", element=0),)).validate(net)


def test_measurement_vector_defaults_to_all_valid():
    z = MeasurementVector(values=np.array([1.0, 2.0]))
    assert z.valid.all()
    with pytest.raises(ValueError):
        MeasurementVector(values=np.zeros(3), valid=np.ones(2, dtype=bool))


def test_injection_measurement_matches_hand_value():
    """A 0.1 rad angle drop across y = -10j sends P1 = 10 sin(0.1)."""
    net = two_bus_network(y=-10j)
    state = StateVector(vm=np.array([1.0, 1.0]), va=np.array([0.0, -0.1]))
    spec = MeasurementSpec(
        channels=(Channel(kind="pinj", element=1), Channel(kind="qinj", element=1))
    )
    z = evaluate_h(state, net, spec)
    assert_allclose(z.values[0], 10.0 * math.sin(0.1), rtol=0, atol=1e-12)
    assert_allclose(z.values[1], 10.0 * (1.0 - math.cos(0.1)), rtol=0, atol=1e-12)


def test_two_bus_solution_matches_closed_form():
    """P2 = -0.1, Q2 = 0 has the closed form theta2 = asin(-0.02) / 2."""
    net = two_bus_network(y=-10j)
    inj = InjectionVector(p=np.array([-0.1]), q=np.array([0.0]))
    result = solve_powerflow(net, inj, tol=1e-12)
    theta2 = math.asin(-0.02) / 2.0
    assert_allclose(result.state.va[1], theta2, rtol=0, atol=1e-10)
    assert_allclose(result.state.vm[1], math.cos(theta2), rtol=0, atol=1e-10)
    assert result.max_mismatch < 1e-12
    # The recovered slack injection must carry the line losses (none here,
    # the branch is purely reactive in series and lossless in P).
    s = total_injections(result.state, net)
    assert_allclose(s[1].real, -0.1, rtol=0, atol=1e-10)
    assert_allclose(s[1].imag, 0.0, rtol=0, atol=1e-10)


def test_infeasible_load_reports_non_convergence():
    net = two_bus_network(y=-10j)
    inj = InjectionVector(p=np.array([-100.0]), q=np.array([0.0]))
    with pytest.raises(PowerFlowConvergenceError):
        solve_powerflow(net, inj)


def test_zero_injections_keep_the_flat_start():
    net = two_bus_network()
    result = solve_powerflow(net, InjectionVector(p=np.array([0.0]), q=np.array([0.0])))
    assert result.iterations == 0
    assert_allclose(result.state.vm, [1.0, 1.0], rtol=0, atol=0)
    assert_allclose(result.state.va, [0.0, 0.0], rtol=0, atol=0)


def test_flat_state_angle_sensitivity_is_the_susceptance():
    """At the flat start dP1/dtheta1 equals +10 for the y = -10j line."""
    net = two_bus_network(y=-10j)
    spec = MeasurementSpec(channels=(Channel(kind="pinj", element=1),))
    jac = measurement_jacobian(flat_state(net), net, spec)
    assert_allclose(jac[0, 0], 10.0, rtol=0, atol=1e-12)


def test_zero_current_magnitude_row_stays_zero():
    """|I| is non-differentiable at zero; the row must stay zero, not NaN."""
    net = two_bus_network()
    spec = MeasurementSpec(channels=(Channel(kind="imag", element=0),))
    state = flat_state(net)
    assert evaluate_h(state, net, spec).values[0] == 0.0
    jac = measurement_jacobian(state, net, spec)
    assert np.isfinite(jac).all()
    assert (jac[0] == 0.0).all()


def test_jacobian_matches_finite_differences():
    for seed in range(6):
        rng = np.random.default_rng(200 + seed)
        net = random_radial_network(rng)
        spec = _make_mixed_spec(net)
        state = _random_state(net, rng)
        analytic = measurement_jacobian(state, net, spec)
        numeric = _fd_jacobian(state, net, spec)
        assert np.abs(analytic - numeric).max() < 1e-6


def test_planned_evaluation_matches_generic_path():
    for seed in range(4):
        rng = np.random.default_rng(300 + seed)
        net = random_radial_network(rng)
        spec = _make_mixed_spec(net)
        plan = build_measurement_plan(net, spec)
        assert plan is not None
        state = _random_state(net, rng)
        z_direct = evaluate_h(state, net, spec).values
        z_planned = evaluate_h(state, net, spec, plan=plan).values
        assert_allclose(z_planned, z_direct, rtol=0, atol=1e-12)
        j_direct = measurement_jacobian(state, net, spec)
        j_planned = measurement_jacobian(state, net, spec, plan=plan)
        assert_allclose(j_planned, j_direct, rtol=0, atol=1e-12)


def test_polyphase_branch_channels_have_no_plan():
    from test_grid import _make_three_phase_feeder

    net = _make_three_phase_feeder(n_bus=3)
    spec = MeasurementSpec(channels=(Channel(kind="imag", element=0, phase=2),))
    assert build_measurement_plan(net, spec) is None


def test_solver_round_trip_recovers_injections():
    """h(g(s)) must reproduce the requested injections to solver accuracy."""
    for seed in range(6):
        rng = np.random.default_rng(400 + seed)
        net = random_radial_network(rng)
        k = net.nonslack_indices.size
        inj = InjectionVector(
            p=rng.uniform(-0.3, 0.05, size=k),
            q=rng.uniform(-0.1, 0.05, size=k),
        )
        result = solve_powerflow(net, inj, tol=1e-10)
        z = evaluate_h(result.state, net, full_injection_spec(net))
        target = np.concatenate([inj.p, inj.q])
        assert np.abs(z.values - target).max() < 1e-8


def test_branch_current_matches_voltage_drop():
    net = two_bus_network(y=-10j)
    state = StateVector(vm=np.array([1.0, 0.99]), va=np.array([0.0, -0.05]))
    current = branch_currents(state, net)
    v = state.phasors()
    assert_allclose(current[0], -10j * (v[0] - v[1]), rtol=0, atol=1e-15)


def test_three_phase_power_flow_converges_balanced():
    from test_grid import _make_three_phase_feeder

    net = _make_three_phase_feeder(n_bus=3)
    k = net.nonslack_indices.size
    inj = InjectionVector(p=np.full(k, -0.05), q=np.full(k, -0.01))
    result = solve_powerflow(net, inj, tol=1e-10)
    assert result.max_mismatch < 1e-10
    # Balanced loading keeps the three phase magnitudes of one bus equal.
    vm = result.state.vm
    for bus_id in (2, 3):
        idx = net.phase_indices(bus_id)
        assert np.ptp(vm[idx]) < 1e-9
