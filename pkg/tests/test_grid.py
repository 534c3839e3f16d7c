"""Tests for the network model, admittance assembly, and grid file round trips."""

from importlib import resources

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_radial_network, two_bus_network
from gridbse.grid import (
    Branch,
    Bus,
    GridModelError,
    Network,
    build_ybus,
    load_network,
    save_network,
)


def _make_three_phase_block():
    """Symmetric line block with inter-phase coupling."""
    return np.array(
        [
            [4.0 - 12.0j, -1.0 + 3.0j, -1.0 + 3.0j],
            [-1.0 + 3.0j, 4.0 - 12.0j, -1.0 + 3.0j],
            [-1.0 + 3.0j, -1.0 + 3.0j, 4.0 - 12.0j],
        ]
    )


def _make_three_phase_feeder(n_bus=4):
    buses = [Bus(id=1, kind="slack", phases=(1, 2, 3))]
    branches = []
    for bid in range(2, n_bus + 1):
        buses.append(Bus(id=bid, kind="pq", phases=(1, 2, 3)))
        branches.append(Branch(from_bus=bid - 1, to_bus=bid, series=_make_three_phase_block()))
    return Network(buses=tuple(buses), branches=tuple(branches), phase_count=3)


def test_single_branch_admittance_matches_hand_value():
    """One series element y between two buses fills the classic 2x2 pattern."""
    net = two_bus_network(y=-10j)
    ybus = build_ybus(net).matrix
    expected = np.array([[-10j, 10j], [10j, -10j]])
    assert_allclose(ybus, expected, rtol=0, atol=1e-15)


def test_parallel_branches_accumulate():
    buses = (Bus(id=1, kind="slack", phases=(1,)), Bus(id=2, kind="pq", phases=(1,)))
    branches = (
        Branch(from_bus=1, to_bus=2, series=np.array([[-10j]])),
        Branch(from_bus=1, to_bus=2, series=np.array([[-10j]])),
    )
    net = Network(buses=buses, branches=branches)
    ybus = build_ybus(net).matrix
    assert_allclose(ybus[0, 1], 20j, rtol=0, atol=1e-15)
    assert_allclose(ybus[1, 0], 20j, rtol=0, atol=1e-15)
    assert_allclose(ybus[0, 0], -20j, rtol=0, atol=1e-15)


def test_rows_sum_to_zero_without_shunts():
    """Without shunt elements every admittance row must cancel exactly."""
    for seed in range(8):
        rng = np.random.default_rng(seed)
        net = random_radial_network(rng)
        ybus = build_ybus(net).matrix
        assert np.abs(ybus.sum(axis=1)).max() < 1e-12


def test_reciprocal_network_gives_symmetric_matrix():
    for seed in range(8):
        rng = np.random.default_rng(100 + seed)
        net = random_radial_network(rng)
        ybus = build_ybus(net).matrix
        assert np.abs(ybus - ybus.T).max() < 1e-12


def test_shunt_blocks_only_touch_the_diagonal():
    buses = (Bus(id=1, kind="slack", phases=(1,)), Bus(id=2, kind="pq", phases=(1,)))
    branch = Branch(
        from_bus=1,
        to_bus=2,
        series=np.array([[-10j]]),
        shunt_from=np.array([[0.5j]]),
        shunt_to=np.array([[0.25j]]),
    )
    ybus = build_ybus(Network(buses=buses, branches=(branch,))).matrix
    expected = np.array([[-9.5j, 10j], [10j, -9.75j]])
    assert_allclose(ybus, expected, rtol=0, atol=1e-15)


def test_three_phase_four_bus_has_twelve_scalar_nodes():
    net = _make_three_phase_feeder(n_bus=4)
    assert net.n_bus_phases == 12
    ybus = build_ybus(net).matrix
    assert ybus.shape == (12, 12)
    assert np.abs(ybus - ybus.T).max() < 1e-12
    assert np.abs(ybus.sum(axis=1)).max() < 1e-12


def test_bus_phase_ordering_follows_file_order():
    net = _make_three_phase_feeder(n_bus=2)
    assert net.bus_phase_pairs == ((1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3))
    assert net.index_of(2, 3) == 5
    assert list(net.phase_indices(2)) == [3, 4, 5]
    with pytest.raises(GridModelError):
        net.index_of(2, 4)


def test_slack_and_nonslack_index_split():
    net = two_bus_network()
    assert net.slack_id == 1
    assert list(net.slack_indices) == [0]
    assert list(net.nonslack_indices) == [1]


# -- structural validation ------------------------------------------------


def _expect_code(code, build):
    with pytest.raises(GridModelError) as err:
        build()
    assert err.value.code == code


def test_multiple_slack_buses_rejected():
    buses = (Bus(id=1, kind="slack", phases=(1,)), Bus(id=2, kind="slack", phases=(1,)))
    branches = (Branch(from_bus=1, to_bus=2, series=np.array([[-1j]])),)
    _expect_code("multiple-slack", lambda: Network(buses=buses, branches=branches))


def test_missing_slack_rejected():
    buses = (Bus(id=1, kind="pq", phases=(1,)), Bus(id=2, kind="pq", phases=(1,)))
    branches = (Branch(from_bus=1, to_bus=2, series=np.array([[-1j]])),)
    _expect_code("missing-slack", lambda: Network(buses=buses, branches=branches))


def test_duplicate_bus_id_rejected():
    buses = (Bus(id=1, kind="slack", phases=(1,)), Bus(id=1, kind="pq", phases=(1,)))
    _expect_code("duplicate-bus", lambda: Network(buses=buses, branches=()))


def test_branch_to_unknown_bus_rejected():
    buses = (Bus(id=1, kind="slack", phases=(1,)), Bus(id=2, kind="pq", phases=(1,)))
    branches = (
        Branch(from_bus=1, to_bus=2, series=np.array([[-1j]])),
        Branch(from_bus=2, to_bus=9, series=np.array([[-1j]])),
    )
    _expect_code("unknown-bus", lambda: Network(buses=buses, branches=branches))


def test_disconnected_island_rejected():
    buses = (
        Bus(id=1, kind="slack", phases=(1,)),
        Bus(id=2, kind="pq", phases=(1,)),
        Bus(id=3, kind="pq", phases=(1,)),
        Bus(id=4, kind="pq", phases=(1,)),
    )
    branches = (
        Branch(from_bus=1, to_bus=2, series=np.array([[-1j]])),
        Branch(from_bus=3, to_bus=4, series=np.array([[-1j]])),
    )
    _expect_code("disconnected", lambda: Network(buses=buses, branches=branches))


def test_endpoint_phase_mismatch_rejected():
    buses = (Bus(id=1, kind="slack", phases=(1, 2, 3)), Bus(id=2, kind="pq", phases=(1,)))
    branches = (Branch(from_bus=1, to_bus=2, series=np.array([[-1j]])),)
    _expect_code(
        "phase-mismatch",
        lambda: Network(buses=buses, branches=branches, phase_count=3),
    )


def test_self_loop_rejected():
    _expect_code("schema", lambda: Branch(from_bus=3, to_bus=3, series=np.array([[-1j]])))


def test_non_square_series_block_rejected():
    _expect_code(
        "schema",
        lambda: Branch(from_bus=1, to_bus=2, series=np.array([[-1j, 2j]])),
    )


def test_shunt_shape_must_match_series():
    _expect_code(
        "schema",
        lambda: Branch(
            from_bus=1,
            to_bus=2,
            series=np.array([[-1j]]),
            shunt_from=np.array([[1j, 0j], [0j, 1j]]),
        ),
    )


def test_bus_phase_validation():
    _expect_code("schema", lambda: Bus(id=1, kind="pq", phases=()))
    _expect_code("schema", lambda: Bus(id=1, kind="pq", phases=(2, 2)))
    _expect_code("schema", lambda: Bus(id=1, kind="pq", phases=(4,)))
    _expect_code("schema", lambda: Bus(id=1, kind="owner", phases=(1,)))


# -- file format ----------------------------------------------------------


def test_save_load_round_trip_is_bit_exact():
    """Shortest-repr serialization must reproduce awkward floats exactly."""
    series = np.array([[(1.0 / 3.0) - (1.0 / 7.0) * 1j]])
    buses = (Bus(id=1, kind="slack", phases=(1,)), Bus(id=2, kind="pq", phases=(1,)))
    branch = Branch(from_bus=1, to_bus=2, series=series, shunt_to=np.array([[0.1j]]))
    net = Network(buses=buses, branches=(branch,), base_power_mva=2.5)
    text = save_network(net)
    loaded = load_network(text)
    assert (loaded.branches[0].series == series).all()
    assert (loaded.branches[0].shunt_to == branch.shunt_to).all()
    assert loaded.base_power_mva == 2.5
    assert save_network(loaded) == text


def test_load_rejects_malformed_documents():
    with pytest.raises(GridModelError):
        load_network("not json {")
    with pytest.raises(GridModelError):
        load_network('{"phase_count": 1, "buses": [], "branches": []}')
    bad_complex = (
        '{"phase_count": 1, "base_power_mva": 1.0,'
        ' "buses": [{"id": 1, "kind": "slack", "phases": [1]},'
        '           {"id": 2, "kind": "pq", "phases": [1]}],'
        ' "branches": [{"from": 1, "to": 2, "series": [[5.0]]}]}'
    )
    with pytest.raises(GridModelError):
        load_network(bad_complex)


def test_shipped_networks_load_and_assemble():
    net12 = load_network(resources.files("gridbse").joinpath("data", "net12.json").read_text())
    assert len(net12.buses) == 12
    assert net12.slack_id == 1
    assert build_ybus(net12).matrix.shape == (12, 12)

    net4 = load_network(resources.files("gridbse").joinpath("data", "net4_3ph.json").read_text())
    assert net4.phase_count == 3
    assert net4.n_bus_phases == 3 * len(net4.buses)
    ybus = build_ybus(net4).matrix
    assert np.abs(ybus - ybus.T).max() < 1e-12
