"""Shared factories for the test suite.

Most modules build their own small fixtures inline; the helpers here are
the ones that several test files need in identical form.
"""
import numpy as np

from gridbse.grid import Branch, Bus, Network
from gridbse.powerflow import Channel, MeasurementSpec


def two_bus_network(y=-10j):
    """Slack bus 1 feeding pq bus 2 through a single series admittance."""
    buses = (Bus(id=1, kind="slack", phases=(1,)), Bus(id=2, kind="pq", phases=(1,)))
    branches = (Branch(from_bus=1, to_bus=2, series=np.array([[y]])),)
    return Network(buses=buses, branches=branches)


def random_radial_network(rng, n_bus=None):
    """Random single-phase radial feeder with reciprocal line admittances.

    Line parameters stay in a range where a modest load level keeps the
    power flow well conditioned, so solver-based tests do not trip over
    pathological draws.
    """
    if n_bus is None:
        n_bus = int(rng.integers(3, 9))
    buses = [Bus(id=1, kind="slack", phases=(1,))]
    branches = []
    for bid in range(2, n_bus + 1):
        buses.append(Bus(id=bid, kind="pq", phases=(1,)))
        parent = int(rng.integers(1, bid))
        g = float(rng.uniform(1.0, 8.0))
        b = float(rng.uniform(4.0, 20.0))
        branches.append(Branch(from_bus=parent, to_bus=bid, series=np.array([[g - 1j * b]])))
    return Network(buses=tuple(buses), branches=tuple(branches))


def full_injection_spec(network):
    """P and Q injection channels at every non-slack bus-phase pair."""
    channels = []
    for kind in ("pinj", "qinj"):
        for bus_id, phase in network.bus_phase_pairs:
            if bus_id == network.slack_id:
                continue
            channels.append(Channel(kind=kind, element=bus_id, phase=phase))
    return MeasurementSpec(channels=tuple(channels))
