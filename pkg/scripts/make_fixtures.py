"""Regenerate the packaged demo networks and meter data.

Run from the repository root after an editable install:

    python scripts/make_fixtures.py
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from gridbse import (
    Branch,
    Bus,
    MeterSeries,
    Network,
    save_meter_csv,
    save_network_file,
    synthesize_meter_series,
)
from gridbse.util import substream

DATA = Path(__file__).resolve().parents[1] / "src" / "gridbse" / "data"


def single_phase_branch(fr: int, to: int, z: complex) -> Branch:
    y = 1.0 / z
    return Branch(from_bus=fr, to_bus=to, series=np.array([[y]]))


def three_phase_branch(fr: int, to: int, scale: float) -> Branch:
    z_self = 0.03 + 0.06j
    z_mutual = 0.008 + 0.02j
    z = scale * (np.full((3, 3), z_mutual) + np.eye(3) * (z_self - z_mutual))
    return Branch(from_bus=fr, to_bus=to, series=np.linalg.inv(z))


def make_net12() -> Network:
    """Radial 12-bus single-phase feeder: a trunk, two laterals, one spur."""
    buses = [Bus(1, "slack", (1,))] + [Bus(i, "pq", (1,)) for i in range(2, 13)]
    trunk = 0.015 + 0.035j
    lateral = 0.025 + 0.045j
    spur = 0.03 + 0.05j
    branches = [
        single_phase_branch(1, 2, trunk),
        single_phase_branch(2, 3, trunk),
        single_phase_branch(3, 4, trunk),
        single_phase_branch(4, 5, trunk),
        single_phase_branch(2, 6, lateral),
        single_phase_branch(6, 7, lateral),
        single_phase_branch(7, 8, lateral),
        single_phase_branch(3, 9, lateral),
        single_phase_branch(9, 10, lateral),
        single_phase_branch(10, 11, lateral),
        single_phase_branch(4, 12, spur),
    ]
    return Network(buses=tuple(buses), branches=tuple(branches))


def make_net4_3ph() -> Network:
    """Small three-phase feeder with mutual phase coupling on every branch."""
    buses = [
        Bus(1, "slack", (1, 2, 3)),
        Bus(2, "pq", (1, 2, 3)),
        Bus(3, "pq", (1, 2, 3)),
        Bus(4, "pq", (1, 2, 3)),
    ]
    branches = [
        three_phase_branch(1, 2, 1.0),
        three_phase_branch(2, 3, 1.3),
        three_phase_branch(2, 4, 1.5),
    ]
    return Network(buses=tuple(buses), branches=tuple(branches), phase_count=3)


def make_meter_demo(aggregation: int = 4, slow_intervals: int = 400) -> None:
    """Simulate mixture-of-AR(1) consumption and write slow aggregates.

    Per interval one mixture component sets the mean level; within the
    interval the deviation follows a continuing AR(1). The fast trace of an
    extra, independently simulated meter is written alongside so the AR
    coefficient can be re-fit from data.
    """
    alpha = 0.6
    n_fast = aggregation * slow_intervals
    fast = {}
    for bus in range(2, 13):
        rng = substream(424242, "meter", bus)
        means = np.array([0.016 + 0.0004 * bus, 0.042 + 0.0008 * bus])
        weights = np.array([0.6, 0.4])
        stds = np.array([0.002, 0.0035])
        series = np.empty(n_fast)
        deviation = 0.0
        for t in range(n_fast):
            if t % aggregation == 0:
                comp = rng.choice(2, p=weights)
            innovation = rng.normal(0.0, stds[comp] * np.sqrt(1.0 - alpha**2))
            deviation = alpha * deviation + innovation
            series[t] = means[comp] + deviation
        fast[str(bus)] = series
    save_meter_csv(DATA / "meters_demo.csv", synthesize_meter_series(fast, aggregation))

    rng = substream(424242, "trace")
    trace = np.empty(2000)
    deviation = 0.0
    for t in range(trace.size):
        deviation = alpha * deviation + rng.normal(0.0, 0.003 * np.sqrt(1.0 - alpha**2))
        trace[t] = 0.03 + deviation
    save_meter_csv(
        DATA / "fast_trace_demo.csv",
        {"trace": MeterSeries(meter_id="trace", aggregation=1, readings=trace)},
    )


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    save_network_file(make_net12(), DATA / "net12.json")
    save_network_file(make_net4_3ph(), DATA / "net4_3ph.json")
    make_meter_demo()
    for name in sorted(p.name for p in DATA.iterdir()):
        print("wrote", name)


if __name__ == "__main__":
    main()
