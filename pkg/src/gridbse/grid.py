"""Multi-phase distribution network model, admittance assembly, and grid file I/O.

Branch admittances are dense per-phase complex blocks, so single-phase
networks are the P=1 special case of the three-phase machinery. Everything
is in per-unit on the network's power base.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SLACK_KIND = "slack"
PQ_KIND = "pq"

# Reference angle (radians) pinned at the slack bus for each phase.
SLACK_REFERENCE_ANGLES = {1: 0.0, 2: -2.0 * math.pi / 3.0, 3: 2.0 * math.pi / 3.0}


class GridModelError(ValueError):
    """Structurally invalid network or grid file.

    `code` identifies the violation class so callers can distinguish, e.g.,
    a schema problem from a disconnected graph.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class Bus:
    """One network node.

    Args:
        id: unique positive integer identifier.
        kind: "slack" or "pq".
        phases: ordered tuple drawn from (1, 2, 3).
    """

    id: int
    kind: str
    phases: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in (SLACK_KIND, PQ_KIND):
            raise GridModelError("schema", f"bus {self.id}: unknown kind {self.kind!r}")
        if not self.phases:
            raise GridModelError("schema", f"bus {self.id}: empty phase list")
        if len(set(self.phases)) != len(self.phases):
            raise GridModelError("schema", f"bus {self.id}: repeated phase")
        if any(p not in (1, 2, 3) for p in self.phases):
            raise GridModelError("schema", f"bus {self.id}: phases must be in 1..3")

    @property
    def is_slack(self) -> bool:
        return self.kind == SLACK_KIND


@dataclass(frozen=True)
class Branch:
    """Series element between two buses with dense per-phase admittance blocks.

    `series` couples phase k of one end to phase l of the other; the optional
    shunt blocks sit at each end. Blocks are (P, P) complex arrays where P is
    the phase count of the endpoints. A reciprocal branch has a symmetric
    series block.
    """

    from_bus: int
    to_bus: int
    series: np.ndarray
    shunt_from: np.ndarray | None = None
    shunt_to: np.ndarray | None = None

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise GridModelError("schema", f"branch {self.from_bus}-{self.to_bus}: self loop")
        series = np.asarray(self.series, dtype=complex)
        object.__setattr__(self, "series", series)
        if series.ndim != 2 or series.shape[0] != series.shape[1]:
            raise GridModelError("schema", f"branch {self.from_bus}-{self.to_bus}: series block must be square")
        for name in ("shunt_from", "shunt_to"):
            block = getattr(self, name)
            if block is not None:
                block = np.asarray(block, dtype=complex)
                object.__setattr__(self, name, block)
                if block.shape != series.shape:
                    raise GridModelError(
                        "schema", f"branch {self.from_bus}-{self.to_bus}: {name} shape mismatch"
                    )

    @property
    def n_phases(self) -> int:
        return self.series.shape[0]


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Dense bus admittance matrix over the network's bus-phase coordinates."""

    matrix: np.ndarray

    @property
    def conductance(self) -> np.ndarray:
        return self.matrix.real

    @property
    def susceptance(self) -> np.ndarray:
        return self.matrix.imag


@dataclass(frozen=True)
class Network:
    """Validated network: exactly one slack, unique bus ids, connected graph.

    A bus-phase pair is one scalar node of the electrical model; the
    canonical ordering (file order of buses, then each bus's phase order)
    fixes the layout of states, admittance matrix, and sampling targets.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    phase_count: int = 1
    base_power_mva: float = 1.0
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i in set(ids) if ids.count(i) > 1)
            raise GridModelError("duplicate-bus", f"duplicate bus id(s): {dup}")
        slacks = [b.id for b in self.buses if b.is_slack]
        if not slacks:
            raise GridModelError("missing-slack", "network has no slack bus")
        if len(slacks) > 1:
            raise GridModelError("multiple-slack", f"multiple slack buses: {slacks}")
        if self.phase_count not in (1, 3):
            raise GridModelError("schema", f"phase_count must be 1 or 3, got {self.phase_count}")
        by_id = {b.id: b for b in self.buses}
        for bus in self.buses:
            if any(p > self.phase_count for p in bus.phases):
                raise GridModelError("schema", f"bus {bus.id}: phase beyond phase_count")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in by_id:
                    raise GridModelError("unknown-bus", f"branch references unknown bus {end}")
            if by_id[br.from_bus].phases != by_id[br.to_bus].phases:
                raise GridModelError(
                    "phase-mismatch",
                    f"branch {br.from_bus}-{br.to_bus}: endpoint phase sets differ",
                )
            if br.n_phases != len(by_id[br.from_bus].phases):
                raise GridModelError(
                    "schema",
                    f"branch {br.from_bus}-{br.to_bus}: block dimension {br.n_phases} "
                    f"!= endpoint phase count {len(by_id[br.from_bus].phases)}",
                )
        self._check_connected(by_id)
        pairs = tuple((b.id, p) for b in self.buses for p in b.phases)
        index = {pair: i for i, pair in enumerate(pairs)}
        slack_id = slacks[0]
        slack_idx = np.array([i for i, (bid, _) in enumerate(pairs) if bid == slack_id], dtype=int)
        nonslack_idx = np.array([i for i, (bid, _) in enumerate(pairs) if bid != slack_id], dtype=int)
        self._index.update(
            by_id=by_id,
            pairs=pairs,
            index=index,
            slack_id=slack_id,
            slack_indices=slack_idx,
            nonslack_indices=nonslack_idx,
        )

    def _check_connected(self, by_id):
        if len(self.buses) == 1:
            return
        adjacency: dict[int, set[int]] = {b.id: set() for b in self.buses}
        for br in self.branches:
            adjacency[br.from_bus].add(br.to_bus)
            adjacency[br.to_bus].add(br.from_bus)
        seen = set()
        stack = [self.buses[0].id]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(adjacency[node] - seen)
        if len(seen) != len(self.buses):
            missing = sorted(set(by_id) - seen)
            raise GridModelError("disconnected", f"bus(es) unreachable from slack side: {missing}")

    # -- canonical bus-phase layout ------------------------------------

    @property
    def bus_phase_pairs(self) -> tuple[tuple[int, int], ...]:
        return self._index["pairs"]

    @property
    def n_bus_phases(self) -> int:
        return len(self._index["pairs"])

    @property
    def slack_id(self) -> int:
        return self._index["slack_id"]

    @property
    def slack_indices(self) -> np.ndarray:
        return self._index["slack_indices"]

    @property
    def nonslack_indices(self) -> np.ndarray:
        return self._index["nonslack_indices"]

    def bus(self, bus_id: int) -> Bus:
        return self._index["by_id"][bus_id]

    def index_of(self, bus_id: int, phase: int) -> int:
        try:
            return self._index["index"][(bus_id, phase)]
        except KeyError:
            raise GridModelError("schema", f"no phase {phase} at bus {bus_id}") from None

    def phase_indices(self, bus_id: int) -> np.ndarray:
        bus = self.bus(bus_id)
        return np.array([self.index_of(bus_id, p) for p in bus.phases], dtype=int)


def build_ybus(network: Network) -> AdmittanceMatrix:
    """Assemble the dense bus admittance matrix from branch blocks.

    Parallel branches accumulate. With symmetric (reciprocal) series blocks
    the result is symmetric, and without shunts every row sums to zero.
    """
    n = network.n_bus_phases
    ybus = np.zeros((n, n), dtype=complex)
    for br in network.branches:
        fi = network.phase_indices(br.from_bus)
        ti = network.phase_indices(br.to_bus)
        series = br.series
        ybus[np.ix_(fi, fi)] += series
        ybus[np.ix_(ti, ti)] += series
        ybus[np.ix_(fi, ti)] -= series
        ybus[np.ix_(ti, fi)] -= series
        if br.shunt_from is not None:
            ybus[np.ix_(fi, fi)] += br.shunt_from
        if br.shunt_to is not None:
            ybus[np.ix_(ti, ti)] += br.shunt_to
    return AdmittanceMatrix(ybus)


# -- grid file format ----------------------------------------------------
#
# {"phase_count": 1, "base_power_mva": 1.0,
#  "buses": [{"id": 1, "kind": "slack", "phases": [1]}, ...],
#  "branches": [{"from": 1, "to": 2,
#                "series": [[{"re": ..., "im": ...}]],
#                "shunt_from": [[...]]?, "shunt_to": [[...]]?}, ...]}


def _complex_from_json(entry, where: str) -> complex:
    if not isinstance(entry, dict) or set(entry) != {"re", "im"}:
        raise GridModelError("schema", f"{where}: complex entries must be {{re, im}} objects")
    re, im = entry["re"], entry["im"]
    if not isinstance(re, (int, float)) or not isinstance(im, (int, float)):
        raise GridModelError("schema", f"{where}: re/im must be numbers")
    return complex(re, im)


def _block_from_json(rows, where: str) -> np.ndarray:
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise GridModelError("schema", f"{where}: admittance block must be a list of rows")
    block = np.array([[_complex_from_json(c, where) for c in row] for row in rows], dtype=complex)
    return block


def _block_to_json(block: np.ndarray):
    return [[{"re": float(c.real), "im": float(c.imag)} for c in row] for row in block]


def load_network(text: str) -> Network:
    """Parse a grid JSON document into a validated Network."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridModelError("schema", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise GridModelError("schema", "top level must be an object")
    for key in ("phase_count", "base_power_mva", "buses", "branches"):
        if key not in doc:
            raise GridModelError("schema", f"missing top-level key {key!r}")
    if not isinstance(doc["buses"], list) or not isinstance(doc["branches"], list):
        raise GridModelError("schema", "buses and branches must be arrays")
    buses = []
    for entry in doc["buses"]:
        if not isinstance(entry, dict) or not {"id", "kind", "phases"} <= set(entry):
            raise GridModelError("schema", f"bad bus entry: {entry!r}")
        if not isinstance(entry["id"], int) or isinstance(entry["id"], bool):
            raise GridModelError("schema", f"bus id must be an integer: {entry['id']!r}")
        buses.append(Bus(id=entry["id"], kind=entry["kind"], phases=tuple(entry["phases"])))
    branches = []
    for k, entry in enumerate(doc["branches"]):
        if not isinstance(entry, dict) or not {"from", "to", "series"} <= set(entry):
            raise GridModelError("schema", f"bad branch entry at position {k}")
        where = f"branch[{k}]"
        branches.append(
            Branch(
                from_bus=entry["from"],
                to_bus=entry["to"],
                series=_block_from_json(entry["series"], where),
                shunt_from=_block_from_json(entry["shunt_from"], where) if entry.get("shunt_from") else None,
                shunt_to=_block_from_json(entry["shunt_to"], where) if entry.get("shunt_to") else None,
            )
        )
    return Network(
        buses=tuple(buses),
        branches=tuple(branches),
        phase_count=doc["phase_count"],
        base_power_mva=float(doc["base_power_mva"]),
    )


def save_network(network: Network) -> str:
    """Serialize a Network to its canonical grid JSON text.

    Floats are written with shortest round-trip repr, so load(save(net))
    reproduces the same values bit for bit.
    """
    doc = {
        "phase_count": network.phase_count,
        "base_power_mva": network.base_power_mva,
        "buses": [
            {"id": b.id, "kind": b.kind, "phases": list(b.phases)} for b in network.buses
        ],
        "branches": [],
    }
    for br in network.branches:
        entry = {"from": br.from_bus, "to": br.to_bus, "series": _block_to_json(br.series)}
        if br.shunt_from is not None:
            entry["shunt_from"] = _block_to_json(br.shunt_from)
        if br.shunt_to is not None:
            entry["shunt_to"] = _block_to_json(br.shunt_to)
        doc["branches"].append(entry)
    return json.dumps(doc, indent=2)


def load_network_file(path) -> Network:
    with open(path, "r", encoding="utf-8") as handle:
        return load_network(handle.read())


def save_network_file(network: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(save_network(network))
        handle.write("\n")
