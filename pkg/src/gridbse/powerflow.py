"""Power flow and measurement functions on the multi-phase network model.

All quantities derive from the complex phasor identities

    S_i  = v_i * conj(sum_j Y_ij v_j)              (bus injection)
    I_ij = y_series (v_i - v_j) + y_shunt_i v_i    (branch current, from end)
    S_ij = v_i * conj(I_ij)                        (branch flow, from end)

with v = V e^{j theta}. Branch flow and current channels are measured at the
branch's from end in the from->to direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import SLACK_REFERENCE_ANGLES, AdmittanceMatrix, Network, build_ybus

CHANNEL_KINDS = ("pinj", "qinj", "pflow", "qflow", "imag")
_INJECTION_KINDS = ("pinj", "qinj")


class PowerFlowError(RuntimeError):
    """Base class for solver failures."""


class SingularJacobianError(PowerFlowError):
    """Newton-Raphson or Gauss-Newton system matrix is singular."""


class PowerFlowConvergenceError(PowerFlowError):
    """Iteration budget exhausted or iterates diverged.

    `max_mismatch` carries the final per-phase apparent-power mismatch.
    """

    def __init__(self, message: str, max_mismatch: float):
        super().__init__(f"{message} (max |S - s| = {max_mismatch:.3e})")
        self.max_mismatch = max_mismatch


@dataclass(frozen=True)
class StateVector:
    """Voltage magnitudes and angles over the canonical bus-phase ordering.

    `flatten()` lays out [vm..., va...], the order used by training targets
    and CSV artifacts.
    """

    vm: np.ndarray
    va: np.ndarray

    def __post_init__(self):
        vm = np.asarray(self.vm, dtype=float)
        va = np.asarray(self.va, dtype=float)
        object.__setattr__(self, "vm", vm)
        object.__setattr__(self, "va", va)
        if vm.shape != va.shape or vm.ndim != 1:
            raise ValueError("vm and va must be equal-length 1-D arrays")
        if np.any(vm < 0):
            raise ValueError("voltage magnitudes must be non-negative")

    @property
    def n(self) -> int:
        return self.vm.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.vm, self.va])

    @classmethod
    def from_flat(cls, vec: np.ndarray) -> "StateVector":
        vec = np.asarray(vec, dtype=float)
        half = vec.size // 2
        return cls(vm=vec[:half].copy(), va=vec[half:].copy())

    def phasors(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


@dataclass(frozen=True)
class InjectionVector:
    """Net complex power injections at non-slack bus-phases (per-unit).

    Consumption is negative. Entries follow the network's non-slack
    bus-phase ordering.
    """

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p and q must be equal-length 1-D arrays")

    @property
    def n(self) -> int:
        return self.p.size

    def complex_power(self) -> np.ndarray:
        return self.p + 1j * self.q


@dataclass(frozen=True)
class Channel:
    """One measurement channel.

    kind: pinj/qinj reference a bus id; pflow/qflow/imag reference a branch
    by its position in the network's branch list. phase is the physical
    phase number (1-based).
    """

    kind: str
    element: int
    phase: int = 1

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")

    @property
    def label(self) -> str:
        ref = "bus" if self.kind in _INJECTION_KINDS else "br"
        return f"{self.kind}_{ref}{self.element}_p{self.phase}"


@dataclass(frozen=True)
class MeasurementSpec:
    """Ordered channel list defining the measurement vector layout."""

    channels: tuple[Channel, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def labels(self) -> list[str]:
        # Duplicate channels (several meters on one quantity) get a
        # positional suffix so delimited headers stay unique.
        seen: dict = {}
        out = []
        for c in self.channels:
            base = c.label
            count = seen.get(base, 0)
            seen[base] = count + 1
            out.append(base if count == 0 else f"{base}_{count + 1}")
        return out

    def validate(self, network: Network) -> None:
        for ch in self.channels:
            if ch.kind in _INJECTION_KINDS:
                bus = network.bus(ch.element)  # KeyError -> invalid bus id
                if ch.phase not in bus.phases:
                    raise ValueError(f"channel {ch.label}: bus {ch.element} has no phase {ch.phase}")
            else:
                if not 0 <= ch.element < len(network.branches):
                    raise ValueError(f"channel {ch.label}: branch index out of range")
                br = network.branches[ch.element]
                if ch.phase not in network.bus(br.from_bus).phases:
                    raise ValueError(f"channel {ch.label}: branch has no phase {ch.phase}")

    def subset(self, keep: np.ndarray) -> "MeasurementSpec":
        return MeasurementSpec(tuple(c for c, k in zip(self.channels, keep) if k))


@dataclass
class MeasurementVector:
    """Measurement values aligned with a MeasurementSpec, plus validity mask."""

    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.values.shape:
            raise ValueError("validity mask shape mismatch")

    @property
    def n(self) -> int:
        return self.values.size

    def copy(self) -> "MeasurementVector":
        return MeasurementVector(self.values.copy(), self.valid.copy())


def flat_state(network: Network, slack_vm: float = 1.0) -> StateVector:
    """Flat start: unit magnitudes and per-phase reference angles everywhere.

    Slack phases take `slack_vm`; three-phase networks start each phase at
    its slack reference angle (0, -120 deg, +120 deg) so the solver begins
    near the balanced operating point.
    """
    n = network.n_bus_phases
    vm = np.ones(n)
    va = np.array([SLACK_REFERENCE_ANGLES[p] for (_, p) in network.bus_phase_pairs])
    vm[network.slack_indices] = slack_vm
    return StateVector(vm=vm, va=va)


def _branch_current(network: Network, br_index: int, v: np.ndarray):
    """Complex from-end phase currents of one branch, with endpoint indices."""
    br = network.branches[br_index]
    fi = network.phase_indices(br.from_bus)
    ti = network.phase_indices(br.to_bus)
    current = br.series @ (v[fi] - v[ti])
    if br.shunt_from is not None:
        current = current + br.shunt_from @ v[fi]
    return current, fi, ti


def _phase_position(network: Network, br_index: int, phase: int) -> int:
    bus = network.bus(network.branches[br_index].from_bus)
    return bus.phases.index(phase)


def evaluate_h(
    state: StateVector,
    network: Network,
    spec: MeasurementSpec,
    ybus: AdmittanceMatrix | None = None,
    plan: "MeasurementPlan | None" = None,
) -> MeasurementVector:
    """Noiseless measurement vector h(x) for every channel in the spec."""
    if plan is not None:
        return _evaluate_h_planned(state, network, plan, ybus)
    v = state.phasors()
    injections = None
    branch_cache: dict[int, tuple] = {}
    # Several meters can share one physical quantity; compute each unique
    # (kind, element, phase) once and reuse the value for duplicates.
    row_cache: dict[tuple, float] = {}
    values = np.empty(spec.n_channels)
    for row, ch in enumerate(spec.channels):
        key = (ch.kind, ch.element, ch.phase)
        if key in row_cache:
            values[row] = row_cache[key]
            continue
        if ch.kind in _INJECTION_KINDS:
            if injections is None:
                y = (ybus or build_ybus(network)).matrix
                injections = v * np.conj(y @ v)
                ybus = ybus or None
            s = injections[network.index_of(ch.element, ch.phase)]
            values[row] = s.real if ch.kind == "pinj" else s.imag
        else:
            if ch.element not in branch_cache:
                branch_cache[ch.element] = _branch_current(network, ch.element, v)
            current, fi, _ = branch_cache[ch.element]
            k = _phase_position(network, ch.element, ch.phase)
            if ch.kind == "imag":
                values[row] = abs(current[k])
            else:
                flow = v[fi[k]] * np.conj(current[k])
                values[row] = flow.real if ch.kind == "pflow" else flow.imag
        row_cache[key] = values[row]
    return MeasurementVector(values)


def measurement_jacobian(
    state: StateVector,
    network: Network,
    spec: MeasurementSpec,
    ybus: AdmittanceMatrix | None = None,
    plan: "MeasurementPlan | None" = None,
) -> np.ndarray:
    """Analytic dh/dx as an (M x 2n) real matrix.

    Column ordering: d/d(theta_i) for every bus-phase i in canonical order,
    then d/d(V_i) in the same order. Slack coordinates are included; callers
    doing estimation slice out the non-slack columns.
    """
    if plan is not None:
        return _jacobian_planned(state, network, plan, ybus)
    n = network.n_bus_phases
    v = state.phasors()
    unit = np.exp(1j * state.va)
    y = None
    bus_current = None
    jac = np.zeros((spec.n_channels, 2 * n))
    branch_cache: dict[int, tuple] = {}
    # Duplicate meters on one quantity share an identical row.
    row_cache: dict[tuple, int] = {}
    for row, ch in enumerate(spec.channels):
        key = (ch.kind, ch.element, ch.phase)
        if key in row_cache:
            jac[row] = jac[row_cache[key]]
            continue
        row_cache[key] = row
        if ch.kind in _INJECTION_KINDS:
            if y is None:
                y = (ybus or build_ybus(network)).matrix
                bus_current = y @ v
            a = network.index_of(ch.element, ch.phase)
            yv = y[a, :] * v
            d_theta = -1j * v[a] * np.conj(yv)
            d_theta[a] += 1j * v[a] * np.conj(bus_current[a])
            d_vm = v[a] * np.conj(y[a, :] * unit)
            d_vm[a] += unit[a] * np.conj(bus_current[a])
            if ch.kind == "pinj":
                jac[row, :n] = d_theta.real
                jac[row, n:] = d_vm.real
            else:
                jac[row, :n] = d_theta.imag
                jac[row, n:] = d_vm.imag
            continue
        if ch.element not in branch_cache:
            branch_cache[ch.element] = _branch_current(network, ch.element, v)
        current, fi, ti = branch_cache[ch.element]
        br = network.branches[ch.element]
        k = _phase_position(network, ch.element, ch.phase)
        a = fi[k]
        y_from = br.series[k, :].copy()
        if br.shunt_from is not None:
            y_from += br.shunt_from[k, :]
        y_to = -br.series[k, :]
        # dI_k/dtheta and dI_k/dV at each endpoint coordinate.
        di_theta_f = y_from * 1j * v[fi]
        di_theta_t = y_to * 1j * v[ti]
        di_vm_f = y_from * unit[fi]
        di_vm_t = y_to * unit[ti]
        if ch.kind == "imag":
            mag = abs(current[k])
            if mag == 0.0:
                continue  # open branch: channel is constant, row stays zero
            scale = np.conj(current[k]) / mag
            jac[row, fi] += (scale * di_theta_f).real
            jac[row, ti] += (scale * di_theta_t).real
            jac[row, n + fi] += (scale * di_vm_f).real
            jac[row, n + ti] += (scale * di_vm_t).real
            continue
        # Complex flow derivative: dS = d(v_a) conj(I) + v_a conj(dI).
        ds_theta_f = v[a] * np.conj(di_theta_f)
        ds_theta_t = v[a] * np.conj(di_theta_t)
        ds_vm_f = v[a] * np.conj(di_vm_f)
        ds_vm_t = v[a] * np.conj(di_vm_t)
        ds_theta_f[k] += 1j * v[a] * np.conj(current[k])
        ds_vm_f[k] += unit[a] * np.conj(current[k])
        if ch.kind == "pflow":
            jac[row, fi] += ds_theta_f.real
            jac[row, ti] += ds_theta_t.real
            jac[row, n + fi] += ds_vm_f.real
            jac[row, n + ti] += ds_vm_t.real
        else:
            jac[row, fi] += ds_theta_f.imag
            jac[row, ti] += ds_theta_t.imag
            jac[row, n + fi] += ds_vm_f.imag
            jac[row, n + ti] += ds_vm_t.imag
    return jac


@dataclass
class MeasurementPlan:
    """Index arrays for repeated vectorized evaluation of one spec.

    Iterative solvers evaluate the same channel list at every iterate;
    gathering endpoint indices and branch admittance scalars once lets h
    and its Jacobian run as whole-array expressions. Only specs whose
    branch channels sit on single-phase branches qualify; callers get
    None otherwise and fall back to the per-channel loop.
    """

    n_channels: int
    inj_rows: np.ndarray
    inj_bus: np.ndarray
    inj_reactive: np.ndarray
    br_rows: np.ndarray
    br_kind: np.ndarray
    f_idx: np.ndarray
    t_idx: np.ndarray
    y_from: np.ndarray
    y_to: np.ndarray


def build_measurement_plan(network: Network, spec: MeasurementSpec) -> MeasurementPlan | None:
    inj_rows, inj_bus, inj_reactive = [], [], []
    br_rows, br_kind, f_idx, t_idx, y_from, y_to = [], [], [], [], [], []
    kinds = {"imag": 0, "pflow": 1, "qflow": 2}
    for row, ch in enumerate(spec.channels):
        if ch.kind in _INJECTION_KINDS:
            inj_rows.append(row)
            inj_bus.append(network.index_of(ch.element, ch.phase))
            inj_reactive.append(ch.kind == "qinj")
            continue
        br = network.branches[ch.element]
        if br.series.shape != (1, 1):
            return None
        fi = network.phase_indices(br.from_bus)
        ti = network.phase_indices(br.to_bus)
        if fi.size != 1 or ti.size != 1:
            return None
        series = br.series[0, 0]
        shunt = br.shunt_from[0, 0] if br.shunt_from is not None else 0.0
        br_rows.append(row)
        br_kind.append(kinds[ch.kind])
        f_idx.append(fi[0])
        t_idx.append(ti[0])
        y_from.append(series + shunt)
        y_to.append(-series)
    return MeasurementPlan(
        n_channels=spec.n_channels,
        inj_rows=np.array(inj_rows, dtype=int),
        inj_bus=np.array(inj_bus, dtype=int),
        inj_reactive=np.array(inj_reactive, dtype=bool),
        br_rows=np.array(br_rows, dtype=int),
        br_kind=np.array(br_kind, dtype=int),
        f_idx=np.array(f_idx, dtype=int),
        t_idx=np.array(t_idx, dtype=int),
        y_from=np.array(y_from, dtype=complex),
        y_to=np.array(y_to, dtype=complex),
    )


def _evaluate_h_planned(
    state: StateVector,
    network: Network,
    plan: MeasurementPlan,
    ybus: AdmittanceMatrix | None,
) -> MeasurementVector:
    v = state.phasors()
    values = np.empty(plan.n_channels)
    if plan.inj_rows.size:
        y = (ybus or build_ybus(network)).matrix
        s = (v * np.conj(y @ v))[plan.inj_bus]
        values[plan.inj_rows] = np.where(plan.inj_reactive, s.imag, s.real)
    if plan.br_rows.size:
        current = plan.y_from * v[plan.f_idx] + plan.y_to * v[plan.t_idx]
        out = np.empty(plan.br_rows.size)
        mag = plan.br_kind == 0
        out[mag] = np.abs(current[mag])
        if np.any(~mag):
            flow = v[plan.f_idx] * np.conj(current)
            pm = plan.br_kind == 1
            qm = plan.br_kind == 2
            out[pm] = flow[pm].real
            out[qm] = flow[qm].imag
        values[plan.br_rows] = out
    return MeasurementVector(values)


def _jacobian_planned(
    state: StateVector,
    network: Network,
    plan: MeasurementPlan,
    ybus: AdmittanceMatrix | None,
) -> np.ndarray:
    n = network.n_bus_phases
    v = state.phasors()
    unit = np.exp(1j * state.va)
    jac = np.zeros((plan.n_channels, 2 * n))
    if plan.inj_rows.size:
        y = (ybus or build_ybus(network)).matrix
        ds_dtheta, ds_dvm = _injection_jacobian(v, y, y @ v)
        rt = ds_dtheta[plan.inj_bus]
        rv = ds_dvm[plan.inj_bus]
        react = plan.inj_reactive[:, None]
        jac[plan.inj_rows, :n] = np.where(react, rt.imag, rt.real)
        jac[plan.inj_rows, n:] = np.where(react, rv.imag, rv.real)
    if plan.br_rows.size:
        f, t = plan.f_idx, plan.t_idx
        current = plan.y_from * v[f] + plan.y_to * v[t]
        di_theta_f = plan.y_from * 1j * v[f]
        di_theta_t = plan.y_to * 1j * v[t]
        di_vm_f = plan.y_from * unit[f]
        di_vm_t = plan.y_to * unit[t]
        mag = plan.br_kind == 0
        if np.any(mag):
            absI = np.abs(current[mag])
            # Open branches carry a constant zero reading; their rows stay
            # zero just like the per-channel path leaves them.
            scale = np.where(absI > 0.0, np.conj(current[mag]) / np.where(absI > 0.0, absI, 1.0), 0.0)
            r = plan.br_rows[mag]
            jac[r, f[mag]] = (scale * di_theta_f[mag]).real
            jac[r, t[mag]] = (scale * di_theta_t[mag]).real
            jac[r, n + f[mag]] = (scale * di_vm_f[mag]).real
            jac[r, n + t[mag]] = (scale * di_vm_t[mag]).real
        if np.any(~mag):
            vf = v[f]
            ds_theta_f = vf * np.conj(di_theta_f) + 1j * vf * np.conj(current)
            ds_theta_t = vf * np.conj(di_theta_t)
            ds_vm_f = vf * np.conj(di_vm_f) + unit[f] * np.conj(current)
            ds_vm_t = vf * np.conj(di_vm_t)
            for kind_val, part in ((1, "real"), (2, "imag")):
                m = plan.br_kind == kind_val
                if not np.any(m):
                    continue
                r = plan.br_rows[m]
                jac[r, f[m]] = getattr(ds_theta_f[m], part)
                jac[r, t[m]] = getattr(ds_theta_t[m], part)
                jac[r, n + f[m]] = getattr(ds_vm_f[m], part)
                jac[r, n + t[m]] = getattr(ds_vm_t[m], part)
    return jac


def _injection_jacobian(v: np.ndarray, y: np.ndarray, bus_current: np.ndarray):
    """Vectorized dS/dtheta and dS/dVm over all bus-phases (polar NR blocks)."""
    diag_v = np.diag(v)
    diag_i = np.diag(bus_current)
    diag_unit = np.diag(v / np.abs(v))
    ds_dtheta = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
    ds_dvm = diag_v @ np.conj(y @ diag_unit) + np.conj(diag_i) @ diag_unit
    return ds_dtheta, ds_dvm


@dataclass(frozen=True)
class PowerFlowResult:
    state: StateVector
    iterations: int
    max_mismatch: float


def solve_powerflow(
    network: Network,
    injections: InjectionVector,
    tol: float = 1e-8,
    max_iter: int = 50,
    x0: StateVector | None = None,
    slack_vm: float = 1.0,
    ybus: AdmittanceMatrix | None = None,
) -> PowerFlowResult:
    """Newton-Raphson in polar form with the full analytic Jacobian.

    Slack phases are pinned at (slack_vm, reference angle); every other
    bus-phase is PQ with its target from `injections`. Convergence is
    max per-phase |S_computed - s| < tol. Raises SingularJacobianError or
    PowerFlowConvergenceError on failure.
    """
    ns = network.nonslack_indices
    if injections.n != ns.size:
        raise ValueError(f"injection vector has {injections.n} entries, expected {ns.size}")
    y = (ybus or build_ybus(network)).matrix
    state = x0 if x0 is not None else flat_state(network, slack_vm)
    vm = state.vm.copy()
    va = state.va.copy()
    target = injections.complex_power()
    k = ns.size
    for iteration in range(max_iter + 1):
        v = vm * np.exp(1j * va)
        bus_current = y @ v
        s = v * np.conj(bus_current)
        mismatch = s[ns] - target
        max_mismatch = float(np.max(np.abs(mismatch))) if k else 0.0
        if not np.isfinite(max_mismatch):
            raise PowerFlowConvergenceError("iterates diverged", max_mismatch)
        if max_mismatch < tol:
            return PowerFlowResult(StateVector(vm=vm, va=va), iteration, max_mismatch)
        if iteration == max_iter:
            break
        ds_dtheta, ds_dvm = _injection_jacobian(v, y, bus_current)
        jac = np.empty((2 * k, 2 * k))
        jac[:k, :k] = ds_dtheta[np.ix_(ns, ns)].real
        jac[:k, k:] = ds_dvm[np.ix_(ns, ns)].real
        jac[k:, :k] = ds_dtheta[np.ix_(ns, ns)].imag
        jac[k:, k:] = ds_dvm[np.ix_(ns, ns)].imag
        rhs = np.concatenate([mismatch.real, mismatch.imag])
        try:
            step = np.linalg.solve(jac, -rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular power flow Jacobian: {exc}") from exc
        va[ns] += step[:k]
        vm[ns] += step[k:]
        if np.any(vm <= 0):
            # A collapsed magnitude means the iteration left the physical
            # region; report it as divergence rather than a math error.
            raise PowerFlowConvergenceError("voltage magnitude collapsed", max_mismatch)
    raise PowerFlowConvergenceError(f"no convergence in {max_iter} iterations", max_mismatch)


def branch_currents(state: StateVector, network: Network) -> np.ndarray:
    """From-end complex currents for every branch, stacked per branch phase."""
    v = state.phasors()
    rows = []
    for idx in range(len(network.branches)):
        current, _, _ = _branch_current(network, idx, v)
        rows.append(current)
    return np.concatenate(rows) if rows else np.empty(0, dtype=complex)


def total_injections(state: StateVector, network: Network, ybus: AdmittanceMatrix | None = None) -> np.ndarray:
    """Complex net injection at every bus-phase (slack included)."""
    v = state.phasors()
    y = (ybus or build_ybus(network)).matrix
    return v * np.conj(y @ v)
