"""Weighted least squares baselines with pseudo-measurements.

An unobservable feeder cannot be solved by WLS alone; the classical remedy
appends low-weight pseudo injection measurements at every non-slack
bus-phase, forecast either by averaging recent meter history (WLS-p) or by
a small regression network mapping history windows to injections
(WLS-nnp). The solver itself is damped Gauss-Newton on the weighted
residual norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Network, build_ybus
from .mlp import MLP, Scaler, forward
from .powerflow import (
    Channel,
    MeasurementSpec,
    MeasurementVector,
    StateVector,
    build_measurement_plan,
    evaluate_h,
    flat_state,
    measurement_jacobian,
)

RANK_TOLERANCE = 1e-8


class WlsError(RuntimeError):
    """Base class for WLS failures."""


class RankDeficientError(WlsError):
    """Gauss-Newton system lost column rank at some iterate."""


class WlsConvergenceError(WlsError):
    """Iteration budget exhausted before the update norm dropped below tol."""


@dataclass(frozen=True)
class ObservabilityReport:
    observable: bool
    rank: int
    state_dim: int
    smallest_singular_value: float
    largest_singular_value: float

    @property
    def deficit(self) -> int:
        return self.state_dim - self.rank


def _estimation_columns(network: Network) -> np.ndarray:
    """Non-slack columns of the measurement Jacobian, [theta..., V...] order."""
    ns = network.nonslack_indices
    return np.concatenate([ns, network.n_bus_phases + ns])


def check_observability(network: Network, spec: MeasurementSpec) -> ObservabilityReport:
    """Numerical rank of the flat-start Jacobian against the state dimension."""
    jac = measurement_jacobian(flat_state(network), network, spec)
    jac = jac[:, _estimation_columns(network)]
    state_dim = jac.shape[1]
    sv = np.linalg.svd(jac, compute_uv=False) if jac.size else np.empty(0)
    largest = float(sv[0]) if sv.size else 0.0
    rank = int(np.sum(sv > RANK_TOLERANCE * largest)) if largest > 0 else 0
    smallest = float(sv[-1]) if sv.size else 0.0
    return ObservabilityReport(
        observable=rank == state_dim,
        rank=rank,
        state_dim=state_dim,
        smallest_singular_value=smallest,
        largest_singular_value=largest,
    )


@dataclass(frozen=True)
class WlsSolution:
    state: StateVector
    residuals: np.ndarray
    weighted_residuals: np.ndarray
    iterations: int
    objective: float
    used_channels: np.ndarray


def wls_solve(
    network: Network,
    z: MeasurementVector,
    spec: MeasurementSpec,
    weights: np.ndarray,
    x0: StateVector | None = None,
    tol: float = 1e-8,
    max_iter: int = 50,
    max_halvings: int = 10,
    slack_vm: float = 1.0,
) -> WlsSolution:
    """Damped Gauss-Newton minimization of sum_i w_i (z_i - h_i(x))^2.

    Channels with validity False are dropped from the system before
    solving. Each step solves the linearized weighted problem; if a full
    step increases the objective it is halved up to `max_halvings` times,
    and a step that still cannot decrease the objective ends the iteration
    at the current point. Convergence is an infinity-norm update below tol.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != z.values.shape:
        raise ValueError("need one weight per channel")
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    keep = z.valid.copy()
    sub_spec = spec.subset(keep)
    zv = z.values[keep]
    w = weights[keep]
    sqrt_w = np.sqrt(w)
    cols = _estimation_columns(network)
    ybus = build_ybus(network)
    plan = build_measurement_plan(network, sub_spec)
    state = x0 if x0 is not None else flat_state(network, slack_vm)
    vm = state.vm.copy()
    va = state.va.copy()
    ns = network.nonslack_indices
    k = ns.size
    iterations = 0
    objective = None
    residual = None
    for _ in range(max_iter):
        current = StateVector(vm=vm, va=va)
        residual = zv - evaluate_h(current, network, sub_spec, ybus=ybus, plan=plan).values
        objective = float(w @ (residual * residual))
        jac = measurement_jacobian(current, network, sub_spec, ybus=ybus, plan=plan)[:, cols]
        design = sqrt_w[:, None] * jac
        step, _, _, sv = np.linalg.lstsq(design, sqrt_w * residual, rcond=None)
        if sv.size == 0 or sv[0] == 0.0 or np.sum(sv > RANK_TOLERANCE * sv[0]) < 2 * k:
            raise RankDeficientError(
                "weighted Jacobian is rank deficient; system is unobservable at this iterate"
            )
        if float(np.max(np.abs(step))) < tol:
            return WlsSolution(
                state=current,
                residuals=residual,
                weighted_residuals=sqrt_w * residual,
                iterations=iterations,
                objective=objective,
                used_channels=keep,
            )
        scale = 1.0
        improved = False
        for _halving in range(max_halvings + 1):
            trial_va = va.copy()
            trial_vm = vm.copy()
            trial_va[ns] += scale * step[:k]
            trial_vm[ns] += scale * step[k:]
            if np.any(trial_vm <= 0):
                scale *= 0.5
                continue
            trial = StateVector(vm=trial_vm, va=trial_va)
            trial_residual = zv - evaluate_h(trial, network, sub_spec, ybus=ybus, plan=plan).values
            trial_objective = float(w @ (trial_residual * trial_residual))
            if trial_objective <= objective and np.isfinite(trial_objective):
                va, vm = trial_va, trial_vm
                improved = True
                break
            scale *= 0.5
        iterations += 1
        if not improved:
            # Objective cannot be decreased along the Gauss-Newton
            # direction: numerical floor reached, accept the current point.
            break
    else:
        raise WlsConvergenceError(f"no convergence in {max_iter} Gauss-Newton iterations")
    current = StateVector(vm=vm, va=va)
    residual = zv - evaluate_h(current, network, sub_spec, ybus=ybus, plan=plan).values
    return WlsSolution(
        state=current,
        residuals=residual,
        weighted_residuals=sqrt_w * residual,
        iterations=iterations,
        objective=float(w @ (residual * residual)),
        used_channels=keep,
    )


# -- pseudo-measurement forecasting --------------------------------------


@dataclass(frozen=True)
class ConsumptionHistory:
    """Recent slow-interval net-injection aggregates per non-slack bus-phase.

    `readings[i, t]` is the t-th (oldest first) aggregate of pair i; each
    aggregate sums `aggregation` fast intervals, so dividing by the
    aggregation count recovers an average per-interval injection.
    """

    pairs: tuple
    readings: np.ndarray
    aggregation: int

    def __post_init__(self):
        readings = np.atleast_2d(np.asarray(self.readings, dtype=float))
        object.__setattr__(self, "readings", readings)
        if readings.shape[0] != len(self.pairs):
            raise ValueError("one reading row per bus-phase pair required")
        if self.aggregation < 1:
            raise ValueError("aggregation must be positive")


@dataclass(frozen=True)
class PseudoMeasurementSet:
    """Forecast injection channels with their WLS weights."""

    spec: MeasurementSpec
    values: np.ndarray
    weights: np.ndarray


def _injection_channels(pairs) -> MeasurementSpec:
    channels = [Channel("pinj", bus, phase) for bus, phase in pairs]
    channels += [Channel("qinj", bus, phase) for bus, phase in pairs]
    return MeasurementSpec(tuple(channels))


def _pq_pseudo(pairs, p_values: np.ndarray, power_factor: float, weight) -> PseudoMeasurementSet:
    tan_phi = float(np.tan(np.arccos(power_factor)))
    values = np.concatenate([p_values, p_values * tan_phi])
    weights = np.broadcast_to(np.asarray(weight, dtype=float), (values.size,)).copy()
    if np.any(weights <= 0):
        raise ValueError("pseudo weights must be positive")
    return PseudoMeasurementSet(
        spec=_injection_channels(pairs),
        values=values,
        weights=weights,
    )


def pseudo_avg(
    history: ConsumptionHistory,
    window: int,
    power_factor: float = 0.95,
    weight=1.0,
) -> PseudoMeasurementSet:
    """Window-averaged history converted to per-interval P/Q pseudo injections."""
    if window < 1 or window > history.readings.shape[1]:
        raise ValueError(f"window must be in 1..{history.readings.shape[1]}")
    p = history.readings[:, -window:].mean(axis=1) / history.aggregation
    return _pq_pseudo(history.pairs, p, power_factor, weight)


def pseudo_nn(
    history: ConsumptionHistory,
    regressor: MLP,
    regressor_scaler: Scaler,
    window: int,
    power_factor: float = 0.95,
    weight=1.0,
) -> PseudoMeasurementSet:
    """Regression-forecast pseudo injections from the raw history window.

    The feature vector is the last `window` readings of every pair,
    row-major (pair-major, oldest to newest), matching the training pairs
    produced by the experiment pipeline.
    """
    if window < 1 or window > history.readings.shape[1]:
        raise ValueError(f"window must be in 1..{history.readings.shape[1]}")
    features = history.readings[:, -window:].reshape(-1)
    p = regressor_scaler.unscale_out(forward(regressor, regressor_scaler.scale_in(features)))
    return _pq_pseudo(history.pairs, p, power_factor, weight)


def augment_with_pseudo(
    spec: MeasurementSpec,
    z: MeasurementVector,
    weights: np.ndarray,
    pseudo: PseudoMeasurementSet,
) -> tuple[MeasurementSpec, MeasurementVector, np.ndarray]:
    """Append pseudo channels to a real measurement system."""
    merged_spec = MeasurementSpec(spec.channels + pseudo.spec.channels)
    merged = MeasurementVector(
        np.concatenate([z.values, pseudo.values]),
        np.concatenate([z.valid, np.ones(pseudo.values.size, dtype=bool)]),
    )
    merged_weights = np.concatenate([np.asarray(weights, dtype=float), pseudo.weights])
    return merged_spec, merged, merged_weights
