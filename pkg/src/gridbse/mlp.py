"""Feed-forward MMSE state regressor trained on Monte Carlo samples.

A plain numpy MLP (ReLU hidden layers, linear output) minimizes the mean
squared residual norm between predicted and sampled states, which makes the
trained network an approximation of the conditional mean E(x | z). Targets
exclude slack coordinates; the estimator re-attaches the pinned slack
values on output.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import SLACK_REFERENCE_ANGLES, Network
from .powerflow import MeasurementVector, StateVector
from .util import substream


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; `epoch` records where."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


class EstimationInputError(ValueError):
    """Measurement vector has invalid channels that were never imputed."""


@dataclass
class MLP:
    """Weights/biases per layer; weights[k] has shape (out_dim, in_dim)."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("bias length must match weight rows")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def hidden_widths(self) -> list[int]:
        return [w.shape[0] for w in self.weights[:-1]]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_he(dims: list[int], seed: int = 0) -> MLP:
    """He-normal initialization: W ~ N(0, 2/fan_in), biases zero."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dimensions")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases)


def forward(mlp: MLP, x: np.ndarray) -> np.ndarray:
    """ReLU hidden layers, linear output. Accepts (d,) or (n, d) input."""
    single = x.ndim == 1
    a = np.atleast_2d(np.asarray(x, dtype=float))
    last = mlp.n_layers - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = a @ w.T + b
        if k < last:
            np.maximum(a, 0.0, out=a)
    return a[0] if single else a


def forward_activations(mlp: MLP, x: np.ndarray) -> list[np.ndarray]:
    """Post-activation outputs of every hidden layer (for pruning analysis)."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    acts = []
    last = mlp.n_layers - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = a @ w.T + b
        if k < last:
            np.maximum(a, 0.0, out=a)
            acts.append(a.copy())
    return acts


def loss(mlp: MLP, x: np.ndarray, y: np.ndarray) -> float:
    """Empirical risk: mean over samples of the squared residual 2-norm."""
    pred = forward(mlp, x)
    resid = pred - np.atleast_2d(y)
    return float(np.mean(np.sum(resid * resid, axis=1)))


def backward(mlp: MLP, x: np.ndarray, y: np.ndarray):
    """Gradients of `loss` w.r.t. every weight and bias (backpropagation)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.atleast_2d(np.asarray(y, dtype=float))
    n = X.shape[0]
    last = mlp.n_layers - 1
    pre = []
    post = [X]
    a = X
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if k < last else z
        post.append(a)
    grad_w = [None] * mlp.n_layers
    grad_b = [None] * mlp.n_layers
    delta = 2.0 * (post[-1] - Y) / n
    for k in range(last, -1, -1):
        grad_w[k] = delta.T @ post[k]
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ mlp.weights[k]) * (pre[k - 1] > 0.0)
    return grad_w, grad_b


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m_w: list
    v_w: list
    m_b: list
    v_b: list
    t: int = 0

    @classmethod
    def for_model(cls, mlp: MLP) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in mlp.weights],
            v_w=[np.zeros_like(w) for w in mlp.weights],
            m_b=[np.zeros_like(b) for b in mlp.biases],
            v_b=[np.zeros_like(b) for b in mlp.biases],
        )


def adam_step(
    mlp: MLP,
    grads,
    state: AdamState,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, applied in place."""
    grad_w, grad_b = grads
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k in range(mlp.n_layers):
        for grad, m, v, param in (
            (grad_w[k], state.m_w[k], state.v_w[k], mlp.weights[k]),
            (grad_b[k], state.m_b[k], state.v_b[k], mlp.biases[k]),
        ):
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            param -= learning_rate * (m / c1) / (np.sqrt(v / c2) + epsilon)


@dataclass(frozen=True)
class Scaler:
    """Feature/target standardization fitted on the training set."""

    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "Scaler":
        return cls(
            in_mean=x.mean(axis=0),
            in_std=np.maximum(x.std(axis=0), 1e-12),
            out_mean=y.mean(axis=0),
            out_std=np.maximum(y.std(axis=0), 1e-12),
        )

    def scale_in(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean) / self.in_std

    def scale_out(self, y: np.ndarray) -> np.ndarray:
        return (y - self.out_mean) / self.out_std

    def unscale_out(self, y: np.ndarray) -> np.ndarray:
        return y * self.out_std + self.out_mean

    def to_json(self) -> dict:
        return {
            "in_mean": self.in_mean.tolist(),
            "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_std": self.out_std.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Scaler":
        return cls(*(np.array(doc[k], dtype=float) for k in ("in_mean", "in_std", "out_mean", "out_std")))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0


@dataclass
class TrainReport:
    """Per-epoch losses (scaled space) plus stopping bookkeeping."""

    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    wall_seconds: float = 0.0


def train(
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    hidden: list[int],
    config: TrainConfig = TrainConfig(),
    initial: MLP | None = None,
    scaler: Scaler | None = None,
):
    """Train an MLP on raw (unscaled) inputs and targets.

    Fits a standardizing Scaler on the training split (unless one is
    supplied), runs mini-batch Adam with per-epoch reshuffling, and keeps
    the weights from the epoch with the lowest validation loss. Stops once
    max(patience, 1) consecutive epochs fail to improve validation loss.
    Returns (mlp, scaler, report).
    """
    started = time.perf_counter()
    train_x = np.atleast_2d(train_x)
    train_y = np.atleast_2d(train_y)
    if scaler is None:
        scaler = Scaler.fit(train_x, train_y)
    xtr = scaler.scale_in(train_x)
    ytr = scaler.scale_out(train_y)
    xva = scaler.scale_in(np.atleast_2d(val_x))
    yva = scaler.scale_out(np.atleast_2d(val_y))
    dims = [xtr.shape[1]] + list(hidden) + [ytr.shape[1]]
    mlp = initial.copy() if initial is not None else init_he(dims, config.seed)
    adam = AdamState.for_model(mlp)
    report = TrainReport()
    best_val = np.inf
    best_weights = mlp.copy()
    stall = 0
    n = xtr.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = substream(config.seed, "shuffle", epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            grads = backward(mlp, xtr[batch], ytr[batch])
            adam_step(
                mlp,
                grads,
                adam,
                learning_rate=config.learning_rate,
                beta1=config.beta1,
                beta2=config.beta2,
                epsilon=config.epsilon,
            )
        train_loss = loss(mlp, xtr, ytr)
        val_loss = loss(mlp, xva, yva)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(epoch)
        report.train_losses.append(train_loss)
        report.val_losses.append(val_loss)
        report.stopped_epoch = epoch
        if val_loss < best_val:
            best_val = val_loss
            best_weights = mlp.copy()
            report.best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall >= max(config.patience, 1):
                break
    mlp.weights = best_weights.weights
    mlp.biases = best_weights.biases
    report.wall_seconds = time.perf_counter() - started
    return mlp, scaler, report


# -- state/target layout -------------------------------------------------


def target_columns(network: Network) -> np.ndarray:
    """Columns of the flattened state that form the regression target.

    The flattened state is [vm..., va...] over all bus-phases; targets drop
    the slack coordinates from both halves.
    """
    ns = network.nonslack_indices
    n = network.n_bus_phases
    return np.concatenate([ns, n + ns])


def states_to_targets(states: np.ndarray, network: Network) -> np.ndarray:
    return np.atleast_2d(states)[:, target_columns(network)]


def targets_to_state(target: np.ndarray, network: Network, slack_vm: float = 1.0) -> StateVector:
    n = network.n_bus_phases
    ns = network.nonslack_indices
    k = ns.size
    vm = np.empty(n)
    va = np.empty(n)
    vm[network.slack_indices] = slack_vm
    for i in network.slack_indices:
        va[i] = SLACK_REFERENCE_ANGLES[network.bus_phase_pairs[i][1]]
    vm[ns] = target[:k]
    va[ns] = target[k:]
    return StateVector(vm=vm, va=va)


def estimate(
    mlp: MLP,
    scaler: Scaler,
    z: MeasurementVector,
    network: Network,
    slack_vm: float = 1.0,
) -> StateVector:
    """MMSE state estimate for one measurement vector.

    Invalid (missing) channels must be imputed first; feeding them raw
    raises EstimationInputError.
    """
    if not z.valid.all():
        raise EstimationInputError("measurement vector has un-imputed invalid channels")
    y = forward(mlp, scaler.scale_in(z.values))
    return targets_to_state(scaler.unscale_out(y), network, slack_vm)


class Estimator:
    """Cached single-measurement estimator for deployment-style inference.

    Precomputes scaler arrays and the slack re-attachment template so each
    call is just the affine scaling plus the layer matmuls.
    """

    def __init__(self, mlp: MLP, scaler: Scaler, network: Network, slack_vm: float = 1.0):
        self._weights = [w.copy() for w in mlp.weights]
        self._biases = [b.copy() for b in mlp.biases]
        self._in_mean = scaler.in_mean.copy()
        self._in_inv = 1.0 / scaler.in_std
        self._out_mean = scaler.out_mean.copy()
        self._out_std = scaler.out_std.copy()
        self._n = network.n_bus_phases
        self._ns = network.nonslack_indices.copy()
        template = targets_to_state(np.zeros(2 * self._ns.size), network, slack_vm)
        self._vm_template = template.vm.copy()
        self._va_template = template.va.copy()
        self._last = len(self._weights) - 1

    def __call__(self, values: np.ndarray) -> StateVector:
        a = (values - self._in_mean) * self._in_inv
        for k, (w, b) in enumerate(zip(self._weights, self._biases)):
            a = w @ a + b
            if k < self._last:
                np.maximum(a, 0.0, out=a)
        y = a * self._out_std + self._out_mean
        vm = self._vm_template.copy()
        va = self._va_template.copy()
        half = self._ns.size
        vm[self._ns] = y[:half]
        va[self._ns] = y[half:]
        return StateVector(vm=vm, va=va)


# -- model persistence ---------------------------------------------------


def save_model(mlp: MLP, scaler: Scaler, prefix, seed: int = 0, config_hash: str = "") -> None:
    """Write <prefix>.json (manifest) and <prefix>.bin (parameters).

    Binary layout: little-endian float64, layer-major, each layer's weight
    matrix in row-major order followed by its bias vector.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "dims": mlp.dims,
        "activations": ["relu"] * (mlp.n_layers - 1) + ["linear"],
        "scaler": scaler.to_json(),
        "seed": seed,
        "config_hash": config_hash,
        "format": {"dtype": "<f8", "layout": "layer-major; row-major weights then bias"},
    }
    with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    chunks = []
    for w, b in zip(mlp.weights, mlp.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").ravel())
        chunks.append(np.ascontiguousarray(b, dtype="<f8"))
    with open(prefix.with_suffix(".bin"), "wb") as handle:
        np.concatenate(chunks).astype("<f8").tofile(handle)


def load_model(prefix):
    """Read a model pair written by save_model; returns (mlp, scaler, manifest)."""
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json"), "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    dims = manifest["dims"]
    flat = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
    expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    if flat.size != expected:
        raise ValueError(f"binary holds {flat.size} values, manifest implies {expected}")
    weights = []
    biases = []
    cursor = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[cursor : cursor + fan_out * fan_in].reshape(fan_out, fan_in).copy())
        cursor += fan_out * fan_in
        biases.append(flat[cursor : cursor + fan_out].copy())
        cursor += fan_out
    return MLP(weights, biases), Scaler.from_json(manifest["scaler"]), manifest
