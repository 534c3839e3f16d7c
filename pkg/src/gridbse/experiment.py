"""End-to-end experiment orchestration.

Wires the pipeline together for one JSON config: scenario distributions,
Monte Carlo sampling, estimator training, the two pseudo-measurement WLS
baselines, bad-data injection and filtering, and a deterministic report.

Artifacts written per run: `report.json`, `ase.csv`, `detection.csv`,
`epochs.csv` (all byte-reproducible for a fixed config and seed), plus
`timing.csv` and rendered figures, which carry wall-clock content and are
excluded from the reproducibility contract.
"""
from __future__ import annotations

import csv
import json
import math
import time
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baddata import (
    WaldConfig,
    detection_probability,
    estimate_h0_stats,
    filter_bad,
    jx_test,
    wald_detect,
)
from .grid import Network, load_network_file
from .injections import GaussianMixture
from .mlp import (
    MLP,
    Estimator,
    Scaler,
    TrainConfig,
    forward,
    load_model,
    save_model,
    states_to_targets,
    train,
)
from .powerflow import (
    Channel,
    InjectionVector,
    MeasurementSpec,
    MeasurementVector,
    PowerFlowError,
    evaluate_h,
    flat_state,
    solve_powerflow,
)
from .pruning import prune_retrain_loop, write_pruning_report
from .sampling import (
    BadDataConfig,
    NoiseModel,
    ScenarioDistributions,
    generate_training_set,
    inject_bad_data,
    inject_missing,
)
from .util import config_hash, derive_seed, substream
from .wls import (
    WlsError,
    _pq_pseudo,
    augment_with_pseudo,
    check_observability,
    wls_solve,
)

METHODS = ("bsednn", "wlsp", "wlsnnp")
CASES = ("clean", "corrupted", "filtered")

DETERMINISTIC_FILES = ("report.json", "ase.csv", "detection.csv", "epochs.csv")


class ExperimentError(RuntimeError):
    """Pipeline failure, tagged with the stage that raised it."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(f"{name}: {exc}") from exc


# -- ASE ------------------------------------------------------------------


@dataclass(frozen=True)
class AseResult:
    """Average squared estimation error with its normalization recorded."""

    ase: float
    runs: int
    coords: int

    def to_json(self) -> dict:
        return {"ase": self.ase, "runs": self.runs, "coords": self.coords}


def _ase_from_arrays(estimates: np.ndarray, truths: np.ndarray) -> AseResult:
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.atleast_2d(np.asarray(truths, dtype=float))
    if est.shape != tru.shape:
        raise ValueError(f"estimate block {est.shape} does not match truth block {tru.shape}")
    if est.size == 0:
        raise ValueError("need at least one run")
    m, n = est.shape
    total = float(np.sum((est - tru) ** 2))
    return AseResult(ase=total / (m * n), runs=m, coords=n)


def compute_ase(estimates, truths) -> AseResult:
    """Mean squared state error per run and per state coordinate.

    Both voltage magnitudes and angles enter the norm; the denominator is
    (number of runs) x (number of state coordinates), and both counts are
    carried alongside the value.
    """
    if len(estimates) != len(truths):
        raise ValueError(f"{len(estimates)} estimates vs {len(truths)} truths")
    est = [np.asarray(s.flatten() if hasattr(s, "flatten") else s, dtype=float) for s in estimates]
    tru = [np.asarray(s.flatten() if hasattr(s, "flatten") else s, dtype=float) for s in truths]
    sizes = {a.size for a in est} | {a.size for a in tru}
    if len(sizes) != 1:
        raise ValueError("estimates and truths must share one state layout")
    return _ase_from_arrays(np.vstack(est), np.vstack(tru))


# -- configuration --------------------------------------------------------

DEFAULTS = {
    "noise": {"sigma0": "auto"},
    "samples": {"train": 2000, "val": 1000, "test": 1000},
    "estimator": {
        "hidden_layers": 5,
        "width": 64,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "max_epochs": 150,
        "patience": 15,
        "imputation_rate": 0.0,
        "outlier_rate": 0.0,
        "slack_vm": 1.0,
    },
    "pruning": {
        "enabled": False,
        "threshold": 0.1,
        "max_rounds": 6,
        "retrain_epochs": 40,
        "retrain_patience": 5,
    },
    "baselines": {
        "window": 8,
        "aggregation": 4,
        "pseudo_sigma": {"ratio": 10.0},
        "regressor_width": 32,
        "regressor_epochs": 60,
        "regressor_samples": None,
    },
    "detection": {"alpha": 0.03},
    "benchmark": {"trials": 0},
    "wls": {"tol": 1e-8, "max_iter": 50},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _mixture(doc) -> GaussianMixture:
    if isinstance(doc, GaussianMixture):
        return doc
    return GaussianMixture.from_json(doc)


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ExperimentError(f"config: {what} '{path}' does not exist")
    return path


def _load_mixture_file(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    mixtures = doc.get("mixtures", doc)
    out = {}
    for key, mixdoc in mixtures.items():
        parsed = _mixture(mixdoc)
        out["default" if key == "default" else int(key)] = parsed
    return out


@dataclass(frozen=True)
class HourConfig:
    """One hour-of-day scenario: who consumes and generates what."""

    name: str
    load: object
    generation: dict
    power_factor: float


def _parse_hour(doc: dict, base_dir: Path) -> HourConfig:
    name = doc.get("name")
    if not name:
        raise ExperimentError("config: every hour needs a name")
    load_doc = doc.get("load")
    if load_doc is None:
        raise ExperimentError(f"config: hour '{name}' has no load model")
    if "weights" in load_doc:
        load = _mixture(load_doc)
    else:
        load = {}
        if "file" in load_doc:
            load.update(_load_mixture_file(_require_file(base_dir / load_doc["file"], "load file")))
        if "default" in load_doc:
            load["default"] = _mixture(load_doc["default"])
        for bus, mixdoc in load_doc.get("per_bus", {}).items():
            load[int(bus)] = _mixture(mixdoc)
        if not load:
            raise ExperimentError(f"config: hour '{name}' load model is empty")
    gen_doc = doc.get("generation") or {}
    generation = {}
    if "buses" in gen_doc:
        shared = _mixture(gen_doc["mixture"])
        for bus in gen_doc["buses"]:
            generation[int(bus)] = shared
    for bus, mixdoc in gen_doc.get("per_bus", {}).items():
        generation[int(bus)] = _mixture(mixdoc)
    return HourConfig(
        name=str(name),
        load=load,
        generation=generation,
        power_factor=float(doc.get("power_factor", 0.95)),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description, one JSON document per run."""

    doc: dict = field(repr=False)
    base_dir: Path
    network: str
    seed: int
    hours: tuple
    measurements: dict
    noise: dict
    bad_data: dict | None
    samples: dict
    estimator: dict
    pruning: dict
    baselines: dict
    detection: dict
    benchmark: dict
    wls: dict
    out: str | None

    @property
    def hash(self) -> str:
        return config_hash(self.doc)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        if seed == self.seed:
            return self
        doc = dict(self.doc)
        doc["seed"] = int(seed)
        return parse_config(doc, self.base_dir)

    @property
    def cases(self) -> tuple:
        return CASES if self.bad_data is not None else ("clean",)


def parse_config(doc: dict, base_dir) -> ExperimentConfig:
    base_dir = Path(base_dir)
    if "network" not in doc:
        raise ExperimentError("config: 'network' is required")
    if "seed" not in doc:
        raise ExperimentError("config: an explicit 'seed' is required")
    if not doc.get("hours"):
        raise ExperimentError("config: at least one hour scenario is required")
    merged = _deep_merge(DEFAULTS, {k: v for k, v in doc.items() if k != "hours"})
    hours = tuple(_parse_hour(h, base_dir) for h in doc["hours"])
    names = [h.name for h in hours]
    if len(set(names)) != len(names):
        raise ExperimentError("config: hour names must be unique")
    samples = merged["samples"]
    for split in ("train", "val", "test"):
        if int(samples.get(split, 0)) < 1:
            raise ExperimentError(f"config: samples.{split} must be at least 1")
    bad = merged.get("bad_data")
    if bad is not None:
        for key in ("eta", "ratio"):
            if key not in bad:
                raise ExperimentError(f"config: bad_data.{key} is required")
    network = str(doc["network"])
    if not network.startswith("builtin:"):
        _require_file(base_dir / network, "network file")
    mcfg = merged.get("measurements") or {}
    if not any(k in mcfg for k in ("channels", "branches", "current_fraction")):
        raise ExperimentError("config: measurements needs channels, branches, or current_fraction")
    return ExperimentConfig(
        doc=doc,
        base_dir=base_dir,
        network=network,
        seed=int(doc["seed"]),
        hours=hours,
        measurements=mcfg,
        noise=merged["noise"],
        bad_data=bad,
        samples={k: int(samples[k]) for k in ("train", "val", "test")},
        estimator=merged["estimator"],
        pruning=merged["pruning"],
        baselines=merged["baselines"],
        detection=merged["detection"],
        benchmark=merged["benchmark"],
        wls=merged["wls"],
        out=merged.get("out"),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    return parse_config(doc, path.parent)


def resolve_network(cfg: ExperimentConfig) -> Network:
    if cfg.network.startswith("builtin:"):
        from importlib.resources import files

        name = cfg.network.split(":", 1)[1]
        resource = files("gridbse") / "data" / f"{name}.json"
        if not resource.is_file():
            raise ExperimentError(f"config: no builtin network named '{name}'")
        return load_network_file(str(resource))
    return load_network_file(cfg.base_dir / cfg.network)


# -- measurement placement ------------------------------------------------


def bfs_branch_order(network: Network) -> list[int]:
    """Branch indices in breadth-first discovery order from the slack bus.

    Instrumenting a prefix of this order puts meters on the trunk first,
    which is where current magnitudes summarize the most downstream load.
    """
    adjacency = {}
    for idx, br in enumerate(network.branches):
        adjacency.setdefault(br.from_bus, []).append((idx, br.to_bus))
        adjacency.setdefault(br.to_bus, []).append((idx, br.from_bus))
    order = []
    seen_branches = set()
    seen_buses = {network.slack_id}
    queue = deque([network.slack_id])
    while queue:
        bus = queue.popleft()
        for idx, other in sorted(adjacency.get(bus, [])):
            if idx not in seen_branches:
                seen_branches.add(idx)
                order.append(idx)
            if other not in seen_buses:
                seen_buses.add(other)
                queue.append(other)
    return order


def _branch_index(network: Network, token) -> int:
    if isinstance(token, int):
        if not 0 <= token < len(network.branches):
            raise ExperimentError(f"config: branch index {token} out of range")
        return token
    pair = str(token).split("-")
    if len(pair) != 2:
        raise ExperimentError(f"config: branch '{token}' is not 'from-to'")
    fr, to = int(pair[0]), int(pair[1])
    for idx, br in enumerate(network.branches):
        if br.from_bus == fr and br.to_bus == to:
            return idx
    known = ", ".join(f"{b.from_bus}-{b.to_bus}" for b in network.branches)
    raise ExperimentError(f"config: no branch '{token}' (have: {known})")


def build_measurement_spec(network: Network, mcfg: dict) -> MeasurementSpec:
    """Assemble the channel list from an explicit spec or a placement rule."""
    if "channels" in mcfg:
        channels = []
        for entry in mcfg["channels"]:
            element = entry["element"]
            if entry["kind"] in ("pflow", "qflow", "imag"):
                element = _branch_index(network, element)
            channels.append(Channel(entry["kind"], int(element), int(entry.get("phase", 1))))
        spec = MeasurementSpec(tuple(channels))
        spec.validate(network)
        return spec
    channels = []
    if mcfg.get("include_slack_pq", True):
        slack = network.bus(network.slack_id)
        for phase in slack.phases:
            channels.append(Channel("pinj", network.slack_id, phase))
            channels.append(Channel("qinj", network.slack_id, phase))
    if "branches" in mcfg:
        selected = [_branch_index(network, token) for token in mcfg["branches"]]
    else:
        fraction = float(mcfg["current_fraction"])
        if not 0.0 < fraction <= 1.0:
            raise ExperimentError("config: current_fraction must be in (0, 1]")
        order = bfs_branch_order(network)
        selected = order[: math.ceil(fraction * len(order))]
    meters = int(mcfg.get("meters_per_branch", 1))
    if meters < 1:
        raise ExperimentError("config: meters_per_branch must be at least 1")
    for idx in selected:
        br = network.branches[idx]
        for phase in network.bus(br.from_bus).phases:
            # Lines instrumented at both ends carry one meter per end;
            # in a series branch model those read the same quantity
            # through independent sensors.
            for _ in range(meters):
                channels.append(Channel("imag", idx, phase))
    if not channels:
        raise ExperimentError("config: measurement placement selected no channels")
    spec = MeasurementSpec(tuple(channels))
    spec.validate(network)
    return spec


def build_hour_distributions(network: Network, hour: HourConfig) -> ScenarioDistributions:
    return ScenarioDistributions.build(
        network,
        hour.load,
        generation=hour.generation,
        power_factor=hour.power_factor,
    )


def _noise_model(
    cfg: ExperimentConfig,
    network: Network,
    dists: ScenarioDistributions,
    spec: MeasurementSpec,
) -> NoiseModel:
    rel = cfg.noise.get("relative")
    if rel is not None:
        # Meter-class accuracy: a percentage of the typical reading, which
        # is each channel's value at the mean operating point. A floor
        # keeps lightly loaded channels from becoming noise-free.
        load_mean = np.array([m.mean() for m in dists.load])
        p = dists.mean_net_injection()
        q = -load_mean * dists.tan_phi
        pf = solve_powerflow(network, InjectionVector(p, q))
        typical = evaluate_h(pf.state, network, spec).values
        floor = float(cfg.noise.get("floor", 1e-4))
        return NoiseModel(np.maximum(np.abs(typical) * float(rel), floor))
    sigma0 = cfg.noise.get("sigma0", "auto")
    if sigma0 == "auto":
        return NoiseModel.from_scenario(dists, spec)
    return NoiseModel.uniform(float(sigma0), spec.n_channels)


# -- consumption histories and pseudo forecasts ---------------------------


def _mixture_arrays(mix: GaussianMixture):
    return (
        np.asarray(mix.weights, dtype=float),
        np.asarray(mix.means, dtype=float),
        np.asarray(mix.variances, dtype=float),
    )


def sample_history_batch(
    dists: ScenarioDistributions,
    n_samples: int,
    window: int,
    aggregation: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Slow-interval net-energy readings, shape (runs, pairs, window).

    Each reading aggregates `aggregation` fast intervals that share one
    mixture component per source, so a reading is a single normal draw with
    the component's scaled moments. Components are redrawn every interval,
    which is what makes history a weak predictor of the current interval.
    """
    T = int(aggregation)
    readings = np.empty((n_samples, len(dists.pairs), window))
    for i, pair in enumerate(dists.pairs):
        lw, lm, lv = _mixture_arrays(dists.load[i])
        comp = rng.choice(lw.size, size=(n_samples, window), p=lw)
        mean = -lm[comp]
        var = lv[comp]
        gen_mix = dists.generation.get(pair)
        if gen_mix is not None:
            gw, gm, gv = _mixture_arrays(gen_mix)
            gcomp = rng.choice(gw.size, size=(n_samples, window), p=gw)
            mean = mean + gm[gcomp]
            var = var + gv[gcomp]
        readings[:, i, :] = T * mean + np.sqrt(T * var) * rng.standard_normal((n_samples, window))
    return readings


def sample_injection_batch(
    dists: ScenarioDistributions,
    n_samples: int,
    rng: np.random.Generator,
):
    """Net (P, Q) injection draws per pair, shapes (runs, pairs) each."""
    n_pairs = len(dists.pairs)
    p = np.empty((n_samples, n_pairs))
    q = np.empty((n_samples, n_pairs))
    tan_phi = dists.tan_phi
    for i, pair in enumerate(dists.pairs):
        lw, lm, lv = _mixture_arrays(dists.load[i])
        comp = rng.choice(lw.size, size=n_samples, p=lw)
        load = lm[comp] + np.sqrt(lv[comp]) * rng.standard_normal(n_samples)
        gen = np.zeros(n_samples)
        gen_mix = dists.generation.get(pair)
        if gen_mix is not None:
            gw, gm, gv = _mixture_arrays(gen_mix)
            gcomp = rng.choice(gw.size, size=n_samples, p=gw)
            gen = gm[gcomp] + np.sqrt(gv[gcomp]) * rng.standard_normal(n_samples)
        p[:, i] = gen - load
        q[:, i] = -load * tan_phi
    return p, q


def _avg_forecast(histories: np.ndarray, window: int, aggregation: int) -> np.ndarray:
    return histories[:, :, -window:].mean(axis=2) / aggregation


def _nn_forecast(histories: np.ndarray, regressor: MLP, scaler: Scaler, window: int) -> np.ndarray:
    n = histories.shape[0]
    features = histories[:, :, -window:].reshape(n, -1)
    return scaler.unscale_out(forward(regressor, scaler.scale_in(features)))


@dataclass
class PseudoCalibration:
    """Forecast channel noise levels measured on held-out draws."""

    sigma_p: np.ndarray
    sigma_q: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / np.concatenate([self.sigma_p, self.sigma_q]) ** 2


def _calibrate(p_hat: np.ndarray, p: np.ndarray, q: np.ndarray, tan_phi: float) -> PseudoCalibration:
    sigma_p = np.maximum(np.std(p_hat - p, axis=0), 1e-8)
    sigma_q = np.maximum(np.std(p_hat * tan_phi - q, axis=0), 1e-8)
    return PseudoCalibration(sigma_p=sigma_p, sigma_q=sigma_q)


def _pseudo_weights(cfg: ExperimentConfig, calibration: PseudoCalibration, noise: NoiseModel) -> np.ndarray:
    setting = cfg.baselines.get("pseudo_sigma", {"ratio": 10.0})
    if setting == "auto":
        return calibration.weights
    n = calibration.sigma_p.size + calibration.sigma_q.size
    if isinstance(setting, dict):
        sigma = float(setting["ratio"]) * float(np.mean(noise.sigma))
    else:
        sigma = float(setting)
    if sigma <= 0:
        raise ExperimentError("config: pseudo sigma must be positive")
    return np.full(n, 1.0 / sigma**2)


# -- batched estimators ---------------------------------------------------


def _state_template(network: Network, slack_vm: float) -> np.ndarray:
    return flat_state(network, slack_vm).flatten()


def _targets_to_state_rows(
    targets: np.ndarray,
    network: Network,
    slack_vm: float,
) -> np.ndarray:
    targets = np.atleast_2d(targets)
    n = network.n_bus_phases
    ns = network.nonslack_indices
    rows = np.tile(_state_template(network, slack_vm), (targets.shape[0], 1))
    rows[:, ns] = targets[:, : ns.size]
    rows[:, n + ns] = targets[:, ns.size :]
    return rows


def _bsednn_state_rows(
    mlp: MLP,
    scaler: Scaler,
    network: Network,
    values: np.ndarray,
    slack_vm: float,
) -> np.ndarray:
    targets = scaler.unscale_out(forward(mlp, scaler.scale_in(values)))
    return _targets_to_state_rows(targets, network, slack_vm)


# -- per-hour pipeline ----------------------------------------------------


@dataclass
class HourData:
    """Sampled inputs for one hour scenario."""

    hour: HourConfig
    dists: ScenarioDistributions
    noise: NoiseModel
    train_set: object
    val_set: object
    test_set: object


@dataclass
class HourModels:
    """Trained (or loaded) models for one hour scenario."""

    mlp: MLP
    scaler: Scaler
    train_report: object
    regressor: MLP
    regressor_scaler: Scaler
    regressor_report: object
    calibration_avg: PseudoCalibration
    calibration_nn: PseudoCalibration


@dataclass
class HourArtifacts:
    """Everything produced for one hour: inputs, models, and evaluation."""

    name: str
    data: HourData
    models: HourModels
    h0: object
    report: dict
    epochs_rows: list
    pruning_rounds: list | None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    network: Network
    spec: MeasurementSpec
    report: dict
    hours: list
    timings: list
    latency: object | None
    out_dir: Path | None


def _prepare_hour(
    cfg: ExperimentConfig,
    network: Network,
    spec: MeasurementSpec,
    hour: HourConfig,
    threads: int,
) -> HourData:
    with _stage(f"hour '{hour.name}' distributions"):
        dists = build_hour_distributions(network, hour)
        noise = _noise_model(cfg, network, dists, spec)
    sets = {}
    for split in ("train", "val", "test"):
        with _stage(f"hour '{hour.name}' {split} sampling"):
            sets[split] = generate_training_set(
                network,
                dists,
                spec,
                noise,
                cfg.samples[split],
                seed=derive_seed(cfg.seed, hour.name, split),
                threads=threads,
                config_hash=cfg.hash,
            )
    return HourData(
        hour=hour,
        dists=dists,
        noise=noise,
        train_set=sets["train"],
        val_set=sets["val"],
        test_set=sets["test"],
    )


def _augment_inputs(x: np.ndarray, h0, rate: float, orate: float, rng) -> np.ndarray:
    out = x
    if rate > 0.0:
        out = np.where(rng.random(x.shape) < rate, h0.mean, out)
    if orate > 0.0:
        mask = rng.random(x.shape) < orate
        shift = rng.uniform(-2.0, 2.0, x.shape) * h0.std
        out = np.where(mask, out + shift, out)
    return out


def _train_hour(cfg: ExperimentConfig, network: Network, data: HourData) -> HourModels:
    est = cfg.estimator
    hour = data.hour
    hidden = [int(est["width"])] * int(est["hidden_layers"])
    with _stage(f"hour '{hour.name}' estimator training"):
        tc = TrainConfig(
            batch_size=int(est["batch_size"]),
            learning_rate=float(est["learning_rate"]),
            max_epochs=int(est["max_epochs"]),
            patience=int(est["patience"]),
            seed=derive_seed(cfg.seed, hour.name, "estimator"),
        )
        ytr = states_to_targets(data.train_set.states, network)
        yva = states_to_targets(data.val_set.states, network)
        xtr = data.train_set.measurements
        xva = data.val_set.measurements
        rate = float(est.get("imputation_rate", 0.0))
        orate = float(est.get("outlier_rate", 0.0))
        if rate > 0.0 or orate > 0.0:
            # Deployment inputs are not pristine: the bad-data filter
            # replaces flagged channels with their climatological mean,
            # and errors inside the detector's two-sigma band slip
            # through. Expose both during training so the network learns
            # to lean on the redundant channels instead.
            h0 = estimate_h0_stats(data.train_set)
            rng = substream(derive_seed(cfg.seed, hour.name, "augment"), "mask")
            xtr = _augment_inputs(xtr, h0, rate, orate, rng)
            xva = _augment_inputs(xva, h0, rate, orate, rng)
        mlp, scaler, train_report = train(xtr, ytr, xva, yva, hidden, tc)
    with _stage(f"hour '{hour.name}' forecast regressor"):
        regressor, reg_scaler, reg_report, cal_avg, cal_nn = _train_regressor(cfg, data)
    return HourModels(
        mlp=mlp,
        scaler=scaler,
        train_report=train_report,
        regressor=regressor,
        regressor_scaler=reg_scaler,
        regressor_report=reg_report,
        calibration_avg=cal_avg,
        calibration_nn=cal_nn,
    )


def _train_regressor(cfg: ExperimentConfig, data: HourData):
    """Fit the history-to-injection regressor and calibrate both forecasts."""
    base = cfg.baselines
    window = int(base["window"])
    aggregation = int(base["aggregation"])
    count = base.get("regressor_samples") or cfg.samples["train"]
    rng = substream(derive_seed(cfg.seed, data.hour.name, "regressor"), "draws")
    histories = sample_history_batch(data.dists, count, window, aggregation, rng)
    p, q = sample_injection_batch(data.dists, count, rng)
    features = histories.reshape(count, -1)
    n_val = max(1, count // 5)
    tc = TrainConfig(
        batch_size=min(32, count - n_val),
        learning_rate=1e-3,
        max_epochs=int(base["regressor_epochs"]),
        patience=max(3, int(base["regressor_epochs"]) // 10),
        seed=derive_seed(cfg.seed, data.hour.name, "regressor-train"),
    )
    regressor, reg_scaler, reg_report = train(
        features[n_val:], p[n_val:], features[:n_val], p[:n_val], [int(base["regressor_width"])], tc
    )
    tan_phi = data.dists.tan_phi
    p_avg = _avg_forecast(histories, window, aggregation)
    p_nn = _nn_forecast(histories, regressor, reg_scaler, window)
    return (
        regressor,
        reg_scaler,
        reg_report,
        _calibrate(p_avg, p, q, tan_phi),
        _calibrate(p_nn, p, q, tan_phi),
    )


def _save_hour_models(cfg: ExperimentConfig, models: HourModels, name: str, models_dir: Path) -> None:
    models_dir.mkdir(parents=True, exist_ok=True)
    save_model(models.mlp, models.scaler, models_dir / f"bsednn_{name}", seed=cfg.seed, config_hash=cfg.hash)
    save_model(
        models.regressor,
        models.regressor_scaler,
        models_dir / f"regressor_{name}",
        seed=cfg.seed,
        config_hash=cfg.hash,
    )


def _load_hour_models(cfg: ExperimentConfig, data: HourData, models_dir: Path) -> HourModels:
    name = data.hour.name
    with _stage(f"hour '{name}' model loading"):
        mlp, scaler, _ = load_model(Path(models_dir) / f"bsednn_{name}")
        regressor, reg_scaler, _ = load_model(Path(models_dir) / f"regressor_{name}")
    with _stage(f"hour '{name}' forecast calibration"):
        base = cfg.baselines
        window = int(base["window"])
        aggregation = int(base["aggregation"])
        count = base.get("regressor_samples") or cfg.samples["train"]
        rng = substream(derive_seed(cfg.seed, name, "regressor"), "draws")
        histories = sample_history_batch(data.dists, count, window, aggregation, rng)
        p, q = sample_injection_batch(data.dists, count, rng)
        tan_phi = data.dists.tan_phi
        cal_avg = _calibrate(_avg_forecast(histories, window, aggregation), p, q, tan_phi)
        cal_nn = _calibrate(_nn_forecast(histories, regressor, reg_scaler, window), p, q, tan_phi)
    return HourModels(
        mlp=mlp,
        scaler=scaler,
        train_report=None,
        regressor=regressor,
        regressor_scaler=reg_scaler,
        regressor_report=None,
        calibration_avg=cal_avg,
        calibration_nn=cal_nn,
    )


def _build_cases(cfg: ExperimentConfig, data: HourData, h0) -> dict:
    """Per-case channel matrices plus corruption truth masks.

    Returns a dict with, per case name, the raw value matrix, a validity
    matrix, and (for the corrupted cases) the bad and missing truth masks.
    """
    clean = data.test_set.measurements
    n, m = clean.shape
    cases = {
        "clean": {
            "values": clean,
            "valid": np.ones((n, m), dtype=bool),
            "nn_values": clean,
        }
    }
    if cfg.bad_data is None:
        return cases
    bd = cfg.bad_data
    # Corruption scales with each channel's H0 deviation, so ratio r means
    # "r times the spread the detector standardizes by". Scaling the sensor
    # noise instead would bury the errors below state variability, leaving
    # nothing to detect and nothing worth filtering.
    bdcfg = BadDataConfig(
        eta=float(bd["eta"]),
        ratio=float(bd["ratio"]),
        noise=NoiseModel(np.asarray(h0.std, dtype=float)),
        missing_rate=float(bd.get("missing_rate", 0.0)),
    )
    seed = derive_seed(cfg.seed, data.hour.name, "baddata")
    wald = WaldConfig(float(cfg.detection["alpha"]))
    corrupted = np.empty_like(clean)
    filtered = np.empty_like(clean)
    bad_mask = np.empty((n, m), dtype=bool)
    miss_mask = np.empty((n, m), dtype=bool)
    stat_flags = np.empty((n, m), dtype=bool)
    for k in range(n):
        rng = substream(seed, "run", k)
        z_corr, bad_mask[k] = inject_bad_data(MeasurementVector(clean[k]), bdcfg, rng)
        z_corr, miss_mask[k] = inject_missing(z_corr, bdcfg.missing_rate, rng)
        flags = wald_detect(z_corr, h0, wald)
        corrupted[k] = z_corr.values
        stat_flags[k] = flags & z_corr.valid
        filtered[k] = filter_bad(z_corr, flags, h0).values
    cases["corrupted"] = {
        "values": corrupted,
        "valid": ~miss_mask,
        "nn_values": np.where(miss_mask, h0.mean, corrupted),
        "bad": bad_mask,
        "missing": miss_mask,
    }
    cases["filtered"] = {
        "values": filtered,
        "valid": np.ones((n, m), dtype=bool),
        "nn_values": filtered,
        "wald_flags": stat_flags,
    }
    return cases


def _wald_summary(cfg: ExperimentConfig, cases: dict, h0) -> dict:
    alpha = float(cfg.detection["alpha"])
    stat_flags = cases["filtered"]["wald_flags"]
    bad = cases["corrupted"]["bad"]
    present = ~cases["corrupted"]["missing"]
    genuine = present & ~bad
    corrupt = present & bad
    fa = float(np.sum(stat_flags & genuine) / max(1, np.sum(genuine)))
    pd = float(np.sum(stat_flags & corrupt) / max(1, np.sum(corrupt)))
    ratio = float(cfg.bad_data["ratio"])
    return {
        "alpha": alpha,
        "threshold": WaldConfig(alpha).threshold,
        "false_alarm_rate": fa,
        "detection_rate": pd,
        "theoretical_detection_rate": detection_probability(alpha, ratio),
        "corrupted_channels": int(np.sum(corrupt)),
        "genuine_channels": int(np.sum(genuine)),
    }


def _evaluate_hour(
    cfg: ExperimentConfig,
    network: Network,
    spec: MeasurementSpec,
    data: HourData,
    models: HourModels,
    h0,
) -> dict:
    slack_vm = float(cfg.estimator.get("slack_vm", 1.0))
    base = cfg.baselines
    window = int(base["window"])
    aggregation = int(base["aggregation"])
    alpha = float(cfg.detection["alpha"])
    truth = data.test_set.states
    n_test = truth.shape[0]
    cases = _build_cases(cfg, data, h0)

    hist_rng = substream(derive_seed(cfg.seed, data.hour.name, "history"), "draws")
    histories = sample_history_batch(data.dists, n_test, window, aggregation, hist_rng)
    forecasts = {
        "wlsp": _avg_forecast(histories, window, aggregation),
        "wlsnnp": _nn_forecast(histories, models.regressor, models.regressor_scaler, window),
    }
    calibrations = {"wlsp": models.calibration_avg, "wlsnnp": models.calibration_nn}

    real_weights = 1.0 / np.maximum(data.noise.sigma, 1e-12) ** 2
    tan_phi = data.dists.tan_phi
    n_cols = 2 * network.nonslack_indices.size
    template = _state_template(network, slack_vm)

    ase = {m: {} for m in METHODS}
    jx = {m: {} for m in ("wlsp", "wlsnnp")}
    failures = {m: {} for m in ("wlsp", "wlsnnp")}

    for case_name, case in cases.items():
        rows = _bsednn_state_rows(models.mlp, models.scaler, network, case["nn_values"], slack_vm)
        ase["bsednn"][case_name] = _ase_from_arrays(rows, truth)

    for method in ("wlsp", "wlsnnp"):
        pseudo_w = _pseudo_weights(cfg, calibrations[method], data.noise)
        p_hat = forecasts[method]
        # Warm-start every solve from the forecast state. A flat start
        # sits on the kink of the current-magnitude channels and the
        # Gauss-Newton line search stalls there once several of them are
        # metered; the forecast state is one cheap Newton solve away and
        # is how an operator would initialize anyway.
        starts = []
        for k in range(n_test):
            q_hat = p_hat[k] * tan_phi
            try:
                pf = solve_powerflow(
                    network,
                    InjectionVector(p_hat[k], q_hat),
                    slack_vm=slack_vm,
                )
                starts.append(pf.state)
            except PowerFlowError:
                starts.append(None)
        for case_name, case in cases.items():
            est_rows = np.empty((n_test, template.size))
            rejects = 0
            judged = 0
            failed = 0
            for k in range(n_test):
                pseudo = _pq_pseudo(data.dists.pairs, p_hat[k], data.dists.power_factor, pseudo_w)
                z = MeasurementVector(case["values"][k], case["valid"][k].copy())
                merged_spec, merged_z, merged_w = augment_with_pseudo(spec, z, real_weights, pseudo)
                try:
                    sol = wls_solve(
                        network,
                        merged_z,
                        merged_spec,
                        merged_w,
                        x0=starts[k],
                        tol=float(cfg.wls["tol"]),
                        max_iter=int(cfg.wls["max_iter"]),
                        slack_vm=slack_vm,
                    )
                except WlsError:
                    # Report the forecast state when the solve fails;
                    # that is the estimate an operator would fall back on.
                    failed += 1
                    st = starts[k]
                    est_rows[k] = st.flatten() if st is not None else template
                    continue
                est_rows[k] = sol.state.flatten()
                dof = int(np.sum(sol.used_channels)) - n_cols
                if dof > 0:
                    judged += 1
                    if jx_test(sol.residuals, merged_w[sol.used_channels], dof, alpha):
                        rejects += 1
            ase[method][case_name] = _ase_from_arrays(est_rows, truth)
            jx[method][case_name] = rejects / judged if judged else None
            failures[method][case_name] = failed

    report = {
        "name": data.hour.name,
        "samples": {
            "train": int(data.train_set.n_samples),
            "val": int(data.val_set.n_samples),
            "test": int(n_test),
            "train_skipped": int(data.train_set.skipped),
            "val_skipped": int(data.val_set.skipped),
            "test_skipped": int(data.test_set.skipped),
        },
        "noise_sigma_mean": float(np.mean(data.noise.sigma)),
        "ase": {m: {c: r.to_json() for c, r in by_case.items()} for m, by_case in ase.items()},
        "jx_reject_rate": jx,
        "wls_failures": failures,
        "pseudo_sigma_policy": cfg.baselines.get("pseudo_sigma", {"ratio": 10.0}),
        "forecast_sigma": {
            "wlsp": {
                "p": [float(v) for v in models.calibration_avg.sigma_p],
                "q": [float(v) for v in models.calibration_avg.sigma_q],
            },
            "wlsnnp": {
                "p": [float(v) for v in models.calibration_nn.sigma_p],
                "q": [float(v) for v in models.calibration_nn.sigma_q],
            },
        },
    }
    if models.train_report is not None:
        report["training"] = {
            "bsednn": {
                "epochs": int(models.train_report.stopped_epoch),
                "best_epoch": int(models.train_report.best_epoch),
                "best_val_loss": float(min(models.train_report.val_losses)),
            },
            "regressor": {
                "epochs": int(models.regressor_report.stopped_epoch),
                "best_epoch": int(models.regressor_report.best_epoch),
                "best_val_loss": float(min(models.regressor_report.val_losses)),
            },
        }
    else:
        report["training"] = {"loaded_from_disk": True}
    if "corrupted" in cases:
        report["wald"] = _wald_summary(cfg, cases, h0)
    return report


def _prune_hour(
    cfg: ExperimentConfig,
    network: Network,
    data: HourData,
    models: HourModels,
) -> tuple[MLP, list, dict]:
    """Run the cluster-merge loop on one hour's estimator."""
    pcfg = cfg.pruning
    tc = TrainConfig(
        batch_size=int(cfg.estimator["batch_size"]),
        learning_rate=float(cfg.estimator["learning_rate"]),
        max_epochs=int(pcfg["retrain_epochs"]),
        patience=int(pcfg["retrain_patience"]),
        seed=derive_seed(cfg.seed, data.hour.name, "prune"),
    )
    ytr = states_to_targets(data.train_set.states, network)
    yva = states_to_targets(data.val_set.states, network)
    best, rounds = prune_retrain_loop(
        models.mlp,
        models.scaler,
        (data.train_set.measurements, ytr),
        (data.val_set.measurements, yva),
        threshold=float(pcfg["threshold"]),
        retrain_config=tc,
        max_rounds=int(pcfg["max_rounds"]),
    )
    slack_vm = float(cfg.estimator.get("slack_vm", 1.0))
    before = _bsednn_state_rows(models.mlp, models.scaler, network, data.val_set.measurements, slack_vm)
    after = _bsednn_state_rows(best, models.scaler, network, data.val_set.measurements, slack_vm)
    summary = {
        "rounds": [
            {
                "round": r.round,
                "widths": list(r.widths),
                "val_before_retrain": _none_if_nan(r.val_before_retrain),
                "train_loss": _none_if_nan(r.train_loss),
                "val_loss": _none_if_nan(r.val_loss),
            }
            for r in rounds
        ],
        "widths_before": list(models.mlp.hidden_widths),
        "widths_after": list(best.hidden_widths),
        "val_ase_before": _ase_from_arrays(before, data.val_set.states).ase,
        "val_ase_after": _ase_from_arrays(after, data.val_set.states).ase,
    }
    return best, rounds, summary


def _none_if_nan(value):
    value = float(value)
    return None if math.isnan(value) else value


# -- latency benchmark ----------------------------------------------------


@dataclass
class WlsSetup:
    """Prepared inputs for timing repeated WLS solves."""

    network: Network
    spec: MeasurementSpec
    measurements: list
    weights: np.ndarray
    nn_inputs: np.ndarray
    tol: float = 1e-8
    max_iter: int = 50

    def __post_init__(self):
        if not self.measurements:
            raise ValueError("need at least one prepared measurement vector")


@dataclass(frozen=True)
class LatencyReport:
    """Median per-call wall-clock seconds for both estimator families."""

    nn_median_seconds: float
    wls_median_seconds: float
    trials: int
    wls_failures: int

    @property
    def ratio(self) -> float:
        return self.wls_median_seconds / self.nn_median_seconds

    def rows(self) -> list:
        return [
            ("nn_median_seconds", self.nn_median_seconds),
            ("wls_median_seconds", self.wls_median_seconds),
            ("wls_over_nn_ratio", self.ratio),
            ("trials", float(self.trials)),
        ]


def benchmark_latency(estimator: Estimator, wls_setup: WlsSetup, trials: int) -> LatencyReport:
    """Time single-shot estimation for the network map and for WLS.

    Each trial runs one NN estimate and one full WLS solve on the same
    measurement vector; medians over all trials are reported.
    """
    if trials < 1:
        raise ExperimentError(f"benchmark: trials must be positive, got {trials}")
    n = len(wls_setup.measurements)
    nn_times = np.empty(trials)
    wls_times = np.empty(trials)
    failures = 0
    for t in range(trials):
        z_nn = wls_setup.nn_inputs[t % n]
        start = time.perf_counter()
        estimator(z_nn)
        nn_times[t] = time.perf_counter() - start
        z_wls = wls_setup.measurements[t % n]
        start = time.perf_counter()
        try:
            wls_solve(
                wls_setup.network,
                z_wls,
                wls_setup.spec,
                wls_setup.weights,
                tol=wls_setup.tol,
                max_iter=wls_setup.max_iter,
            )
        except WlsError:
            failures += 1
        wls_times[t] = time.perf_counter() - start
    return LatencyReport(
        nn_median_seconds=float(np.median(nn_times)),
        wls_median_seconds=float(np.median(wls_times)),
        trials=trials,
        wls_failures=failures,
    )


def _benchmark_setup(
    cfg: ExperimentConfig,
    network: Network,
    spec: MeasurementSpec,
    data: HourData,
    models: HourModels,
) -> WlsSetup:
    n = min(64, data.test_set.n_samples)
    clean = data.test_set.measurements[:n]
    base = cfg.baselines
    window = int(base["window"])
    aggregation = int(base["aggregation"])
    rng = substream(derive_seed(cfg.seed, data.hour.name, "benchmark"), "draws")
    histories = sample_history_batch(data.dists, n, window, aggregation, rng)
    p_hat = _avg_forecast(histories, window, aggregation)
    pseudo_w = _pseudo_weights(cfg, models.calibration_avg, data.noise)
    real_weights = 1.0 / np.maximum(data.noise.sigma, 1e-12) ** 2
    merged = []
    merged_spec = None
    merged_w = None
    for k in range(n):
        pseudo = _pq_pseudo(data.dists.pairs, p_hat[k], data.dists.power_factor, pseudo_w)
        merged_spec, z, merged_w = augment_with_pseudo(
            spec, MeasurementVector(clean[k]), real_weights, pseudo
        )
        merged.append(z)
    return WlsSetup(
        network=network,
        spec=merged_spec,
        measurements=merged,
        weights=merged_w,
        nn_inputs=clean,
        tol=float(cfg.wls["tol"]),
        max_iter=int(cfg.wls["max_iter"]),
    )


# -- full run -------------------------------------------------------------


def run_experiment(
    cfg: ExperimentConfig,
    out_dir=None,
    threads: int = 1,
    models_dir=None,
) -> ExperimentResult:
    """Execute every configured hour scenario and assemble the report.

    With `models_dir` set, per-hour estimators and regressors are loaded
    from disk instead of trained, which turns this into a pure evaluation
    pass over freshly regenerated (seeded) data.
    """
    started = time.perf_counter()
    timings = []
    with _stage("network"):
        network = resolve_network(cfg)
    with _stage("measurement placement"):
        spec = build_measurement_spec(network, cfg.measurements)
        obs = check_observability(network, spec)
    hours = []
    for hour in cfg.hours:
        t0 = time.perf_counter()
        data = _prepare_hour(cfg, network, spec, hour, threads)
        timings.append(("sampling", hour.name, time.perf_counter() - t0))
        t0 = time.perf_counter()
        if models_dir is None:
            models = _train_hour(cfg, network, data)
        else:
            models = _load_hour_models(cfg, data, Path(models_dir))
        timings.append(("training", hour.name, time.perf_counter() - t0))
        with _stage(f"hour '{hour.name}' detection statistics"):
            h0 = estimate_h0_stats(data.train_set)
        t0 = time.perf_counter()
        with _stage(f"hour '{hour.name}' evaluation"):
            hour_report = _evaluate_hour(cfg, network, spec, data, models, h0)
        timings.append(("evaluation", hour.name, time.perf_counter() - t0))
        pruning_rounds = None
        if cfg.pruning.get("enabled"):
            t0 = time.perf_counter()
            with _stage(f"hour '{hour.name}' pruning"):
                _, pruning_rounds, prune_summary = _prune_hour(cfg, network, data, models)
                hour_report["pruning"] = prune_summary
            timings.append(("pruning", hour.name, time.perf_counter() - t0))
        hours.append(
            HourArtifacts(
                name=hour.name,
                data=data,
                models=models,
                h0=h0,
                report=hour_report,
                epochs_rows=_epochs_rows(hour.name, models),
                pruning_rounds=pruning_rounds,
            )
        )

    report = {
        "network": cfg.network,
        "seed": cfg.seed,
        "config_hash": cfg.hash,
        "methods": list(METHODS),
        "cases": list(cfg.cases),
        "channels": spec.labels(),
        "state_coords": 2 * network.n_bus_phases,
        "observability": {
            "observable": obs.observable,
            "rank": obs.rank,
            "state_dim": obs.state_dim,
            "deficit": obs.deficit,
        },
        "hours": [h.report for h in hours],
        "overall": {"ase": _aggregate_ase(hours, cfg.cases)},
    }

    latency = None
    if int(cfg.benchmark.get("trials", 0)) > 0:
        t0 = time.perf_counter()
        with _stage("latency benchmark"):
            first = hours[0]
            estimator = Estimator(
                first.models.mlp,
                first.models.scaler,
                network,
                slack_vm=float(cfg.estimator.get("slack_vm", 1.0)),
            )
            setup = _benchmark_setup(cfg, network, spec, first.data, first.models)
            latency = benchmark_latency(estimator, setup, int(cfg.benchmark["trials"]))
        timings.append(("benchmark", first.name, time.perf_counter() - t0))

    out_path = None
    if out_dir is not None:
        t0 = time.perf_counter()
        with _stage("artifact writing"):
            out_path = Path(out_dir)
            _write_artifacts(cfg, report, hours, latency, out_path, models_dir is None)
        timings.append(("writing", "", time.perf_counter() - t0))
    timings.append(("total", "", time.perf_counter() - started))
    if out_path is not None:
        _write_timing(out_path / "timing.csv", timings, latency)
    return ExperimentResult(
        config=cfg,
        network=network,
        spec=spec,
        report=report,
        hours=hours,
        timings=timings,
        latency=latency,
        out_dir=out_path,
    )


def _aggregate_ase(hours: list, cases) -> dict:
    out = {}
    for method in METHODS:
        out[method] = {}
        for case in cases:
            parts = [h.report["ase"][method][case] for h in hours]
            runs = sum(p["runs"] for p in parts)
            coords = parts[0]["coords"]
            value = sum(p["ase"] * p["runs"] for p in parts) / runs
            out[method][case] = {"ase": value, "runs": runs, "coords": coords}
    return out


def _epochs_rows(hour_name: str, models: HourModels) -> list:
    rows = []
    for label, rep in (("bsednn", models.train_report), ("regressor", models.regressor_report)):
        if rep is None:
            continue
        for epoch, (tl, vl) in enumerate(zip(rep.train_losses, rep.val_losses), start=1):
            rows.append((hour_name, label, epoch, tl, vl))
    return rows


# -- artifact writing -----------------------------------------------------


def _fmt(value) -> str:
    return repr(float(value))


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _write_artifacts(
    cfg: ExperimentConfig,
    report: dict,
    hours: list,
    latency,
    out_dir: Path,
    save_models: bool,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")

    ase_rows = []
    for h in hours:
        for method in METHODS:
            for case, entry in h.report["ase"][method].items():
                ase_rows.append((h.name, method, case, _fmt(entry["ase"]), entry["runs"], entry["coords"]))
    for method in METHODS:
        for case, entry in report["overall"]["ase"][method].items():
            ase_rows.append(("overall", method, case, _fmt(entry["ase"]), entry["runs"], entry["coords"]))
    _write_csv(out_dir / "ase.csv", ["hour", "method", "case", "ase", "runs", "coords"], ase_rows)

    det_rows = []
    for h in hours:
        wald = h.report.get("wald")
        if wald:
            for key in (
                "alpha",
                "threshold",
                "false_alarm_rate",
                "detection_rate",
                "theoretical_detection_rate",
            ):
                det_rows.append((h.name, f"wald_{key}", _fmt(wald[key])))
        for method, by_case in h.report["jx_reject_rate"].items():
            for case, rate in by_case.items():
                if rate is not None:
                    det_rows.append((h.name, f"jx_{method}_{case}_reject_rate", _fmt(rate)))
    _write_csv(out_dir / "detection.csv", ["hour", "metric", "value"], det_rows)

    epoch_rows = []
    for h in hours:
        for hour_name, label, epoch, tl, vl in h.epochs_rows:
            epoch_rows.append((hour_name, label, epoch, _fmt(tl), _fmt(vl)))
    _write_csv(out_dir / "epochs.csv", ["hour", "model", "epoch", "train_loss", "val_loss"], epoch_rows)

    if save_models:
        for h in hours:
            _save_hour_models(cfg, h.models, h.name, out_dir / "models")
    for h in hours:
        if h.pruning_rounds:
            write_pruning_report(h.pruning_rounds, out_dir / f"pruning_{h.name}.csv")

    from .figures import write_report_figures

    all_epoch_rows = [row for h in hours for row in h.epochs_rows]
    pruning = {h.name: h.report["pruning"] for h in hours if "pruning" in h.report}
    write_report_figures(report, all_epoch_rows, pruning, out_dir / "figures")


def _write_timing(path: Path, timings: list, latency) -> None:
    rows = [(stage, hour, _fmt(seconds)) for stage, hour, seconds in timings]
    if latency is not None:
        rows += [(name, "", _fmt(value)) for name, value in latency.rows()]
    _write_csv(path, ["stage", "hour", "seconds"], rows)
