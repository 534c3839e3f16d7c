"""Monte Carlo scenario sampling and training-set generation.

A scenario assigns every non-slack bus-phase a load mixture (and optionally
a generation mixture); samples drawn from it run through the power flow to
produce matched (state, measurement) pairs. Sample k always uses its own
RNG substream keyed by (seed, "sample", k), so results are bit-identical no
matter how the work is chunked across workers.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Network
from .injections import GaussianMixture, MeterSeries, sample_mixture
from .powerflow import (
    InjectionVector,
    MeasurementSpec,
    MeasurementVector,
    PowerFlowError,
    evaluate_h,
    solve_powerflow,
)
from .util import substream

MAX_FAILURE_FRACTION = 0.10


class SamplingError(RuntimeError):
    """Scenario sampling failed (for example too many diverged power flows)."""


@dataclass(frozen=True)
class ScenarioDistributions:
    """Injection distributions over the network's non-slack bus-phases.

    `load` has one mixture per pair (consumption, positive draws);
    `generation` covers a subset of pairs. Reactive power follows the power
    factor: Q = P_load * tan(acos(pf)) on the load part, generation at unity.
    """

    pairs: tuple[tuple[int, int], ...]
    load: tuple[GaussianMixture, ...]
    generation: dict[tuple[int, int], GaussianMixture] = field(default_factory=dict)
    power_factor: float = 0.95

    def __post_init__(self):
        if len(self.load) != len(self.pairs):
            raise ValueError("need exactly one load mixture per bus-phase pair")
        if not 0.0 < self.power_factor <= 1.0:
            raise ValueError("power factor must be in (0, 1]")
        unknown = set(self.generation) - set(self.pairs)
        if unknown:
            raise ValueError(f"generation mixtures at unknown pairs: {sorted(unknown)}")

    @classmethod
    def build(
        cls,
        network: Network,
        load: GaussianMixture | dict,
        generation: dict | None = None,
        power_factor: float = 0.95,
    ) -> "ScenarioDistributions":
        """Assemble distributions for a network.

        `load` is either one mixture applied everywhere or a mapping with a
        "default" mixture plus per-bus overrides (keyed by bus id, applied
        to all phases of that bus). `generation` maps bus ids to mixtures.
        """
        pairs = tuple(
            network.bus_phase_pairs[i] for i in network.nonslack_indices
        )
        if isinstance(load, GaussianMixture):
            loads = tuple(load for _ in pairs)
        else:
            default = load.get("default")
            loads = []
            for bus, _phase in pairs:
                mixture = load.get(bus, default)
                if mixture is None:
                    raise ValueError(f"no load mixture for bus {bus}")
                loads.append(mixture)
            loads = tuple(loads)
        gen = {}
        for bus, mixture in (generation or {}).items():
            for pair in pairs:
                if pair[0] == bus:
                    gen[pair] = mixture
        return cls(pairs=pairs, load=loads, generation=gen, power_factor=power_factor)

    @property
    def tan_phi(self) -> float:
        return math.tan(math.acos(self.power_factor))

    def mean_net_injection(self) -> np.ndarray:
        means = np.array([m.mean() for m in self.load])
        for i, pair in enumerate(self.pairs):
            if pair in self.generation:
                means[i] = self.generation[pair].mean() - means[i]
            else:
                means[i] = -means[i]
        return means


def sample_injections(dists: ScenarioDistributions, rng: np.random.Generator) -> InjectionVector:
    """One joint injection draw: P = generation - load, Q from the load part."""
    n = len(dists.pairs)
    p = np.empty(n)
    q = np.empty(n)
    tan_phi = dists.tan_phi
    for i, pair in enumerate(dists.pairs):
        load_draw = sample_mixture(dists.load[i], rng)
        p_load = -load_draw
        gen_draw = 0.0
        if pair in dists.generation:
            gen_draw = sample_mixture(dists.generation[pair], rng)
        p[i] = gen_draw + p_load
        q[i] = p_load * tan_phi
    return InjectionVector(p=p, q=q)


@dataclass(frozen=True)
class NoiseModel:
    """Per-channel measurement noise standard deviations (per-unit)."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "sigma", sigma)
        if np.any(sigma < 0):
            raise ValueError("noise standard deviations must be non-negative")

    @classmethod
    def uniform(cls, sigma: float, n_channels: int) -> "NoiseModel":
        return cls(np.full(n_channels, float(sigma)))

    @classmethod
    def from_scenario(cls, dists: ScenarioDistributions, spec: MeasurementSpec) -> "NoiseModel":
        """Default noise level: 1% of the mean absolute net consumption."""
        level = 0.01 * float(np.mean(np.abs(dists.mean_net_injection())))
        return cls.uniform(level, spec.n_channels)


@dataclass(frozen=True)
class BadDataConfig:
    """Gross-error model: each channel is corrupted independently.

    With probability `eta` a channel's noise is inflated to sigma1 = ratio *
    sigma0; with probability `missing_rate` it drops out entirely.
    """

    eta: float
    ratio: float
    noise: NoiseModel
    missing_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must be in [0, 1]")
        if self.ratio <= 1.0:
            raise ValueError("corrupted-to-nominal ratio must exceed 1")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValueError("missing rate must be in [0, 1]")

    @property
    def sigma1(self) -> np.ndarray:
        return self.ratio * self.noise.sigma


def inject_bad_data(
    z: MeasurementVector,
    cfg: BadDataConfig,
    rng: np.random.Generator,
) -> tuple[MeasurementVector, np.ndarray]:
    """Corrupt channels with probability eta; returns (corrupted, truth mask).

    Flagged channels receive extra zero-mean noise with variance
    (ratio^2 - 1) sigma0^2, which turns the nominal N(0, sigma0^2) error
    already present in z into exactly N(0, sigma1^2).
    """
    flags = rng.random(z.n) < cfg.eta
    extra = rng.normal(0.0, 1.0, z.n) * cfg.noise.sigma * math.sqrt(cfg.ratio**2 - 1.0)
    values = np.where(flags, z.values + extra, z.values)
    return MeasurementVector(values, z.valid.copy()), flags


def inject_missing(
    z: MeasurementVector,
    rate: float,
    rng: np.random.Generator,
) -> tuple[MeasurementVector, np.ndarray]:
    """Drop channels with the given probability by clearing their validity."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("missing rate must be in [0, 1]")
    mask = rng.random(z.n) < rate
    return MeasurementVector(z.values.copy(), z.valid & ~mask), mask


@dataclass
class TrainingSet:
    """Matched Monte Carlo states and noisy measurements.

    `states` rows are flattened StateVectors ([vm..., va...] over all
    bus-phases); `measurements` rows follow the MeasurementSpec layout.
    """

    states: np.ndarray
    measurements: np.ndarray
    spec: MeasurementSpec
    seed: int
    skipped: int = 0
    config_hash: str = ""

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]


def _one_sample(network, dists, spec, noise, seed, index, ybus):
    rng = substream(seed, "sample", index)
    injection = sample_injections(dists, rng)
    try:
        result = solve_powerflow(network, injection, ybus=ybus)
    except PowerFlowError:
        return None
    clean = evaluate_h(result.state, network, spec, ybus=ybus)
    z = clean.values + rng.normal(0.0, 1.0, spec.n_channels) * noise.sigma
    return result.state.flatten(), z


def generate_training_set(
    network: Network,
    dists: ScenarioDistributions,
    spec: MeasurementSpec,
    noise: NoiseModel,
    count: int,
    seed: int,
    threads: int = 1,
    config_hash: str = "",
) -> TrainingSet:
    """Draw `count` scenario samples, solve each power flow, add sensor noise.

    Samples whose power flow fails to converge are skipped and counted;
    more than 10% failures aborts with a SamplingError. Output is invariant
    to the thread count.
    """
    if count < 1:
        raise SamplingError("need a positive sample count")
    from .grid import build_ybus

    ybus = build_ybus(network)
    indices = range(count)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(
                pool.map(lambda k: _one_sample(network, dists, spec, noise, seed, k, ybus), indices)
            )
    else:
        rows = [_one_sample(network, dists, spec, noise, seed, k, ybus) for k in indices]
    kept = [r for r in rows if r is not None]
    skipped = count - len(kept)
    if skipped > MAX_FAILURE_FRACTION * count:
        raise SamplingError(
            f"{skipped}/{count} power flows failed; scenario is too stressed to sample"
        )
    states = np.array([r[0] for r in kept])
    measurements = np.array([r[1] for r in kept])
    return TrainingSet(
        states=states,
        measurements=measurements,
        spec=spec,
        seed=seed,
        skipped=skipped,
        config_hash=config_hash,
    )


def synthesize_meter_series(
    fast_series: dict[str, np.ndarray],
    aggregation: int,
) -> dict[str, MeterSeries]:
    """Aggregate fast injection series into slow meter readings (block sums)."""
    T = int(aggregation)
    if T < 1:
        raise ValueError("aggregation must be a positive interval count")
    out = {}
    for meter_id, series in fast_series.items():
        values = np.asarray(series, dtype=float)
        if values.size % T != 0:
            raise ValueError(
                f"meter {meter_id}: series length {values.size} not divisible by T={T}"
            )
        readings = values.reshape(-1, T).sum(axis=1)
        out[meter_id] = MeterSeries(meter_id=meter_id, aggregation=T, readings=readings)
    return out


# -- training set persistence -------------------------------------------


def _write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(repr(float(x)) for x in row) + "\n")


def state_column_labels(network: Network) -> list[str]:
    pairs = network.bus_phase_pairs
    return [f"vm_{b}_{p}" for b, p in pairs] + [f"va_{b}_{p}" for b, p in pairs]


def save_training_set(ts: TrainingSet, directory, network: Network, tag: str = "") -> None:
    """Write states.csv, measurements.csv and a manifest next to each other."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = f"{tag}_" if tag else ""
    _write_csv(directory / f"{prefix}states.csv", state_column_labels(network), ts.states)
    _write_csv(directory / f"{prefix}measurements.csv", ts.spec.labels(), ts.measurements)
    manifest = {
        "seed": ts.seed,
        "count": ts.n_samples,
        "skipped": ts.skipped,
        "config_hash": ts.config_hash,
        "channels": [
            {"kind": c.kind, "element": c.element, "phase": c.phase} for c in ts.spec.channels
        ],
    }
    with open(directory / f"{prefix}manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_training_set(directory, tag: str = "") -> TrainingSet:
    from .powerflow import Channel

    directory = Path(directory)
    prefix = f"{tag}_" if tag else ""
    with open(directory / f"{prefix}manifest.json", "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    states = np.loadtxt(directory / f"{prefix}states.csv", delimiter=",", skiprows=1, ndmin=2)
    measurements = np.loadtxt(
        directory / f"{prefix}measurements.csv", delimiter=",", skiprows=1, ndmin=2
    )
    spec = MeasurementSpec(
        tuple(Channel(c["kind"], c["element"], c["phase"]) for c in manifest["channels"])
    )
    return TrainingSet(
        states=states,
        measurements=measurements,
        spec=spec,
        seed=manifest["seed"],
        skipped=manifest["skipped"],
        config_hash=manifest.get("config_hash", ""),
    )
