"""Pre-estimation bad-data detection and filtering.

Each channel is tested marginally against its Monte Carlo H0 statistics
with a two-sided Wald test; flagged or missing channels are replaced by
their H0 mean before estimation. The classical post-fit J(x) chi-square
test is provided for the WLS baselines.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .powerflow import MeasurementVector
from .sampling import TrainingSet

MIN_H0_SAMPLES = 100


class DegenerateChannelError(ValueError):
    """A channel has (near-)zero spread in the H0 sample, so no test exists."""


@dataclass(frozen=True)
class H0Stats:
    """Per-channel mean and standard deviation under clean operation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be equal-length 1-D arrays")
        if np.any(std <= 0):
            raise DegenerateChannelError("H0 std must be positive on every channel")


@dataclass(frozen=True)
class WaldConfig:
    """Two-sided test level; the threshold is Phi^-1(1 - alpha/2) sigmas."""

    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")

    @property
    def threshold(self) -> float:
        return float(norm.ppf(1.0 - self.alpha / 2.0))


def estimate_h0_stats(source) -> H0Stats:
    """Channel-wise mean/std from a clean Monte Carlo measurement sample.

    Accepts a TrainingSet or a raw (samples x channels) array. Requires at
    least 100 samples; a zero-variance channel raises
    DegenerateChannelError because the Wald statistic would be undefined.
    """
    if isinstance(source, TrainingSet):
        samples = source.measurements
    else:
        samples = np.atleast_2d(np.asarray(source, dtype=float))
    if samples.shape[0] < MIN_H0_SAMPLES:
        raise ValueError(
            f"need at least {MIN_H0_SAMPLES} samples for H0 statistics, got {samples.shape[0]}"
        )
    std = samples.std(axis=0)
    if np.any(std <= 0):
        bad = np.flatnonzero(std <= 0).tolist()
        raise DegenerateChannelError(f"zero-variance channel(s) {bad} in H0 sample")
    return H0Stats(mean=samples.mean(axis=0), std=std)


def wald_detect(z: MeasurementVector, stats: H0Stats, cfg: WaldConfig = WaldConfig()) -> np.ndarray:
    """Per-channel bad-data flags: |z - mu| > Phi^-1(1 - a/2) * sigma.

    Missing channels (validity False) are flagged unconditionally.
    """
    if z.n != stats.mean.size:
        raise ValueError("measurement and H0 statistics lengths differ")
    flags = np.abs(z.values - stats.mean) > cfg.threshold * stats.std
    return flags | ~z.valid


def filter_bad(z: MeasurementVector, flags: np.ndarray, stats: H0Stats) -> MeasurementVector:
    """Replace flagged channels by their H0 mean and restore validity."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != z.values.shape:
        raise ValueError("flag mask shape mismatch")
    values = np.where(flags | ~z.valid, stats.mean, z.values)
    return MeasurementVector(values, np.ones(z.n, dtype=bool))


def detection_probability(alpha: float, ratio: float) -> float:
    """Theoretical Wald detection probability for noise inflated by `ratio`.

    Under H1 the standardized deviation is N(0, ratio^2), so

        P_D = 2 * (1 - Phi(Phi^-1(1 - alpha/2) / ratio)).

    ratio = 1 returns exactly alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if ratio <= 0.0:
        raise ValueError("noise ratio must be positive")
    return float(2.0 * (1.0 - norm.cdf(norm.ppf(1.0 - alpha / 2.0) / ratio)))


def jx_test(residuals: np.ndarray, weights: np.ndarray, dof: int, alpha: float = 0.05) -> bool:
    """Classical WLS bad-data test: sum_i w_i r_i^2 > chi2(dof) upper-alpha.

    Strict inequality: a statistic exactly on the threshold is not flagged.
    """
    if dof <= 0:
        raise ValueError("J(x) needs positive degrees of freedom (measurement redundancy)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    residuals = np.asarray(residuals, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if residuals.shape != weights.shape:
        raise ValueError("residuals and weights must align")
    statistic = float(weights @ (residuals * residuals))
    return statistic > float(chi2.ppf(1.0 - alpha, dof))
