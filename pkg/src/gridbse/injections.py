"""Learning injection distributions from aggregated meter data.

Smart meters report energy aggregated over slow intervals; estimation needs
the distribution of instantaneous (fast-interval) injections. A Gaussian
mixture is fitted to the slow readings by EM, an autoregressive model links
the fast samples inside one slow interval, and the mixture is converted to
the fast timescale: component means divide by the aggregation count T and
component variances follow from the aggregate-variance identity

    V^2 = gamma' c,   c = A_alpha c + sigma_eps^2 e1,
    gamma = [T, 2(T-1), ..., 2]

where c stacks the autocovariances C(0..T-1) of the fast process and
A_alpha encodes the Yule-Walker recursion of the AR coefficients.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

VARIANCE_FLOOR = 1e-9


class DistributionFitError(ValueError):
    """EM could not run on the given samples."""


class ARFitError(ValueError):
    """AR least squares failed (ill-conditioned or non-stationary)."""


class DownscaleError(ValueError):
    """Slow-to-fast moment conversion is not defined for these inputs."""


@dataclass(frozen=True)
class GaussianMixture:
    """Scalar Gaussian mixture with component weights, means, variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("weights, means, variances must be equal-length 1-D arrays")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(v <= 0):
            raise ValueError("variances must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        second = self.weights @ (self.variances + self.means**2)
        return float(second - self.mean() ** 2)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        comp = (
            np.log(np.maximum(self.weights, 1e-300))
            - 0.5 * np.log(2.0 * np.pi * self.variances)
            - 0.5 * (x[:, None] - self.means) ** 2 / self.variances
        )
        return logsumexp(comp, axis=1)

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "GaussianMixture":
        return cls(
            weights=np.array(doc["weights"], dtype=float),
            means=np.array(doc["means"], dtype=float),
            variances=np.array(doc["variances"], dtype=float),
        )


@dataclass(frozen=True)
class ARModel:
    """AR(K) process x_n = sum_k alpha_k x_{n-k} + eps_n, eps ~ N(mu, sigma^2)."""

    coefficients: np.ndarray
    innovation_variance: float
    innovation_mean: float = 0.0

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        object.__setattr__(self, "coefficients", coeffs)
        if coeffs.ndim != 1:
            raise ValueError("coefficients must be a 1-D array")
        if self.innovation_variance < 0:
            raise ValueError("innovation variance must be non-negative")

    @property
    def order(self) -> int:
        return self.coefficients.size

    def spectral_radius(self) -> float:
        if self.order == 0:
            return 0.0
        companion = np.zeros((self.order, self.order))
        companion[0, :] = self.coefficients
        if self.order > 1:
            companion[1:, :-1] = np.eye(self.order - 1)
        return float(np.max(np.abs(np.linalg.eigvals(companion))))

    def is_stationary(self) -> bool:
        return self.spectral_radius() < 1.0


@dataclass(frozen=True)
class MeterSeries:
    """Energy readings of one meter, each aggregating `aggregation` fast intervals."""

    meter_id: str
    aggregation: int
    readings: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "readings", np.asarray(self.readings, dtype=float))
        if self.aggregation < 1:
            raise ValueError("aggregation must be a positive interval count")


@dataclass(frozen=True)
class GmmFit:
    """EM result: fitted mixture plus the winning run's log-likelihood trace."""

    mixture: GaussianMixture
    log_likelihoods: np.ndarray
    degenerate: bool = False


def _em_single_run(x: np.ndarray, means0, variances0, weights0, max_iter, tol, floor):
    n = x.size
    weights = weights0.copy()
    means = means0.copy()
    variances = np.maximum(variances0.copy(), floor)
    trace = []
    degenerate = bool(np.any(variances0 < floor))
    prev = -np.inf
    for _ in range(max_iter):
        log_comp = (
            np.log(np.maximum(weights, 1e-300))
            - 0.5 * np.log(2.0 * np.pi * variances)
            - 0.5 * (x[:, None] - means) ** 2 / variances
        )
        log_norm = logsumexp(log_comp, axis=1)
        ll = float(log_norm.sum())
        trace.append(ll)
        resp = np.exp(log_comp - log_norm[:, None])
        bulk = resp.sum(axis=0)
        if np.any(bulk < 1e-12):
            degenerate = True
            bulk = np.maximum(bulk, 1e-12)
        weights = bulk / n
        weights = weights / weights.sum()
        means = (resp.T @ x) / bulk
        variances = np.array([
            float(resp[:, k] @ (x - means[k]) ** 2) / bulk[k] for k in range(means.size)
        ])
        if np.any(variances < floor):
            degenerate = True
            variances = np.maximum(variances, floor)
        if ll - prev < tol and np.isfinite(prev):
            break
        prev = ll
    return weights, means, variances, np.array(trace), degenerate


def fit_gmm_em(
    samples: np.ndarray,
    n_components: int,
    max_iter: int = 500,
    tol: float = 1e-9,
    restarts: int = 3,
    seed: int = 0,
    variance_floor: float = VARIANCE_FLOOR,
) -> GmmFit:
    """Fit a scalar Gaussian mixture by expectation-maximization.

    The first run seeds component means at sample quantiles; additional
    restarts perturb those seeds with the given RNG seed and the best final
    log-likelihood wins. Component variances never drop below
    `variance_floor`; hitting the floor (or an emptied component) flags the
    fit as degenerate with a warning.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if n_components < 1:
        raise DistributionFitError("need at least one component")
    if x.size < n_components:
        raise DistributionFitError(
            f"{x.size} sample(s) cannot support {n_components} component(s)"
        )
    if not np.all(np.isfinite(x)):
        raise DistributionFitError("samples contain non-finite values")
    rng = np.random.default_rng(seed)
    spread = float(np.std(x))
    base_means = np.quantile(x, (np.arange(n_components) + 0.5) / n_components)
    base_var = max(float(np.var(x)), variance_floor)
    best = None
    for restart in range(max(1, restarts)):
        means0 = base_means.copy()
        if restart > 0:
            means0 = means0 + rng.normal(0.0, max(spread, 1e-6) * 0.5, n_components)
        run = _em_single_run(
            x,
            means0,
            np.full(n_components, base_var),
            np.full(n_components, 1.0 / n_components),
            max_iter,
            tol,
            variance_floor,
        )
        if best is None or run[3][-1] > best[3][-1]:
            best = run
    weights, means, variances, trace, degenerate = best
    if degenerate:
        warnings.warn("EM hit the variance floor or emptied a component", RuntimeWarning)
    order = np.argsort(means)
    mixture = GaussianMixture(weights[order], means[order], variances[order])
    return GmmFit(mixture=mixture, log_likelihoods=trace, degenerate=degenerate)


def sample_mixture(gmm: GaussianMixture, rng: np.random.Generator, size: int | None = None):
    """Draw from the mixture: pick a component by weight, then sample it."""
    count = 1 if size is None else int(size)
    comps = rng.choice(gmm.n_components, size=count, p=gmm.weights)
    draws = rng.normal(gmm.means[comps], np.sqrt(gmm.variances[comps]))
    return float(draws[0]) if size is None else draws


def fit_ar_ls(trace: np.ndarray, order: int) -> ARModel:
    """Least-squares AR fit with intercept.

    Order 0 reduces to the trace mean and (biased) variance. The fitted
    model must be stationary; an explosive fit or an ill-conditioned
    regression raises ARFitError.
    """
    x = np.asarray(trace, dtype=float).ravel()
    if order < 0:
        raise ARFitError("order must be non-negative")
    if x.size <= 10 * order or x.size == 0:
        raise ARFitError(f"trace of {x.size} samples is too short for order {order}")
    if order == 0:
        return ARModel(
            coefficients=np.empty(0),
            innovation_variance=float(np.var(x)),
            innovation_mean=float(np.mean(x)),
        )
    rows = x.size - order
    design = np.empty((rows, order + 1))
    for k in range(1, order + 1):
        design[:, k - 1] = x[order - k : x.size - k]
    design[:, order] = 1.0
    target = x[order:]
    if np.linalg.cond(design) > 1e12:
        raise ARFitError("ill-conditioned AR regression (trace nearly constant or collinear)")
    coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    alphas = coef[:order]
    residuals = target - design @ coef
    model = ARModel(
        coefficients=alphas,
        innovation_variance=float(np.var(residuals)),
        innovation_mean=float(coef[order]),
    )
    if not model.is_stationary():
        raise ARFitError(
            f"fitted AR model is non-stationary (spectral radius {model.spectral_radius():.4f})"
        )
    return model


def build_autocovariance_system(ar: ARModel, n_intervals: int) -> np.ndarray:
    """Matrix A of the Yule-Walker system c = A c + sigma_eps^2 e1.

    Row m states C(m) = sum_k alpha_k C(|m - k|) (plus the innovation term
    on row 0), so entry (m, |m - k|) accumulates alpha_k.
    """
    T = int(n_intervals)
    if T < 1:
        raise DownscaleError("need at least one fast interval")
    if ar.order >= T:
        raise DownscaleError(f"AR order {ar.order} must be below the interval count {T}")
    A = np.zeros((T, T))
    for m in range(T):
        for k in range(1, ar.order + 1):
            A[m, abs(m - k)] += ar.coefficients[k - 1]
    return A


def _aggregation_weights(T: int) -> np.ndarray:
    gamma = np.full(T, 2.0) * (T - np.arange(T))
    gamma[0] = T
    return gamma


def downscale_variance(ar: ARModel, n_intervals: int, slow_variance: float) -> float:
    """Fast-interval variance matching an aggregate (slow) variance.

    Solves the Yule-Walker system for the autocovariance shape and scales it
    so the T-interval aggregate has variance `slow_variance`:

        sigma^2 = (e1' (I-A)^-1 e1) / (gamma' (I-A)^-1 e1) * V^2

    With no AR structure this is exactly V^2 / T.
    """
    if slow_variance <= 0:
        raise DownscaleError("slow variance must be positive")
    T = int(n_intervals)
    A = build_autocovariance_system(ar, T)
    system = np.eye(T) - A
    e1 = np.zeros(T)
    e1[0] = 1.0
    try:
        shape = np.linalg.solve(system, e1)
    except np.linalg.LinAlgError as exc:
        raise DownscaleError(f"(I - A) is singular for T={T}: {exc}") from exc
    gamma = _aggregation_weights(T)
    denom = float(gamma @ shape)
    numer = float(shape[0])
    if not np.isfinite(denom) or denom == 0.0:
        raise DownscaleError("aggregate variance weight vanished; AR model too close to unit root")
    sigma2 = numer / denom * slow_variance
    if not np.isfinite(sigma2) or sigma2 <= 0:
        raise DownscaleError(f"conversion produced non-positive variance {sigma2!r}")
    return sigma2


def downscale_mixture(
    slow: GaussianMixture,
    ar_models: ARModel | list[ARModel],
    n_intervals: int,
) -> GaussianMixture:
    """Convert a slow-timescale mixture to the fast timescale.

    Weights carry over unchanged, means divide by the aggregation count, and
    each component variance runs through downscale_variance with its AR
    model (a single model is shared across components).
    """
    T = int(n_intervals)
    if isinstance(ar_models, ARModel):
        models = [ar_models] * slow.n_components
    else:
        models = list(ar_models)
        if len(models) == 1:
            models = models * slow.n_components
        if len(models) != slow.n_components:
            raise DownscaleError(
                f"{len(models)} AR model(s) for {slow.n_components} component(s)"
            )
    variances = np.empty(slow.n_components)
    for i, (v_slow, model) in enumerate(zip(slow.variances, models)):
        try:
            variances[i] = downscale_variance(model, T, float(v_slow))
        except DownscaleError as exc:
            raise DownscaleError(f"component {i}: {exc}") from exc
    return GaussianMixture(
        weights=slow.weights.copy(),
        means=slow.means / T,
        variances=variances,
    )


# -- meter CSV interchange ----------------------------------------------


def load_meter_csv(path, aggregation: int) -> dict[str, MeterSeries]:
    """Read `meter_id,interval_index,energy` rows into per-meter series."""
    readings: dict[str, dict[int, float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"meter_id", "interval_index", "energy"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"meter CSV must have columns {sorted(required)}")
        for row in reader:
            meter = row["meter_id"]
            readings.setdefault(meter, {})[int(row["interval_index"])] = float(row["energy"])
    series = {}
    for meter, entries in readings.items():
        ordered = [entries[idx] for idx in sorted(entries)]
        series[meter] = MeterSeries(meter_id=meter, aggregation=aggregation, readings=np.array(ordered))
    return series


def save_meter_csv(path, series: dict[str, MeterSeries]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["meter_id", "interval_index", "energy"])
        for meter_id in sorted(series):
            for idx, value in enumerate(series[meter_id].readings):
                writer.writerow([meter_id, idx, repr(float(value))])
