"""Bayesian state estimation for unobservable distribution feeders.

The package covers the full loop: learn injection distributions from slow
meter data, sample synthetic grid states, train a neural MMSE estimator,
compare it against pseudo-measurement WLS, detect and filter gross sensor
errors, and shrink the trained network by merging redundant neurons.
"""

__version__ = "0.1.0"

from .baddata import (
    DegenerateChannelError,
    H0Stats,
    WaldConfig,
    detection_probability,
    estimate_h0_stats,
    filter_bad,
    jx_test,
    wald_detect,
)
from .experiment import (
    AseResult,
    ExperimentConfig,
    ExperimentError,
    ExperimentResult,
    LatencyReport,
    benchmark_latency,
    build_measurement_spec,
    compute_ase,
    load_config,
    resolve_network,
    run_experiment,
)
from .grid import (
    Branch,
    Bus,
    GridModelError,
    Network,
    build_ybus,
    load_network,
    load_network_file,
    save_network,
    save_network_file,
)
from .injections import (
    ARFitError,
    ARModel,
    DistributionFitError,
    DownscaleError,
    GaussianMixture,
    MeterSeries,
    downscale_mixture,
    downscale_variance,
    fit_ar_ls,
    fit_gmm_em,
    load_meter_csv,
    save_meter_csv,
)
from .mlp import (
    MLP,
    Estimator,
    EstimationInputError,
    Scaler,
    TrainConfig,
    TrainingDivergedError,
    estimate,
    load_model,
    save_model,
    train,
)
from .powerflow import (
    Channel,
    InjectionVector,
    MeasurementSpec,
    MeasurementVector,
    PowerFlowConvergenceError,
    PowerFlowError,
    SingularJacobianError,
    StateVector,
    evaluate_h,
    flat_state,
    measurement_jacobian,
    solve_powerflow,
)
from .pruning import ClusterAssignment, cluster_layer, prune, prune_retrain_loop, similarity
from .sampling import (
    BadDataConfig,
    NoiseModel,
    SamplingError,
    ScenarioDistributions,
    TrainingSet,
    generate_training_set,
    inject_bad_data,
    inject_missing,
    load_training_set,
    save_training_set,
    synthesize_meter_series,
)
from .wls import (
    ConsumptionHistory,
    ObservabilityReport,
    PseudoMeasurementSet,
    RankDeficientError,
    WlsConvergenceError,
    WlsError,
    WlsSolution,
    augment_with_pseudo,
    check_observability,
    pseudo_avg,
    pseudo_nn,
    wls_solve,
)

__all__ = [name for name in dir() if not name.startswith("_")]
