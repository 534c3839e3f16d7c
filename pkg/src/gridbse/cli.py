"""Command line entry points.

Every subcommand is batch-oriented: read a JSON config plus optional data
files, write artifacts into a directory, print a short plain-text summary.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baddata import WaldConfig, estimate_h0_stats, wald_detect
from .experiment import (
    ExperimentError,
    _epochs_rows,
    _prepare_hour,
    _prune_hour,
    _save_hour_models,
    _train_hour,
    benchmark_latency,
    build_measurement_spec,
    load_config,
    resolve_network,
    run_experiment,
)
from .experiment import _benchmark_setup, _load_hour_models
from .grid import GridModelError
from .injections import (
    ARModel,
    DistributionFitError,
    downscale_mixture,
    fit_ar_ls,
    fit_gmm_em,
    load_meter_csv,
)
from .mlp import Estimator, load_model, save_model
from .powerflow import MeasurementVector, PowerFlowError
from .pruning import write_pruning_report
from .sampling import SamplingError, load_training_set, save_training_set, state_column_labels
from .util import derive_seed
from .wls import WlsError


def _parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, help="experiment config JSON")
    parent.add_argument("--seed", type=int, help="override the config seed")
    parent.add_argument("--out", type=Path, help="output directory or file")
    parent.add_argument("--threads", type=int, default=1, help="sampling worker count")
    return parent


def _load_cfg(args):
    if args.config is None:
        raise ExperimentError("this subcommand needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out is not None:
        return Path(args.out)
    if cfg.out:
        return cfg.base_dir / cfg.out
    raise ExperimentError("no output directory: pass --out or set 'out' in the config")


def _pick_hour(cfg, name):
    if name is None:
        return cfg.hours[0]
    for hour in cfg.hours:
        if hour.name == name:
            return hour
    raise ExperimentError(f"no hour named '{name}' in the config")


def _read_measurement_csv(path: Path, spec):
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().strip().split(",")
    if header != spec.labels():
        raise ExperimentError(
            f"measurement columns {header} do not match the configured channels {spec.labels()}"
        )
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# -- subcommands ----------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    result = run_experiment(cfg, out_dir=out, threads=args.threads)
    for method in result.report["methods"]:
        entry = result.report["overall"]["ase"][method]["clean"]
        print(f"{method:8s} clean ASE {entry['ase']:.3e}  ({entry['runs']} runs)")
    if result.latency is not None:
        print(
            f"latency  nn {result.latency.nn_median_seconds * 1e3:.3f} ms"
            f"  wls {result.latency.wls_median_seconds * 1e3:.3f} ms"
            f"  ratio {result.latency.ratio:.1f}x"
        )
    print(f"report written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    models = Path(args.models) if args.models else out / "models"
    result = run_experiment(cfg, out_dir=out, threads=args.threads, models_dir=models)
    for method in result.report["methods"]:
        entry = result.report["overall"]["ase"][method]["clean"]
        print(f"{method:8s} clean ASE {entry['ase']:.3e}  ({entry['runs']} runs)")
    print(f"report written to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    network = resolve_network(cfg)
    spec = build_measurement_spec(network, cfg.measurements)
    rows = []
    for hour in cfg.hours:
        data = _prepare_hour(cfg, network, spec, hour, args.threads)
        models = _train_hour(cfg, network, data)
        _save_hour_models(cfg, models, hour.name, out / "models")
        rows.extend(_epochs_rows(hour.name, models))
        print(
            f"hour {hour.name}: estimator stopped at epoch "
            f"{models.train_report.stopped_epoch} "
            f"(best {models.train_report.best_epoch}, "
            f"val loss {min(models.train_report.val_losses):.4e})"
        )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "epochs.csv", "w", encoding="utf-8", newline="") as handle:
        handle.write("hour,model,epoch,train_loss,val_loss\n")
        for hour_name, label, epoch, tl, vl in rows:
            handle.write(f"{hour_name},{label},{epoch},{tl!r},{vl!r}\n")
    print(f"models written to {out / 'models'}")
    return 0


def cmd_prune(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    hour = _pick_hour(cfg, args.hour)
    network = resolve_network(cfg)
    spec = build_measurement_spec(network, cfg.measurements)
    data = _prepare_hour(cfg, network, spec, hour, args.threads)
    models = _train_hour(cfg, network, data)
    best, rounds, summary = _prune_hour(cfg, network, data, models)
    out.mkdir(parents=True, exist_ok=True)
    save_model(best, models.scaler, out / f"pruned_{hour.name}", seed=cfg.seed, config_hash=cfg.hash)
    write_pruning_report(rounds, out / f"pruning_{hour.name}.csv")
    print(f"widths {summary['widths_before']} -> {summary['widths_after']}")
    print(
        f"val ASE {summary['val_ase_before']:.4e} -> {summary['val_ase_after']:.4e} "
        f"over {len(rounds) - 1} round(s)"
    )
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    network = resolve_network(cfg)
    spec = build_measurement_spec(network, cfg.measurements)
    hours = cfg.hours if args.hour is None else [_pick_hour(cfg, args.hour)]
    for hour in hours:
        data = _prepare_hour(cfg, network, spec, hour, args.threads)
        target = out / hour.name
        for split, ts in (("train", data.train_set), ("val", data.val_set), ("test", data.test_set)):
            save_training_set(ts, target, network, tag=split)
        print(
            f"hour {hour.name}: wrote {data.train_set.n_samples}/{data.val_set.n_samples}/"
            f"{data.test_set.n_samples} train/val/test samples to {target}"
        )
    return 0


def cmd_learn_dist(args) -> int:
    if args.out is None:
        raise ExperimentError("learn-dist needs --out <file.json>")
    seed = args.seed if args.seed is not None else 0
    series = load_meter_csv(args.meters, args.aggregation)
    if args.trace is not None:
        trace_series = load_meter_csv(args.trace, 1)
        trace = next(iter(trace_series.values())).readings
        ar = fit_ar_ls(trace, args.order)
    else:
        ar = ARModel(coefficients=(), innovation_variance=1.0, innovation_mean=0.0)
    mixtures = {}
    slow = {}
    for meter_id in sorted(series):
        fit = fit_gmm_em(
            series[meter_id].readings,
            args.components,
            seed=derive_seed(seed, "gmm", meter_id),
        )
        slow[meter_id] = fit.mixture.to_json()
        mixtures[meter_id] = downscale_mixture(fit.mixture, ar, args.aggregation).to_json()
        print(
            f"meter {meter_id}: {len(fit.log_likelihoods)} EM iterations, "
            f"final log-likelihood {fit.log_likelihoods[-1]:.3f}"
            + (" (degenerate)" if fit.degenerate else "")
        )
    doc = {
        "aggregation": args.aggregation,
        "ar": {
            "coefficients": list(ar.coefficients),
            "innovation_variance": ar.innovation_variance,
        },
        "mixtures": mixtures,
        "slow_mixtures": slow,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"fast-scale mixtures written to {out}")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_cfg(args)
    if args.out is None:
        raise ExperimentError("estimate needs --out <file.csv>")
    network = resolve_network(cfg)
    spec = build_measurement_spec(network, cfg.measurements)
    mlp, scaler, _ = load_model(args.model)
    estimator = Estimator(mlp, scaler, network, slack_vm=float(cfg.estimator.get("slack_vm", 1.0)))
    values = _read_measurement_csv(args.measurements, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(state_column_labels(network)) + "\n")
        for row in values:
            state = estimator(row)
            handle.write(",".join(repr(float(x)) for x in state.flatten()) + "\n")
    print(f"{values.shape[0]} state estimates written to {out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load_cfg(args)
    if args.out is None:
        raise ExperimentError("detect needs --out <file.csv>")
    network = resolve_network(cfg)
    spec = build_measurement_spec(network, cfg.measurements)
    ts = load_training_set(args.train, tag=args.tag)
    if ts.spec.labels() != spec.labels():
        raise ExperimentError("training set channels do not match the configured channels")
    h0 = estimate_h0_stats(ts)
    wald = WaldConfig(float(cfg.detection["alpha"]))
    values = _read_measurement_csv(args.measurements, spec)
    labels = spec.labels()
    flagged = 0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as handle:
        handle.write("run,channel,flag\n")
        for k, row in enumerate(values):
            flags = wald_detect(MeasurementVector(row), h0, wald)
            flagged += int(flags.sum())
            for label, flag in zip(labels, flags):
                handle.write(f"{k},{label},{int(flag)}\n")
    total = values.size
    print(f"flagged {flagged}/{total} channel readings ({flagged / total:.2%}), table in {out}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load_cfg(args)
    network = resolve_network(cfg)
    spec = build_measurement_spec(network, cfg.measurements)
    hour = _pick_hour(cfg, args.hour)
    data = _prepare_hour(cfg, network, spec, hour, args.threads)
    if args.models is not None:
        models = _load_hour_models(cfg, data, Path(args.models))
    else:
        models = _train_hour(cfg, network, data)
    estimator = Estimator(
        models.mlp, models.scaler, network, slack_vm=float(cfg.estimator.get("slack_vm", 1.0))
    )
    setup = _benchmark_setup(cfg, network, spec, data, models)
    trials = args.trials if args.trials is not None else int(cfg.benchmark.get("trials", 0)) or 200
    latency = benchmark_latency(estimator, setup, trials)
    print(f"trials              {latency.trials}")
    print(f"nn median latency   {latency.nn_median_seconds * 1e3:.4f} ms")
    print(f"wls median latency  {latency.wls_median_seconds * 1e3:.4f} ms")
    print(f"wls/nn ratio        {latency.ratio:.1f}x")
    if latency.wls_failures:
        print(f"wls failures        {latency.wls_failures}")
    if args.out is not None:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as handle:
            handle.write("metric,value\n")
            for name, value in latency.rows():
                handle.write(f"{name},{value!r}\n")
        print(f"table written to {out}")
    return 0


# -- argument wiring ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parent = _parent()
    parser = argparse.ArgumentParser(
        prog="gridbse",
        description="Bayesian state estimation experiments for distribution feeders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[parent], help="full pipeline: sample, train, evaluate, report")

    p = sub.add_parser("evaluate", parents=[parent], help="evaluate using previously saved models")
    p.add_argument("--models", type=Path, help="models directory (default <out>/models)")

    sub.add_parser("train", parents=[parent], help="train and save per-hour models")

    p = sub.add_parser("prune", parents=[parent], help="cluster-merge pruning on one hour's model")
    p.add_argument("--hour", help="hour name (default: first configured hour)")

    p = sub.add_parser("gen-data", parents=[parent], help="write Monte Carlo training sets")
    p.add_argument("--hour", help="restrict to one hour (default: all)")

    p = sub.add_parser("learn-dist", parents=[parent], help="fit meter mixtures and downscale them")
    p.add_argument("--meters", type=Path, required=True, help="slow meter readings CSV")
    p.add_argument("--aggregation", type=int, required=True, help="fast intervals per reading")
    p.add_argument("--components", type=int, default=3, help="mixture components per meter")
    p.add_argument("--trace", type=Path, help="fast-scale reference trace CSV for the AR fit")
    p.add_argument("--order", type=int, default=1, help="AR order for the trace fit")

    p = sub.add_parser("estimate", parents=[parent], help="estimate states for a measurement CSV")
    p.add_argument("--model", type=Path, required=True, help="model file prefix")
    p.add_argument("--measurements", type=Path, required=True, help="measurement CSV")

    p = sub.add_parser("detect", parents=[parent], help="Wald-flag a measurement CSV")
    p.add_argument("--train", type=Path, required=True, help="training set directory for H0 stats")
    p.add_argument("--tag", default="train", help="training set tag (default: train)")
    p.add_argument("--measurements", type=Path, required=True, help="measurement CSV")

    p = sub.add_parser("benchmark", parents=[parent], help="NN vs WLS latency on one hour")
    p.add_argument("--hour", help="hour name (default: first configured hour)")
    p.add_argument("--models", type=Path, help="load models instead of training")
    p.add_argument("--trials", type=int, help="timing trials (default: config or 200)")

    return parser


_COMMANDS = {
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "train": cmd_train,
    "prune": cmd_prune,
    "gen-data": cmd_gen_data,
    "learn-dist": cmd_learn_dist,
    "estimate": cmd_estimate,
    "detect": cmd_detect,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (
        ExperimentError,
        GridModelError,
        PowerFlowError,
        SamplingError,
        WlsError,
        DistributionFitError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
