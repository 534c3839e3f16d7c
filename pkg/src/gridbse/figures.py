"""Static figure rendering for run reports.

Every writer takes already-computed report data and a target path; nothing
here recomputes results, so the images are a pure view of the CSV/JSON
artifacts written next to them.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METHOD_LABELS = {"bsednn": "BSEdnn", "wlsp": "WLS-p", "wlsnnp": "WLS-nnp"}
CASE_LABELS = {"clean": "clean", "corrupted": "corrupted", "filtered": "filtered"}


def ase_overview(report: dict, path) -> Path:
    """Grouped log-scale ASE bars: methods across hours, cases overall."""
    methods = report["methods"]
    cases = report["cases"]
    hour_names = [h["name"] for h in report["hours"]]
    groups = hour_names + ["overall"]
    n_panels = 2 if len(cases) > 1 else 1
    fig, axes = plt.subplots(1, n_panels, figsize=(5.0 * n_panels, 3.6))
    axes = np.atleast_1d(axes)

    ax = axes[0]
    width = 0.8 / len(methods)
    xs = np.arange(len(groups))
    for j, method in enumerate(methods):
        values = [h["ase"][method]["clean"]["ase"] for h in report["hours"]]
        values.append(report["overall"]["ase"][method]["clean"]["ase"])
        ax.bar(xs + (j - (len(methods) - 1) / 2) * width, values, width, label=METHOD_LABELS[method])
    ax.set_xticks(xs, groups)
    ax.set_yscale("log")
    ax.set_ylabel("ASE")
    ax.set_title("Clean-case ASE by hour")
    ax.legend(fontsize=8)

    if n_panels == 2:
        ax = axes[1]
        width = 0.8 / len(cases)
        xs = np.arange(len(methods))
        for j, case in enumerate(cases):
            values = [report["overall"]["ase"][m][case]["ase"] for m in methods]
            ax.bar(xs + (j - (len(cases) - 1) / 2) * width, values, width, label=CASE_LABELS[case])
        ax.set_xticks(xs, [METHOD_LABELS[m] for m in methods])
        ax.set_yscale("log")
        ax.set_ylabel("ASE")
        ax.set_title("Overall ASE by bad-data case")
        ax.legend(fontsize=8)

    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def training_curves(epochs_rows: list, hour: str, path) -> Path:
    """Train/validation loss trajectories for one hour's models."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    styles = {"bsednn": "-", "regressor": "--"}
    for model, style in styles.items():
        rows = [(e, tl, vl) for h, m, e, tl, vl in epochs_rows if h == hour and m == model]
        if not rows:
            continue
        epochs = [r[0] for r in rows]
        ax.plot(epochs, [r[1] for r in rows], style, color="tab:blue", label=f"{model} train")
        ax.plot(epochs, [r[2] for r in rows], style, color="tab:orange", label=f"{model} val")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (scaled targets)")
    ax.set_title(f"Training curves, hour {hour}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def pruning_progress(summary: dict, hour: str, path) -> Path:
    """Neuron count and validation loss across merge rounds."""
    rounds = summary["rounds"]
    xs = [r["round"] for r in rounds]
    sizes = [sum(r["widths"]) for r in rounds]
    val = [r["val_loss"] for r in rounds]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.bar(xs, sizes, color="lightsteelblue", label="hidden neurons")
    ax.set_xlabel("round")
    ax.set_ylabel("hidden neurons")
    twin = ax.twinx()
    twin.plot(xs, val, "o-", color="tab:red", label="val loss")
    twin.set_yscale("log")
    twin.set_ylabel("validation loss")
    ax.set_title(f"Pruning rounds, hour {hour}")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_report_figures(report: dict, epochs_rows: list, pruning: dict, out_dir) -> list:
    """Render every figure a report supports; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [ase_overview(report, out_dir / "ase.png")]
    for h in report["hours"]:
        name = h["name"]
        if any(row[0] == name for row in epochs_rows):
            paths.append(training_curves(epochs_rows, name, out_dir / f"training_{name}.png"))
    for name, summary in pruning.items():
        paths.append(pruning_progress(summary, name, out_dir / f"pruning_{name}.png"))
    return paths
