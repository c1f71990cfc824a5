"""PNG figures for reports, training logs and completed matrices.

Figures are drawn with the object-oriented matplotlib API on an Agg
canvas, so no display or global pyplot state is involved. PNG metadata is
pinned to keep output bytes stable across runs.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_PNG_META = {"Software": None}


def _save(fig: Figure, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)


def plot_report(report, path):
    """Grouped MAE/RMSE bars with one-standard-deviation whiskers."""
    names = [m.name for m in report.methods]
    x = np.arange(len(names))
    fig = Figure(figsize=(max(4.0, 1.1 * len(names) + 2), 3.6))
    ax = fig.add_subplot()
    ax.bar(x - 0.2, [m.mae_mean for m in report.methods], 0.4,
           yerr=[m.mae_sd for m in report.methods], capsize=3, label="MAE")
    ax.bar(x + 0.2, [m.rmse_mean for m in report.methods], 0.4,
           yerr=[m.rmse_sd for m in report.methods], capsize=3, label="RMSE")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("error")
    ax.set_title(f"{report.dataset}: holdout error")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_training_log(rows, path):
    """Training loss and validation MAE against epoch."""
    epochs = [r["epoch"] for r in rows]
    fig = Figure(figsize=(6.0, 3.6))
    ax = fig.add_subplot()
    ax.plot(epochs, [r["loss"] for r in rows], label="loss")
    ax.plot(epochs, [r["reconstruction"] for r in rows], label="train MAE")
    ax.plot(epochs, [r["val_mae"] for r in rows], label="validation MAE")
    ax.set_xlabel("epoch")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_completion(values, mask, completed, path):
    """Observed entries beside the completed matrix, on a shared colour scale."""
    observed = np.where(mask, values, np.nan)
    lo = float(np.nanmin(completed)) if np.size(completed) else 0.0
    hi = float(np.nanmax(completed)) if np.size(completed) else 1.0
    if np.any(mask):
        lo = min(lo, float(np.min(values[mask])))
        hi = max(hi, float(np.max(values[mask])))
    fig = Figure(figsize=(9.0, 4.0))
    axes = fig.subplots(1, 2, sharey=True)
    for ax, data, title in zip(axes, (observed, completed), ("observed", "completed")):
        im = ax.imshow(data, aspect="auto", interpolation="nearest", vmin=lo, vmax=hi, cmap="viridis")
        ax.set_title(title)
        ax.set_xlabel("timeslot")
    axes[0].set_ylabel("location")
    fig.colorbar(im, ax=axes, shrink=0.9)
    _save(fig, path)
