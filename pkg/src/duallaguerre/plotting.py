"""Render report figures from the plot-data CSVs of a results bundle.

Figures are drawn with the Agg backend and saved without a Software/date stamp,
so identical CSVs give identical PNG bytes.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"cheby": "tab:blue", "laguerre": "tab:purple", "dual_laguerre": "tab:red"}
LABELS = {"cheby": "ChebyNet", "laguerre": "LaguerreNet", "dual_laguerre": "DualLaguerreNet"}

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "duallaguerre",
}

_PNG_META = {"Software": None}


def _read(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_training_curves(rows: list[dict], path: Path, dataset: str) -> None:
    """Mean (over folds) validation and test accuracy per epoch, one line per variant."""
    by_var: dict[str, dict[int, list[tuple[float, float, float]]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["dataset"] == dataset:
            by_var[r["variant"]][int(r["epoch"])].append(
                (float(r["train_loss"]), float(r["val_acc"]), float(r["test_acc"])))
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        for variant in sorted(by_var):
            epochs = sorted(by_var[variant])
            vals = np.array([np.mean(by_var[variant][e], axis=0) for e in epochs])
            c = COLORS.get(variant)
            lab = LABELS.get(variant, variant)
            ax_loss.plot(epochs, vals[:, 0], color=c, label=lab)
            ax_acc.plot(epochs, vals[:, 2], color=c, label=lab)
            ax_acc.plot(epochs, vals[:, 1], color=c, ls=":", lw=0.8)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("accuracy (solid test, dotted val)")
        ax_acc.legend(frameon=False)
        fig.suptitle(f"Training dynamics: {dataset}")
        fig.tight_layout()
        _save(fig, path)


def plot_sweep(rows: list[dict], axis: str, path: Path, dataset: str) -> None:
    """Test accuracy (mean and fold spread) against K or H."""
    by_var: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["dataset"] == dataset:
            by_var[r["variant"]][int(r[axis])].append(float(r["test_acc"]))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        for variant in sorted(by_var):
            xs = sorted(by_var[variant])
            mean = np.array([np.mean(by_var[variant][x]) for x in xs])
            std = np.array([np.std(by_var[variant][x]) for x in xs])
            c = COLORS.get(variant)
            ax.plot(xs, mean, marker="o", ms=3, color=c, label=LABELS.get(variant, variant))
            ax.fill_between(xs, mean - std, mean + std, color=c, alpha=0.15, lw=0)
        ax.set_xlabel("polynomial terms K" if axis == "K" else "hidden width H")
        ax.set_ylabel("test accuracy")
        ax.set_xticks(sorted({x for v in by_var.values() for x in v}))
        ax.legend(frameon=False)
        ax.set_title(dataset)
        fig.tight_layout()
        _save(fig, path)


def render_figures(results_dir) -> list[Path]:
    """Draw every figure the bundle has data for; returns the written paths."""
    out = Path(results_dir)
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)
    written = []
    curves = _read(out / "plots" / "curves.csv")
    for ds in sorted({r["dataset"] for r in curves}):
        p = fig_dir / f"training_curves_{ds}.png"
        plot_training_curves(curves, p, ds)
        written.append(p)
    for axis in ("K", "H"):
        rows = _read(out / "plots" / f"{axis.lower()}_sweep.csv")
        for ds in sorted({r["dataset"] for r in rows}):
            p = fig_dir / f"{axis.lower()}_sweep_{ds}.png"
            plot_sweep(rows, axis, p, ds)
            written.append(p)
    return written
