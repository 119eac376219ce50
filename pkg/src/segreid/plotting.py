"""Report figures: training curve, ablation bars and CMC curve.

All functions write a PNG and return its path. The Agg backend is selected
so the CLI works without a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLOURS = ["#1b6ca8", "#d1495b", "#66a182", "#edae49"]

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.prop_cycle": matplotlib.cycler(color=COLOURS),
    "lines.linewidth": 1.4,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training(rows: list[dict], path) -> Path:
    """Loss per step (left axis) and held-out mAP at evaluation steps (right axis)."""
    steps = [r["step"] for r in rows]
    evals = [(r["step"], r["mAP"]) for r in rows if "mAP" in r]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(steps, [r["loss"] for r in rows], color=COLOURS[0], label="loss")
        ax.set_xlabel("step")
        ax.set_ylabel("total loss")
        if evals:
            right = ax.twinx()
            right.spines["right"].set_visible(True)
            x, y = zip(*evals)
            right.plot(x, y, "o-", color=COLOURS[1], label="mAP")
            right.set_ylim(0, 1.02)
            right.set_ylabel("held-out mAP")
        fig.legend(loc="upper center", ncol=2, frameon=False)
        return _save(fig, path)


def plot_ablation(table: list[dict], path, reference: dict | None = None) -> Path:
    """Bars of desk-scale mAP and R-1 per variant; full-scale reference values as markers."""
    names = [row["variant"] for row in table]
    x = np.arange(len(names))
    width = 0.38
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.bar(x - width / 2, [row["mAP"] for row in table], width, label="mAP")
        ax.bar(x + width / 2, [row["R-1"] for row in table], width, label="R-1")
        if reference:
            ref = [reference[n][0] / 100 for n in names if n in reference]
            if len(ref) == len(names):
                ax.plot(x - width / 2, ref, "k_", markersize=14, label="full-scale mAP (ref.)")
        ax.set_xticks(x, names)
        ax.set_ylim(0, 1.05)
        ax.set_xlabel("variant")
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)


def plot_cmc(curve, path, label: str = "model") -> Path:
    """CMC curve from an array of match rates at ranks 1..n."""
    curve = np.asarray(curve, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(np.arange(1, curve.size + 1), curve, marker=".", label=label)
        ax.set_xlabel("rank")
        ax.set_ylabel("matching rate")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)
