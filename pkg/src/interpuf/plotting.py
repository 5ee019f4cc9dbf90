"""SVG figures for reports: attack training curves and the token Hamming-distance histogram."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .attacks import TrainingCurve  # noqa: E402

# Fixed element ids and no date stamp keep the SVG bytes reproducible.
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: str | Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "interpuf", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_training_curves(curves: Mapping[str, TrainingCurve], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, curve in curves.items():
        ax.plot(curve.epochs, curve.train_acc, label=f"{name} train")
        ax.plot(curve.epochs, curve.test_acc, linestyle="--", label=f"{name} test")
    ax.axhline(0.5, color="grey", linewidth=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def plot_token_histogram(counts: np.ndarray, edges: np.ndarray, mean: float, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black", linewidth=0.3)
    ax.axvline(mean, color="red", linestyle="--", label=f"mean {mean:.4f}")
    ax.set_xlabel("fractional Hamming distance between tokens")
    ax.set_ylabel("token pairs")
    ax.set_xlim(0.2, 0.8)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
