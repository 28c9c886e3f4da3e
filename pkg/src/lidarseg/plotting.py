"""Report figures. Rendered off-screen with the Agg backend; PNG metadata is
stripped so identical inputs give identical files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import ConfusionMatrix, FrameReport  # noqa: E402
from .kitti_io import CLASS_COLORS, PointClass  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "lidarseg",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_confusion(cm: ConfusionMatrix, path, title: str = "Per-point confusion") -> Path:
    names = [c.name.capitalize() for c in PointClass]
    counts = cm.counts
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros(counts.shape, dtype=float), where=rows > 0)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.8))
        im = ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
        ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("truth")
        ax.set_title(title)
        for i in range(len(names)):
            for j in range(len(names)):
                ax.text(j, i, f"{counts[i, j]}", ha="center", va="center", fontsize=7,
                        color="white" if frac[i, j] > 0.5 else "black")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="row fraction")
        return _save(fig, Path(path))


def plot_frame_accuracy(frames: Sequence[FrameReport], path) -> Path:
    ids = [f.frame_id for f in frames]
    fa = [np.nan if f.total_frame_accuracy is None else f.total_frame_accuracy for f in frames]
    la = [np.nan if f.labeled_accuracy is None else f.labeled_accuracy for f in frames]
    x = np.arange(len(ids))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(ids) + 2), 3.0))
        ax.bar(x - 0.2, fa, width=0.4, label="all points", color="0.6")
        ax.bar(x + 0.2, la, width=0.4, label="labeled points", color="tab:blue")
        ax.set_xticks(x, ids, rotation=90, fontsize=7)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("accuracy")
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, Path(path))


def plot_frame_classes(xyz: np.ndarray, classes: np.ndarray, path, title: str = "") -> Path:
    """Bird's-eye scatter of one frame colored by class."""
    palette = np.array([CLASS_COLORS[c] for c in PointClass]) / 255.0
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        order = np.argsort(classes != PointClass.IGNORED, kind="stable")
        ax.scatter(xyz[order, 0], xyz[order, 1], s=0.5, c=palette[classes[order]], linewidths=0)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        if title:
            ax.set_title(title)
        return _save(fig, Path(path))
