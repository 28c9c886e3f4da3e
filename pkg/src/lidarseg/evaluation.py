"""Per-point scoring: confusion matrices, the two accuracy metrics,
precision/recall and report writers.

Undefined metrics are ``None`` everywhere (never 0 or NaN), and JSON reports
carry them as ``null``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import UndefinedMetricError
from .kitti_io import PointClass

N_CLASSES = len(PointClass)
LABELED = [c for c in PointClass if c is not PointClass.IGNORED]


@dataclass
class ConfusionMatrix:
    """``counts[truth, predicted]`` over Car, Pedestrian, Cyclist, Ignored."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(N_CLASSES, N_CLASSES)

    @classmethod
    def zeros(cls) -> "ConfusionMatrix":
        return cls(np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_dict(self) -> dict:
        names = [c.name for c in PointClass]
        return {"classes": names, "counts": self.counts.tolist()}


def confusion(truth: Sequence[int], predicted: Sequence[int]) -> ConfusionMatrix:
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ValueError(f"truth has {len(t)} points, predictions {len(p)}")
    if len(t) and (t.min() < 0 or t.max() >= N_CLASSES or p.min() < 0 or p.max() >= N_CLASSES):
        raise ValueError("class codes must be PointClass values")
    counts = np.bincount(t * N_CLASSES + p, minlength=N_CLASSES * N_CLASSES)
    return ConfusionMatrix(counts.reshape(N_CLASSES, N_CLASSES))


def frame_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("frame accuracy of an empty matrix")
    return float(np.trace(cm.counts) / cm.total)


def labeled_accuracy(cm: ConfusionMatrix) -> float:
    rows = cm.counts[[int(c) for c in LABELED]]
    denom = int(rows.sum())
    if denom == 0:
        raise UndefinedMetricError("no labeled points")
    correct = sum(int(cm.counts[c, c]) for c in LABELED)
    return correct / denom


def precision_recall(cm: ConfusionMatrix, cls: PointClass) -> tuple[Optional[float], Optional[float]]:
    c = int(cls)
    tp = int(cm.counts[c, c])
    predicted = int(cm.counts[:, c].sum())
    actual = int(cm.counts[c, :].sum())
    precision = tp / predicted if predicted else None
    recall = tp / actual if actual else None
    return precision, recall


def _maybe(fn, cm) -> Optional[float]:
    try:
        return fn(cm)
    except UndefinedMetricError:
        return None


@dataclass
class FrameReport:
    frame_id: str
    total_frame_accuracy: Optional[float]
    labeled_accuracy: Optional[float]
    confusion: ConfusionMatrix

    @classmethod
    def from_confusion(cls, frame_id: str, cm: ConfusionMatrix) -> "FrameReport":
        return cls(frame_id, _maybe(frame_accuracy, cm), _maybe(labeled_accuracy, cm), cm)

    def to_dict(self) -> dict:
        per_class = {}
        for c in PointClass:
            p, r = precision_recall(self.confusion, c)
            per_class[c.name] = {"precision": p, "recall": r}
        return {
            "frame_id": self.frame_id,
            "total_frame_accuracy": self.total_frame_accuracy,
            "labeled_accuracy": self.labeled_accuracy,
            "n_points": self.confusion.total,
            "per_class": per_class,
            "confusion": self.confusion.to_dict(),
        }


def aggregate(reports: Iterable[FrameReport], frame_id: str = "ALL") -> FrameReport:
    """Dataset-level report from the summed confusion matrices."""
    total = ConfusionMatrix.zeros()
    for r in reports:
        total = total + r.confusion
    return FrameReport.from_confusion(frame_id, total)


def report_json(frames: Sequence[FrameReport], extra: dict | None = None) -> str:
    doc = {
        "scoring": {
            "unit": "point",
            "frame_accuracy": "correct / all points, Ignored-truth points included",
            "labeled_accuracy": "correct / points whose truth is not Ignored",
            "undefined": "null",
        },
        "frames": [f.to_dict() for f in frames],
        "aggregate": aggregate(frames).to_dict(),
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def summary_csv(frames: Sequence[FrameReport]) -> str:
    def fmt(v):
        return "" if v is None else f"{v:.6f}"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_id", "frame_acc", "labeled_acc"])
    for f in list(frames) + [aggregate(frames)]:
        w.writerow([f.frame_id, fmt(f.total_frame_accuracy), fmt(f.labeled_accuracy)])
    return buf.getvalue()
