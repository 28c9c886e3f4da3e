"""Training data containers, predictions and the confidence rule."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import EmptyDataError, ImbalanceError
from ..kitti_io import PointClass

log = logging.getLogger(__name__)

N_TARGET_CLASSES = 3  # Car, Pedestrian, Cyclist


@dataclass
class TrainingSet:
    """Feature rows ``X`` (n, 5) with integer :class:`PointClass` targets ``y``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, 5)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if len(self.X) != len(self.y):
            raise ValueError("X and y lengths differ")
        if np.any(self.y == PointClass.IGNORED) or np.any((self.y < 0) | (self.y > 2)):
            raise ValueError("training rows must be Car, Pedestrian or Cyclist")

    @classmethod
    def from_rows(cls, X, y) -> "TrainingSet":
        """Build from CSV-style rows, dropping Ignored ones."""
        X = np.asarray(X, dtype=np.float64).reshape(-1, 5)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        keep = y != PointClass.IGNORED
        return cls(X[keep], y[keep])

    def __len__(self) -> int:
        return len(self.y)

    @property
    def class_counts(self) -> dict[PointClass, int]:
        ids, counts = np.unique(self.y, return_counts=True)
        return {PointClass(int(i)): int(c) for i, c in zip(ids, counts)}

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.y)


@dataclass(frozen=True)
class Prediction:
    cls: PointClass
    confidence: float


def undersample(data: TrainingSet, seed: int) -> TrainingSet:
    """Downsample every class to the minority count, then shuffle."""
    counts = data.class_counts
    if len(counts) < 2:
        raise ImbalanceError("undersampling needs at least two classes")
    m = min(counts.values())
    rng = np.random.default_rng(seed)
    keep = [rng.choice(np.flatnonzero(data.y == c), size=m, replace=False) for c in sorted(counts)]
    idx = np.concatenate(keep)
    idx = idx[rng.permutation(len(idx))]
    return TrainingSet(data.X[idx], data.y[idx])


def standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[~(std > 0)] = 1.0
    return mean, std


def require_rows(data: TrainingSet) -> None:
    if len(data) == 0:
        raise EmptyDataError("training set is empty")


def apply_confidence_threshold(p: Prediction, threshold: float) -> PointClass:
    return p.cls if p.confidence >= threshold else PointClass.IGNORED
