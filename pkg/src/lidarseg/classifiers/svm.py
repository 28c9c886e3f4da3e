"""One-vs-rest linear SVM trained with Pegasos-style subgradient steps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ImbalanceError
from .base import TrainingSet, require_rows, standardization


@dataclass
class LinearSvmModel:
    classes: np.ndarray  # PointClass codes, one row of W per class
    weights: np.ndarray  # (k, 5) in standardized feature space
    bias: np.ndarray  # (k,)
    mean: np.ndarray
    std: np.ndarray
    eigen_mode: str = "eigenvalues"
    kind: str = field(default="svm", init=False)

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64).reshape(-1, 5) - self.mean) / self.std

    def scores(self, X) -> np.ndarray:
        return self.standardize(X) @ self.weights.T + self.bias

    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        s = self.scores(X)
        best = np.argmax(s, axis=1)
        z = np.exp(s - s.max(axis=1, keepdims=True))
        soft = z / z.sum(axis=1, keepdims=True)
        return self.classes[best], soft[np.arange(len(s)), best]


def train_svm(data: TrainingSet, C: float = 10.0, epochs: int = 100, seed: int = 0,
              batch_size: int = 16, eigen_mode: str = "eigenvalues") -> LinearSvmModel:
    """Minimise ``mean(hinge) + ||w||^2 / (2C)`` per class.

    Each epoch visits the rows in a seeded random order in mini-batches; update
    ``t`` uses step ``1 / (lambda * t)`` with ``lambda = 1 / C``. The bias is
    not regularised.
    """
    require_rows(data)
    classes = data.classes
    if len(classes) < 2:
        raise ImbalanceError("SVM training needs at least two classes")
    if C <= 0 or epochs < 0 or batch_size < 1:
        raise ValueError("C must be > 0, epochs >= 0, batch_size >= 1")
    mean, std = standardization(data.X)
    Xs = (data.X - mean) / std
    # targets in {-1, +1}, one column per class
    Y = np.where(data.y[:, None] == classes[None, :], 1.0, -1.0)
    k, n = len(classes), len(Xs)
    W = np.zeros((k, Xs.shape[1]))
    b = np.zeros(k)
    lam = 1.0 / C
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            t += 1
            eta = 1.0 / (lam * t)
            xb, yb = Xs[rows], Y[rows]
            violated = (yb * (xb @ W.T + b)) < 1.0
            coef = np.where(violated, yb, 0.0)  # (batch, k)
            W *= 1.0 - eta * lam
            W += (eta / len(rows)) * coef.T @ xb
            b += (eta / len(rows)) * coef.sum(axis=0)
    return LinearSvmModel(classes, W, b, mean, std, eigen_mode=eigen_mode)
