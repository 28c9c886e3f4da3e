"""Binary Pedestrian-vs-Car multilayer perceptron (numpy, from scratch).

Architecture with the default two hidden layers::

    Dense(5 -> 200, relu) -> Dropout -> Dense(200 -> 200, relu) -> Dropout
    -> Dense(200 -> 1, sigmoid)

Trained with binary cross-entropy and plain mini-batch gradient descent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArityError
from ..kitti_io import PointClass
from .base import TrainingSet, require_rows, standardization

log = logging.getLogger(__name__)

HIDDEN_UNITS = 200
N_FEATURES = 5


@dataclass
class MlpModel:
    weights: list  # [(fan_in, fan_out) arrays]
    biases: list
    mean: np.ndarray
    std: np.ndarray
    dropout_rate: float = 0.5
    eigen_mode: str = "eigenvalues"
    kind: str = field(default="mlp", init=False)
    warnings: int = field(default=0, compare=False)

    @classmethod
    def initialize(cls, rng, hidden_layers: int = 2, dropout_rate: float = 0.5,
                   mean=None, std=None, eigen_mode: str = "eigenvalues") -> "MlpModel":
        if hidden_layers not in (1, 2, 3):
            raise ValueError("hidden_layers must be 1, 2 or 3")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        sizes = [N_FEATURES] + [HIDDEN_UNITS] * hidden_layers + [1]
        weights = [rng.normal(0.0, 1.0 / np.sqrt(fi), size=(fi, fo))
                   for fi, fo in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(fo) for fo in sizes[1:]]
        mean = np.zeros(N_FEATURES) if mean is None else mean
        std = np.ones(N_FEATURES) if std is None else std
        return cls(weights, biases, mean, std, dropout_rate, eigen_mode)

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    def param_counts(self) -> list[int]:
        return [w.size + b.size for w, b in zip(self.weights, self.biases)]

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES) - self.mean) / self.std

    def _forward(self, Xs: np.ndarray, rng=None):
        """Returns ``(logit, cache)``; dropout is active only when ``rng`` is given."""
        a = Xs
        cache = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            h = np.maximum(z, 0.0)
            mask = None
            if rng is not None and self.dropout_rate > 0:
                keep = 1.0 - self.dropout_rate
                mask = (rng.random(h.shape) < keep) / keep
                h = h * mask
            cache.append((a, z, mask))
            a = h
        logit = a @ self.weights[-1] + self.biases[-1]
        cache.append((a, None, None))
        return logit[:, 0], cache

    def output(self, X) -> np.ndarray:
        """Sigmoid output (probability of Pedestrian) without dropout."""
        logit, _ = self._forward(self.standardize(X))
        return _sigmoid(logit)

    def loss_and_grads(self, Xs: np.ndarray, y: np.ndarray, rng=None):
        """Mean binary cross-entropy on standardized inputs and its gradients."""
        logit, cache = self._forward(Xs, rng)
        loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
        n = len(y)
        delta = ((_sigmoid(logit) - y) / n)[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = cache[layer][0]
            gw[layer] = a_in.T @ delta
            gb[layer] = delta.sum(axis=0)
            if layer == 0:
                break
            _, z_prev, mask_prev = cache[layer - 1]
            delta = delta @ self.weights[layer].T
            if mask_prev is not None:
                delta = delta * mask_prev
            delta = delta * (z_prev > 0)
        return loss, gw, gb

    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        s = self.output(X)
        cls = np.where(s >= 0.5, int(PointClass.PEDESTRIAN), int(PointClass.CAR))
        return cls, np.maximum(s, 1.0 - s)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def binary_targets(data: TrainingSet) -> np.ndarray:
    classes = set(data.class_counts)
    if classes != {PointClass.CAR, PointClass.PEDESTRIAN}:
        raise ArityError(
            f"MLP needs exactly Car and Pedestrian rows, got {sorted(c.name for c in classes)}"
        )
    return (data.y == PointClass.PEDESTRIAN).astype(np.float64)


def train_mlp(data: TrainingSet, epochs: int = 50, dropout_rate: float = 0.5,
              learning_rate: float = 0.05, batch_size: int = 32, seed: int = 0,
              hidden_layers: int = 2, eigen_mode: str = "eigenvalues",
              history: list | None = None) -> MlpModel:
    """Fit the MLP; per-epoch mean training loss is appended to ``history``."""
    require_rows(data)
    y = binary_targets(data)
    warnings = 0
    skew = abs(y.mean() - 0.5) * 2
    if skew > 0.1:
        warnings += 1
        log.warning("MLP training data is unbalanced (%.1f%% Pedestrian)", 100 * y.mean())
    if epochs < 0 or batch_size < 1 or learning_rate <= 0:
        raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")

    rng = np.random.default_rng(seed)
    mean, std = standardization(data.X)
    model = MlpModel.initialize(rng, hidden_layers, dropout_rate, mean, std, eigen_mode)
    model.warnings = warnings
    Xs = model.standardize(data.X)
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            loss, gw, gb = model.loss_and_grads(Xs[rows], y[rows], rng)
            total += loss * len(rows)
            for w, g in zip(model.weights, gw):
                w -= learning_rate * g
            for b, g in zip(model.biases, gb):
                b -= learning_rate * g
        if history is not None:
            history.append(total / n)
    return model
