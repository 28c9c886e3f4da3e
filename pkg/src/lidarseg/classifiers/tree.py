"""CART decision tree with Gini impurity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import N_TARGET_CLASSES, TrainingSet, require_rows


@dataclass
class DecisionTree:
    """Flat array tree. Node ``k`` is a leaf when ``feature[k] == -1``;
    otherwise rows with ``x[feature] <= threshold`` go to ``left[k]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    proba: np.ndarray  # (n_nodes, 3), meaningful at leaves
    eigen_mode: str = "eigenvalues"
    kind: str = field(default="tree", init=False)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, 5)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            rows = np.flatnonzero(internal)
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        p = self.proba[self.leaf_index(X)]
        cls = np.argmax(p, axis=1)
        return cls, p[np.arange(len(p)), cls]


def _gini(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = counts / totals[..., None]
    return 1.0 - np.sum(np.nan_to_num(frac) ** 2, axis=-1)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest weighted Gini over midpoints of sorted unique values.
    Ties go to the lowest feature index, then the lowest threshold."""
    n = len(y)
    onehot = np.eye(N_TARGET_CLASSES)[y]
    best = None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left_counts = np.cumsum(onehot[order], axis=0)[:-1]
        n_left = np.arange(1, n)
        valid = (xs[1:] != xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        right_counts = left_counts[-1] + onehot[order[-1]] - left_counts
        score = (n_left * _gini(left_counts, n_left)
                 + (n - n_left) * _gini(right_counts, n - n_left)) / n
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[0]:
            thr = 0.5 * (xs[i] + xs[i + 1])
            if thr >= xs[i + 1]:
                thr = xs[i]
            best = (float(score[i]), f, float(thr))
    return best


def train_tree(data: TrainingSet, max_depth: int = 10, min_leaf: int = 1,
               eigen_mode: str = "eigenvalues") -> DecisionTree:
    require_rows(data)
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_leaf >= 1")
    X, y = data.X, data.y
    feature, threshold, left, right, proba = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=N_TARGET_CLASSES).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        proba.append(counts / counts.sum())
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or np.max(proba[node]) == 1.0 or len(idx) < 2 * min_leaf:
            continue
        split = _best_split(X[idx], y[idx], min_leaf)
        if split is None:
            continue
        _, f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        # right pushed first so the left subtree is expanded first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        proba=np.array(proba, dtype=np.float64).reshape(-1, N_TARGET_CLASSES),
        eigen_mode=eigen_mode,
    )
