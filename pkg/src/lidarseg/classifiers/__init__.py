"""Cluster classifiers: CART tree, one-vs-rest linear SVM, binary MLP."""

from __future__ import annotations

import numpy as np

from ..features import FeatureVector
from ..kitti_io import PointClass
from .base import (
    Prediction,
    TrainingSet,
    apply_confidence_threshold,
    standardization,
    undersample,
)
from .mlp import MlpModel, train_mlp
from .serialization import FORMAT_VERSION, deserialize_model, serialize_model
from .svm import LinearSvmModel, train_svm
from .tree import DecisionTree, train_tree

__all__ = [
    "DecisionTree",
    "FORMAT_VERSION",
    "LinearSvmModel",
    "MlpModel",
    "Prediction",
    "TrainingSet",
    "apply_confidence_threshold",
    "deserialize_model",
    "predict",
    "predict_batch",
    "serialize_model",
    "standardization",
    "train_mlp",
    "train_svm",
    "train_tree",
    "undersample",
]


def predict_batch(model, X) -> tuple[np.ndarray, np.ndarray]:
    """Classes and confidences for each row of ``X`` (n, 5)."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, 5)
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    if len(X) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    cls, conf = model.predict_batch(X)
    return np.asarray(cls, dtype=np.int64), np.clip(conf, 0.0, 1.0)


def predict(model, features) -> Prediction:
    if isinstance(features, FeatureVector):
        features = features.as_array()
    cls, conf = predict_batch(model, features)
    return Prediction(PointClass(int(cls[0])), float(conf[0]))
