"""Versioned binary model files.

Layout (little-endian)::

    b"LSEG" | u16 format version | u8 model kind | payload

The payload starts with a u8 feature-schema id followed by kind-specific
arrays, each stored as ``u8 dtype code, u8 ndim, u32 dims..., raw data``.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ModelFormatError
from .mlp import MlpModel
from .svm import LinearSvmModel
from .tree import DecisionTree

MAGIC = b"LSEG"
FORMAT_VERSION = 1
KIND_CODES = {"tree": 1, "svm": 2, "mlp": 3}
SCHEMA_CODES = {"eigenvalues": 0, "axis_variances": 1}
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int):
        self.parts.append(struct.pack("<B", v))

    def f64(self, v: float):
        self.parts.append(struct.pack("<d", v))

    def array(self, a):
        a = np.asarray(a)
        code = 1 if np.issubdtype(a.dtype, np.integer) else 0
        self.parts.append(struct.pack("<BB", code, a.ndim))
        self.parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        self.parts.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())

    def bytes(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data, self.pos = data, offset

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("model file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def array(self) -> np.ndarray:
        code, ndim = struct.unpack("<BB", self.take(2))
        if code not in _DTYPES:
            raise ModelFormatError(f"unknown array dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def serialize_model(model) -> bytes:
    kind = getattr(model, "kind", None)
    if kind not in KIND_CODES:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    w = _Writer()
    w.u8(SCHEMA_CODES[model.eigen_mode])
    if kind == "tree":
        for a in (model.feature, model.threshold, model.left, model.right, model.proba):
            w.array(a)
    elif kind == "svm":
        for a in (model.classes, model.weights, model.bias, model.mean, model.std):
            w.array(a)
    else:
        w.f64(model.dropout_rate)
        w.u8(len(model.weights))
        for wt, b in zip(model.weights, model.biases):
            w.array(wt)
            w.array(b)
        w.array(model.mean)
        w.array(model.std)
    header = MAGIC + struct.pack("<HB", FORMAT_VERSION, KIND_CODES[kind])
    return header + w.bytes()


def deserialize_model(data: bytes):
    if len(data) < 7 or data[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, kind_code = struct.unpack("<HB", data[4:7])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if kind_code not in kinds:
        raise ModelFormatError(f"unknown model kind tag {kind_code}")
    r = _Reader(data, 7)
    schemas = {v: k for k, v in SCHEMA_CODES.items()}
    schema_code = r.u8()
    if schema_code not in schemas:
        raise ModelFormatError(f"unknown feature schema {schema_code}")
    eigen_mode = schemas[schema_code]
    kind = kinds[kind_code]
    if kind == "tree":
        feature, threshold, left, right, proba = (r.array() for _ in range(5))
        model = DecisionTree(feature, threshold, left, right, proba, eigen_mode=eigen_mode)
    elif kind == "svm":
        classes, weights, bias, mean, std = (r.array() for _ in range(5))
        model = LinearSvmModel(classes, weights, bias, mean, std, eigen_mode=eigen_mode)
    else:
        dropout = r.f64()
        n_layers = r.u8()
        weights, biases = [], []
        for _ in range(n_layers):
            weights.append(r.array())
            biases.append(r.array())
        mean, std = r.array(), r.array()
        model = MlpModel(weights, biases, mean, std, dropout, eigen_mode)
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after model payload")
    return model
