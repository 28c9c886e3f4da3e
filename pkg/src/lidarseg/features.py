"""Per-cluster shape features.

A cluster is summarised by five numbers: the sorted eigenvalues of its spatial
covariance, its axis-aligned bounding-box volume and the variance of its
intensities. All variances use the population (1/N) normalisation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyClusterError, LidarSegError
from .kitti_io import PointClass

FEATURE_NAMES = ("eig1", "eig2", "eig3", "volume", "ivar")
CSV_HEADER = FEATURE_NAMES + ("class",)
EIGEN_MODES = ("eigenvalues", "axis_variances")


@dataclass(frozen=True)
class SymMatrix3:
    xx: float
    xy: float
    xz: float
    yy: float
    yz: float
    zz: float

    @classmethod
    def from_array(cls, m) -> "SymMatrix3":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])

    def to_array(self) -> np.ndarray:
        return np.array([[self.xx, self.xy, self.xz],
                         [self.xy, self.yy, self.yz],
                         [self.xz, self.yz, self.zz]])


@dataclass(frozen=True)
class FeatureVector:
    eig1: float
    eig2: float
    eig3: float
    volume: float
    intensity_variance: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def _as_cluster(cluster) -> np.ndarray:
    pts = np.asarray(cluster, dtype=np.float64)
    if pts.size == 0:
        raise EmptyClusterError("cluster has no points")
    return pts.reshape(-1, pts.shape[-1])


def covariance(cluster) -> SymMatrix3:
    pts = _as_cluster(cluster)[:, :3]
    centered = pts - pts.mean(axis=0)
    return SymMatrix3.from_array(centered.T @ centered / len(pts))


def eigenvalues_sym3(m) -> tuple[float, float, float]:
    """Eigenvalues of a symmetric 3x3 matrix, descending, by cyclic Jacobi.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``1e-12 * ||m||``.
    """
    if not isinstance(m, SymMatrix3):
        m = SymMatrix3.from_array(m)
    a = [[m.xx, m.xy, m.xz], [m.xy, m.yy, m.yz], [m.xz, m.yz, m.zz]]
    if not all(math.isfinite(v) for row in a for v in row):
        raise ValueError("matrix has non-finite entries")
    norm = math.sqrt(sum(v * v for row in a for v in row))
    tol = 1e-12 * norm

    for _ in range(64):
        off = math.sqrt(2.0 * (a[0][1] ** 2 + a[0][2] ** 2 + a[1][2] ** 2))
        if off <= tol:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p][q]
            if apq == 0.0:
                continue
            r = 3 - p - q
            diff = a[q][q] - a[p][p]
            if abs(apq) < 1e-150 * abs(diff):
                t = apq / diff  # small-angle limit, avoids overflow in theta
            else:
                theta = diff / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            a[p][p] -= t * apq
            a[q][q] += t * apq
            a[p][q] = a[q][p] = 0.0
            arp, arq = a[r][p], a[r][q]
            a[r][p] = a[p][r] = c * arp - s * arq
            a[r][q] = a[q][r] = s * arp + c * arq
    e = sorted((a[0][0], a[1][1], a[2][2]), reverse=True)
    return e[0], e[1], e[2]


def aabb_volume(cluster) -> float:
    pts = _as_cluster(cluster)[:, :3]
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(ext[0] * ext[1] * ext[2])


def intensity_variance(cluster) -> float:
    pts = _as_cluster(cluster)
    i = pts[:, 3]
    return float(np.mean((i - i.mean()) ** 2))


def _clamp_noise(values, scale: float) -> list[float]:
    # covariance is PSD; tiny negatives are round-off
    floor = -1e-9 * max(1.0, scale)
    return [0.0 if floor <= v < 0.0 else v for v in values]


def extract_features(cluster, eigen_mode: str = "eigenvalues") -> FeatureVector:
    """Five-feature summary of a cluster given as an ``(N, 4)`` array.

    With ``eigen_mode="axis_variances"`` the first three features are the raw
    x, y, z variances (in that order) instead of the eigenvalues.
    """
    pts = _as_cluster(cluster)
    cov = covariance(pts)
    if eigen_mode == "eigenvalues":
        eigs = _clamp_noise(eigenvalues_sym3(cov), cov.xx + cov.yy + cov.zz)
    elif eigen_mode == "axis_variances":
        eigs = [cov.xx, cov.yy, cov.zz]
    else:
        raise ValueError(f"unknown eigen_mode {eigen_mode!r}")
    return FeatureVector(*(float(v) for v in eigs), aabb_volume(pts), intensity_variance(pts))


# --------------------------------------------------------------------------
# feature dataset CSV


def write_feature_csv(rows: Iterable[tuple[FeatureVector, PointClass]], stream=None) -> str:
    """Write ``eig1,eig2,eig3,volume,ivar,class`` rows; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for fv, cls in rows:
        writer.writerow([repr(float(v)) for v in fv.as_array()] + [int(cls)])
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_feature_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse a feature CSV into ``(X, y)``; Ignored rows are kept."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise LidarSegError(f"feature CSV header must be {','.join(CSV_HEADER)}")
    X, y = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise LidarSegError(f"feature CSV line {lineno}: expected 6 fields, got {len(row)}")
        X.append([float(v) for v in row[:5]])
        y.append(int(row[5]))
    return np.array(X, dtype=np.float64).reshape(-1, 5), np.array(y, dtype=np.int64)
