"""Object-candidate clustering of non-ground points.

Mean shift climbs a Gaussian kernel density estimate from every point and
groups points whose climbs end at the same mode. DBSCAN is the alternative.
Both work on x, y, z only.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, EmptyInputError
from .kitti_io import PointCloud

# bound on the (block x N) distance matrix held in memory at once
_BLOCK_ELEMENTS = 1_000_000


@dataclass
class MeanShiftParams:
    bandwidth: float = 1.0
    shift_tolerance: float = 1e-3
    max_iterations: int = 300
    mode_merge_radius: float = 0.5
    min_cluster_size: int = 30

    def validate(self) -> None:
        if not (self.bandwidth > 0 and self.mode_merge_radius > 0 and self.shift_tolerance > 0):
            raise ConfigError("bandwidth, mode_merge_radius and shift_tolerance must be > 0")
        if self.max_iterations < 1 or self.min_cluster_size < 1:
            raise ConfigError("max_iterations and min_cluster_size must be >= 1")


@dataclass
class DbscanParams:
    eps: float = 0.6
    min_samples: int = 5

    def validate(self) -> None:
        if self.eps <= 0 or self.min_samples < 1:
            raise ConfigError("dbscan needs eps > 0 and min_samples >= 1")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    modes: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.modes)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point_index", "cluster_id"])
        w.writerows(enumerate(self.labels.tolist()))
        return buf.getvalue()

    @classmethod
    def empty(cls) -> "ClusterAssignment":
        return cls(np.empty(0, dtype=np.int64), np.empty((0, 3)))


def _positions(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        points = points.xyz
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    return arr.reshape(-1, arr.shape[-1])[:, :3]


def kde_density(query, points, bandwidth: float) -> float:
    pts = _positions(points)
    if len(pts) == 0:
        raise EmptyInputError("kde_density needs at least one point")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    d2 = np.sum((pts - np.asarray(query, dtype=np.float64)) ** 2, axis=1)
    norm = (2.0 * np.pi * bandwidth**2) ** -1.5
    return float(norm * np.mean(np.exp(-d2 / (2.0 * bandwidth**2))))


def mean_shift_step(x, points, bandwidth: float) -> np.ndarray:
    pts = _positions(points)
    if len(pts) == 0:
        raise EmptyInputError("mean_shift_step needs at least one point")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    x = np.asarray(x, dtype=np.float64)
    w = np.exp(-np.sum((pts - x) ** 2, axis=1) / (2.0 * bandwidth**2))
    total = w.sum()
    if total == 0.0:
        return x.copy()
    return (w @ pts) / total


def _shift_block(x: np.ndarray, pts: np.ndarray, bandwidth: float) -> np.ndarray:
    # per-axis differences and row sums (no BLAS) keep each row's arithmetic
    # independent of how many rows share the block
    d2 = np.zeros((len(x), len(pts)))
    for k in range(3):
        d2 += np.square(x[:, k, None] - pts[None, :, k])
    w = np.exp(d2 * (-0.5 / bandwidth**2))
    total = w.sum(axis=1)
    out = x.copy()
    ok = total > 0
    if ok.any():
        wk = w[ok]
        out[ok] = np.column_stack([(wk * pts[:, k]).sum(axis=1) for k in range(3)]) / total[ok, None]
    return out


def _climb(seeds: np.ndarray, pts: np.ndarray, params: MeanShiftParams) -> np.ndarray:
    x = seeds.copy()
    active = np.arange(len(x))
    for _ in range(params.max_iterations):
        if len(active) == 0:
            break
        new = _shift_block(x[active], pts, params.bandwidth)
        moved = np.linalg.norm(new - x[active], axis=1)
        x[active] = new
        active = active[moved >= params.shift_tolerance]
    return x


def converge_points(pts: np.ndarray, params: MeanShiftParams, n_jobs: int = 1,
                    block_size: int | None = None) -> np.ndarray:
    """Hill-climb every point to its density mode.

    Each point climbs independently, so blocks can run on ``n_jobs`` threads
    without changing the result.
    """
    block_size = block_size or max(1, _BLOCK_ELEMENTS // max(len(pts), 1))
    blocks = [slice(i, min(i + block_size, len(pts))) for i in range(0, len(pts), block_size)]
    if n_jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            parts = list(pool.map(lambda s: _climb(pts[s], pts, params), blocks))
    else:
        parts = [_climb(pts[s], pts, params) for s in blocks]
    return np.concatenate(parts) if parts else pts.copy()


def _renumber(labels: np.ndarray, pts: np.ndarray, min_size: int, mode_source: np.ndarray):
    """Drop small clusters, renumber by descending size (ties: lexicographic
    mode) and return ``(labels, modes)``."""
    out = np.full(len(labels), -1, dtype=np.int64)
    ids, counts = np.unique(labels[labels >= 0], return_counts=True)
    kept = []
    for cid, count in zip(ids.tolist(), counts.tolist()):
        if count >= min_size:
            mode = mode_source[labels == cid].mean(axis=0)
            kept.append((-count, tuple(mode.tolist()), cid, mode))
    kept.sort(key=lambda k: (k[0], k[1]))
    modes = np.empty((len(kept), 3))
    for new_id, (_, _, cid, mode) in enumerate(kept):
        out[labels == cid] = new_id
        modes[new_id] = mode
    return out, modes


def mean_shift_cluster(points, params: MeanShiftParams | None = None,
                       n_jobs: int = 1) -> ClusterAssignment:
    params = params or MeanShiftParams()
    params.validate()
    pts = _positions(points)
    if len(pts) == 0:
        return ClusterAssignment.empty()
    converged = converge_points(pts, params, n_jobs=n_jobs)

    # greedy agglomeration in point order against each cluster's first mode
    raw = np.empty(len(pts), dtype=np.int64)
    reps = np.empty((0, 3))
    r2 = params.mode_merge_radius ** 2
    for i, c in enumerate(converged):
        hit = np.flatnonzero(np.sum((reps - c) ** 2, axis=1) <= r2)
        if len(hit):
            raw[i] = hit[0]
            continue
        raw[i] = len(reps)
        reps = np.vstack([reps, c])
    labels, modes = _renumber(raw, pts, params.min_cluster_size, converged)
    return ClusterAssignment(labels, modes)


def dbscan(points, eps: float, min_samples: int) -> ClusterAssignment:
    """Density-based clustering; modes are cluster centroids.

    A border point reachable from several clusters joins the cluster of its
    lowest-index core neighbour.
    """
    if eps <= 0 or min_samples < 1:
        raise ValueError("dbscan needs eps > 0 and min_samples >= 1")
    pts = _positions(points)
    n = len(pts)
    if n == 0:
        return ClusterAssignment.empty()
    tree = cKDTree(pts)
    neighbors = tree.query_ball_point(pts, r=eps)
    core = np.array([len(nb) >= min_samples for nb in neighbors])

    raw = np.full(n, -1, dtype=np.int64)
    next_id = 0
    for i in np.flatnonzero(core):
        if raw[i] >= 0:
            continue
        raw[i] = next_id
        stack = [i]
        while stack:
            p = stack.pop()
            for q in neighbors[p]:
                if core[q] and raw[q] < 0:
                    raw[q] = next_id
                    stack.append(q)
        next_id += 1
    for i in np.flatnonzero(~core):
        core_nb = [q for q in neighbors[i] if core[q]]
        if core_nb:
            raw[i] = raw[min(core_nb)]

    labels, modes = _renumber(raw, pts, 1, pts)
    return ClusterAssignment(labels, modes)


def read_cluster_csv(text: str) -> np.ndarray:
    rows = list(csv.DictReader(io.StringIO(text)))
    return np.array([int(r["cluster_id"]) for r in rows], dtype=np.int64)
