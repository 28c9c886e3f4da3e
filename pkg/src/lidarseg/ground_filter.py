"""Ground / non-ground partitioning.

:func:`csf_filter` drops a rigid cloth onto the upside-down cloud; points close
to the settled cloth are ground. :func:`ransac_plane` with
:func:`partition_by_plane` is the plane-fitting alternative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateGeometryError, InsufficientPointsError
from .kitti_io import PointCloud

log = logging.getLogger(__name__)


@dataclass
class ClothParams:
    cell_size: float = 0.5
    rigidness: int = 3
    gravity_step: float = 0.065
    iterations: int = 500
    convergence_eps: float = 0.005
    class_threshold: float = 0.3

    def validate(self) -> None:
        if not (self.cell_size > 0 and self.gravity_step > 0 and self.class_threshold > 0):
            raise ConfigError("cell_size, gravity_step and class_threshold must be > 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.rigidness not in (1, 2, 3):
            raise ConfigError("rigidness must be 1, 2 or 3")
        if self.convergence_eps < 0:
            raise ConfigError("convergence_eps must be >= 0")


@dataclass
class RansacParams:
    iterations: int = 200
    inlier_threshold: float = 0.2
    partition_threshold: float = 0.3

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("ransac iterations must be >= 1")
        if self.inlier_threshold <= 0 or self.partition_threshold <= 0:
            raise ConfigError("ransac thresholds must be > 0")


@dataclass
class GroundPartition:
    ground_indices: np.ndarray
    nonground_indices: np.ndarray
    warnings: int = 0

    @classmethod
    def from_mask(cls, ground: np.ndarray, warnings: int = 0) -> "GroundPartition":
        ground = np.asarray(ground, dtype=bool)
        return cls(np.flatnonzero(ground), np.flatnonzero(~ground), warnings)

    @property
    def size(self) -> int:
        return len(self.ground_indices) + len(self.nonground_indices)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[self.ground_indices] = True
        return m


@dataclass
class ClothGrid:
    """Cloth state in the inverted frame. Arrays are indexed ``[ix, iy]``."""

    origin: tuple[float, float]
    cell_size: float
    heights: np.ndarray
    movable: np.ndarray
    hit_floor: np.ndarray
    iterations_run: int = 0

    @property
    def width(self) -> int:
        return self.heights.shape[0]

    @property
    def depth(self) -> int:
        return self.heights.shape[1]

    def surface_at(self, xy: np.ndarray) -> np.ndarray:
        """Bilinearly interpolated cloth height (inverted frame) at ``xy``."""
        fx = np.clip((xy[:, 0] - self.origin[0]) / self.cell_size, 0, self.width - 1)
        fy = np.clip((xy[:, 1] - self.origin[1]) / self.cell_size, 0, self.depth - 1)
        i0 = np.minimum(np.floor(fx).astype(np.intp), max(self.width - 2, 0))
        j0 = np.minimum(np.floor(fy).astype(np.intp), max(self.depth - 2, 0))
        i1 = np.minimum(i0 + 1, self.width - 1)
        j1 = np.minimum(j0 + 1, self.depth - 1)
        tx, ty = fx - i0, fy - j0
        h = self.heights
        return ((1 - tx) * (1 - ty) * h[i0, j0] + tx * (1 - ty) * h[i1, j0]
                + (1 - tx) * ty * h[i0, j1] + tx * ty * h[i1, j1])


def _matchings(shape):
    """Split all 4-neighbour pairs into four groups, none of which shares a
    particle, so each group can be relaxed simultaneously with the same result
    as a one-pair-at-a-time sweep."""
    w, d = shape
    groups = []
    for axis in (0, 1):
        n = w if axis == 0 else d
        for parity in (0, 1):
            lo = np.arange(parity, n - 1, 2)
            if len(lo):
                groups.append((axis, lo))
    return groups


def _relax_group(h: np.ndarray, mov: np.ndarray, axis: int, lo: np.ndarray) -> None:
    if axis == 0:
        a, b = (lo, slice(None)), (lo + 1, slice(None))
    else:
        a, b = (slice(None), lo), (slice(None), lo + 1)
    ha, hb = h[a], h[b]
    ma, mb = mov[a], mov[b]
    diff = hb - ha
    both = ma & mb
    step_a = np.where(both, 0.25 * diff, np.where(ma & ~mb, 0.5 * diff, 0.0))
    step_b = np.where(both, -0.25 * diff, np.where(mb & ~ma, -0.5 * diff, 0.0))
    h[a] = ha + step_a
    h[b] = hb + step_b


def constraint_pass(heights: np.ndarray, movable: np.ndarray) -> None:
    """One in-place internal-constraint pass over every 4-neighbour pair."""
    for axis, lo in _matchings(heights.shape):
        _relax_group(heights, movable, axis, lo)


def constraint_pass_reference(heights: np.ndarray, movable: np.ndarray) -> None:
    """Pair-at-a-time version of :func:`constraint_pass` (same pair order)."""
    for axis, lo in _matchings(heights.shape):
        other = heights.shape[1 - axis]
        for i in lo.tolist():
            for j in range(other):
                p, q = ((i, j), (i + 1, j)) if axis == 0 else ((j, i), (j, i + 1))
                ha, hb = heights[p], heights[q]
                diff = hb - ha
                ma, mb = movable[p], movable[q]
                if ma and mb:
                    heights[p] = ha + 0.25 * diff
                    heights[q] = hb + -0.25 * diff
                elif ma:
                    heights[p] = ha + 0.5 * diff
                elif mb:
                    heights[q] = hb + -0.5 * diff


def simulate_cloth(xyz: np.ndarray, params: ClothParams, reference: bool = False) -> ClothGrid:
    """Drop the cloth onto the inverted cloud and return the settled grid."""
    params.validate()
    xyz = np.asarray(xyz, dtype=np.float64)
    inv_z = -xyz[:, 2]
    origin = (float(xyz[:, 0].min()), float(xyz[:, 1].min()))
    cs = params.cell_size
    w = int(np.ceil((xyz[:, 0].max() - origin[0]) / cs)) + 1
    d = int(np.ceil((xyz[:, 1].max() - origin[1]) / cs)) + 1

    ix = np.clip(np.rint((xyz[:, 0] - origin[0]) / cs).astype(np.intp), 0, w - 1)
    iy = np.clip(np.rint((xyz[:, 1] - origin[1]) / cs).astype(np.intp), 0, d - 1)
    floor = np.full((w, d), -np.inf)
    np.maximum.at(floor, (ix, iy), inv_z)

    heights = np.full((w, d), inv_z.max() + params.gravity_step)
    movable = np.ones((w, d), dtype=bool)
    relax = constraint_pass_reference if reference else constraint_pass

    it = 0
    for it in range(1, params.iterations + 1):
        before = heights.copy()
        heights[movable] -= params.gravity_step
        hit = movable & (heights <= floor)
        heights[hit] = floor[hit]
        movable &= ~hit
        for _ in range(params.rigidness):
            relax(heights, movable)
        if np.abs(heights - before).max() < params.convergence_eps:
            break
    return ClothGrid(origin, cs, heights, movable, floor, iterations_run=it)


def csf_filter(cloud: PointCloud, params: ClothParams | None = None) -> GroundPartition:
    params = params or ClothParams()
    params.validate()
    n = len(cloud)
    if n == 0:
        return GroundPartition(np.empty(0, np.intp), np.empty(0, np.intp))
    if n < 3:
        log.warning("cloud %s has %d points; cloth undefined, all non-ground", cloud.frame_id, n)
        return GroundPartition.from_mask(np.zeros(n, dtype=bool), warnings=1)
    xyz = cloud.xyz.astype(np.float64)
    grid = simulate_cloth(xyz, params)
    cloth_z = -grid.surface_at(xyz[:, :2])
    ground = np.abs(xyz[:, 2] - cloth_z) <= params.class_threshold
    return GroundPartition.from_mask(ground)


def cloth_to_ply(grid: ClothGrid) -> bytes:
    """Cloth as a quad mesh (re-inverted to the sensor frame) for debugging."""
    from .kitti_io import _ply

    w, d = grid.heights.shape
    gx, gy = np.meshgrid(np.arange(w), np.arange(d), indexing="ij")
    xyz = np.column_stack([
        grid.origin[0] + gx.ravel() * grid.cell_size,
        grid.origin[1] + gy.ravel() * grid.cell_size,
        -grid.heights.ravel(),
    ])
    rgb = np.where(grid.movable.ravel()[:, None], [[255, 255, 0]], [[255, 128, 0]])
    idx = np.arange(w * d).reshape(w, d)
    faces = np.column_stack([idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(),
                             idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()])
    return _ply(xyz, np.zeros(len(xyz)), rgb, faces)


# --------------------------------------------------------------------------
# plane fitting


@dataclass(frozen=True)
class Plane:
    """``a x + b y + c z + d = 0`` with a unit normal."""

    a: float
    b: float
    c: float
    d: float

    @classmethod
    def from_normal(cls, normal, d: float) -> "Plane":
        normal = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        normal, d = normal / norm, d / norm
        # canonical sign: first nonzero component of the normal, z first
        for comp in (normal[2], normal[1], normal[0]):
            if comp != 0:
                if comp < 0:
                    normal, d = -normal, -d
                break
        return cls(float(normal[0]), float(normal[1]), float(normal[2]), float(d))

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def distance(self, xyz: np.ndarray) -> np.ndarray:
        """Signed orthogonal distance."""
        return np.asarray(xyz, dtype=np.float64) @ self.normal + self.d


def fit_plane_lstsq(xyz: np.ndarray) -> Plane:
    xyz = np.asarray(xyz, dtype=np.float64)
    centroid = xyz.mean(axis=0)
    _, _, vt = np.linalg.svd(xyz - centroid, full_matrices=False)
    normal = vt[-1]
    return Plane.from_normal(normal, -normal @ centroid)


def ransac_plane(cloud, iterations: int, inlier_threshold: float, seed: int):
    """Returns ``(plane, inlier_indices)``; deterministic for a given seed."""
    xyz = np.asarray(cloud.xyz if isinstance(cloud, PointCloud) else cloud, dtype=np.float64)
    n = len(xyz)
    if n < 3:
        raise InsufficientPointsError(f"RANSAC needs at least 3 points, got {n}")
    if iterations < 1:
        raise ValueError("iterations must be positive")
    rng = np.random.default_rng(seed)
    scale = max(float(np.ptp(xyz, axis=0).max()), 1e-12)

    best_count, best_mask = -1, None
    for _ in range(iterations):
        i, j, k = rng.choice(n, size=3, replace=False)
        p0 = xyz[i]
        normal = np.cross(xyz[j] - p0, xyz[k] - p0)
        norm = np.linalg.norm(normal)
        if norm <= 1e-12 * scale * scale:
            continue
        normal /= norm
        mask = np.abs((xyz - p0) @ normal) <= inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_mask is None:
        raise DegenerateGeometryError("every RANSAC sample was collinear")

    plane = fit_plane_lstsq(xyz[best_mask])
    inliers = np.flatnonzero(np.abs(plane.distance(xyz)) <= inlier_threshold)
    return plane, inliers


def partition_by_plane(cloud, plane: Plane, threshold: float) -> GroundPartition:
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else cloud
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    return GroundPartition.from_mask(np.abs(plane.distance(xyz)) <= threshold)


def ransac_filter(cloud: PointCloud, params: RansacParams, seed: int) -> GroundPartition:
    if len(cloud) < 3:
        return GroundPartition.from_mask(np.zeros(len(cloud), dtype=bool), warnings=1)
    plane, _ = ransac_plane(cloud, params.iterations, params.inlier_threshold, seed)
    return partition_by_plane(cloud, plane, params.partition_threshold)
