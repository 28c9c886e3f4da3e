"""Synthetic scenes and feature sets with known ground truth.

Used by the test suite, the acceptance checks and ``lidarseg synth``. Objects
are filled volumes starting a short clearance above the ground so that none of
their points fall within the ground-classification band.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kitti_io import Calibration, ObjectLabel, PointClass, format_calibration, format_label

GROUND_Z = -1.7
# velodyne (x fwd, y left, z up) -> camera (x right, y down, z fwd)
KITTI_LIKE_VELO_TO_CAM = np.array([[0.0, -1.0, 0.0, 0.0],
                                   [0.0, 0.0, -1.0, 0.0],
                                   [1.0, 0.0, 0.0, 0.0]])

# kind: (length, width, height, shape, points, intensity mean, intensity spread)
OBJECT_SPECS = {
    "car": (4.0, 1.7, 1.5, "box", 600, 0.55, 0.25),
    "pedestrian": (0.6, 0.6, 1.75, "cylinder", 150, 0.30, 0.04),
    "cyclist": (1.8, 0.6, 1.7, "box", 250, 0.45, 0.12),
    "pole": (0.3, 0.3, 3.5, "cylinder", 120, 0.35, 0.03),
}
KIND_CLASS = {
    "car": PointClass.CAR,
    "pedestrian": PointClass.PEDESTRIAN,
    "cyclist": PointClass.CYCLIST,
    "pole": PointClass.IGNORED,
}


def plane_points(rng, n: int, extent: float = 40.0, z: float = GROUND_Z,
                 sigma: float = 0.01) -> np.ndarray:
    half = extent / 2
    xy = rng.uniform(-half, half, size=(n, 2))
    zs = z + rng.normal(0.0, sigma, size=n)
    return np.column_stack([xy, zs, rng.uniform(0.05, 0.3, size=n)])


def box_points(rng, n: int, center_xy, size=(2.0, 2.0, 1.5), base_z: float = GROUND_Z,
               clearance: float = 0.4) -> np.ndarray:
    """Points on the top and side faces of a box resting at ``base_z``.

    Side-face points below ``clearance`` are not generated (think of the gap
    under a vehicle body), so every point sits clear of the ground band.
    """
    lx, ly, h = size
    top_area = lx * ly
    side_h = h - clearance
    side_areas = np.array([lx, lx, ly, ly]) * side_h
    areas = np.concatenate([[top_area], side_areas])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.uniform(size=n), rng.uniform(size=n)
    x = (u - 0.5) * lx
    y = (v - 0.5) * ly
    z = np.full(n, h)
    side_z = clearance + rng.uniform(size=n) * side_h
    x = np.where(face == 3, -lx / 2, np.where(face == 4, lx / 2, x))
    y = np.where(face == 1, -ly / 2, np.where(face == 2, ly / 2, y))
    z = np.where(face == 0, z, side_z)
    return np.column_stack([x + center_xy[0], y + center_xy[1], z + base_z,
                            rng.uniform(0.3, 0.8, size=n)])


def planar_scene(rng, n_plane: int = 50_000, box_centers=((-8.0, -6.0), (6.0, 8.0), (9.0, -9.0)),
                 n_box: int = 2_000, extent: float = 40.0):
    """Plane at ``GROUND_Z`` plus resting boxes. Returns ``(points, is_plane)``."""
    parts = [plane_points(rng, n_plane, extent)]
    for c in box_centers:
        parts.append(box_points(rng, n_box, c))
    pts = np.vstack(parts)
    is_plane = np.zeros(len(pts), dtype=bool)
    is_plane[:n_plane] = True
    return pts, is_plane


def object_points(kind: str, rng, n: int | None = None, clearance: float = 0.4,
                  jitter: float = 0.08):
    """Local-frame points of an object (base at z=0, centered in xy) plus its
    ``(length, width, height)``."""
    length, width, height, shape, default_n, i_mean, i_spread = OBJECT_SPECS[kind]
    n = n or default_n
    scale = 1.0 + rng.uniform(-jitter, jitter, size=3)
    length, width, height = length * scale[0], width * scale[1], height * scale[2]
    z = rng.uniform(clearance, height, size=n)
    if shape == "box":
        x = rng.uniform(-length / 2, length / 2, size=n)
        y = rng.uniform(-width / 2, width / 2, size=n)
    else:
        r = (width / 2) * np.sqrt(rng.uniform(size=n))
        t = rng.uniform(0, 2 * np.pi, size=n)
        x, y = r * np.cos(t), r * np.sin(t)
    intensity = np.clip(rng.normal(i_mean, i_spread, size=n), 0.0, 1.0)
    return np.column_stack([x, y, z, intensity]), (length, width, height)


def place(local: np.ndarray, xy, yaw: float, base_z: float = GROUND_Z) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    out = local.copy()
    out[:, 0] = c * local[:, 0] - s * local[:, 1] + xy[0]
    out[:, 1] = s * local[:, 0] + c * local[:, 1] + xy[1]
    out[:, 2] = local[:, 2] + base_z
    return out


def velo_box_label(cls: PointClass, xy, yaw: float, dims, base_z: float, top_z: float) -> ObjectLabel:
    """KITTI label for a velodyne-frame box under :data:`KITTI_LIKE_VELO_TO_CAM`."""
    length, width, _ = dims
    # camera coords of the bottom-face center: (-y, -z, x)
    center = (-float(xy[1]), -float(base_z), float(xy[0]))
    return ObjectLabel(
        cls=cls,
        box_height=float(top_z - base_z),
        box_width=float(width),
        box_length=float(length),
        box_center=center,
        rotation_y=float(-yaw - np.pi / 2),
    )


@dataclass
class SyntheticFrame:
    frame_id: str
    points: np.ndarray
    labels: list
    calib: Calibration
    truth: np.ndarray
    n_objects: int


SLOTS = ((12.0, -10.0), (12.0, 10.0), (-11.0, 10.0), (-11.0, -10.0))


def synthetic_frame(frame_id: str, rng, kinds=("car", "pedestrian", "cyclist", "pole"),
                    n_plane: int = 6_000, extent: float = 44.0) -> SyntheticFrame:
    """A KITTI-like frame: ground plane plus one object per kind in fixed,
    well-separated slots (shuffled per frame)."""
    calib = Calibration(KITTI_LIKE_VELO_TO_CAM, np.eye(3))
    parts = [plane_points(rng, n_plane, extent)]
    truth = [np.full(n_plane, int(PointClass.IGNORED))]
    labels = []
    slots = rng.permutation(len(SLOTS))
    for kind, slot in zip(kinds, slots):
        local, dims = object_points(kind, rng)
        xy = np.array(SLOTS[slot]) + rng.uniform(-1.5, 1.5, size=2)
        yaw = float(rng.uniform(-np.pi, np.pi))
        pts = place(local, xy, yaw)
        parts.append(pts)
        cls = KIND_CLASS[kind]
        truth.append(np.full(len(pts), int(cls)))
        if cls is not PointClass.IGNORED:
            labels.append(velo_box_label(cls, xy, yaw,
                                         (dims[0] + 0.1, dims[1] + 0.1, dims[2]),
                                         GROUND_Z + 0.35, GROUND_Z + dims[2] + 0.05))
    points = np.vstack(parts).astype(np.float32)
    return SyntheticFrame(frame_id, points, labels, calib, np.concatenate(truth), len(kinds))


def write_kitti_layout(root, n_frames: int, seed: int, **frame_kwargs) -> list[str]:
    """Write ``velodyne/``, ``label_2/`` and ``calib/`` under ``root``."""
    root = Path(root)
    for sub in ("velodyne", "label_2", "calib"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = []
    for k in range(n_frames):
        fid = f"{k:06d}"
        frame = synthetic_frame(fid, rng, **frame_kwargs)
        (root / "velodyne" / f"{fid}.bin").write_bytes(frame.points.astype("<f4").tobytes())
        label_lines = [format_label(lbl) for lbl in frame.labels]
        label_lines.append("DontCare -1 -1 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10")
        (root / "label_2" / f"{fid}.txt").write_text("\n".join(label_lines) + "\n")
        (root / "calib" / f"{fid}.txt").write_text(format_calibration(frame.calib))
        ids.append(fid)
    return ids


# --------------------------------------------------------------------------
# feature sets


def cluster_feature_set(rng, n_per_class: int, kinds=("car", "pedestrian"), eigen_mode="eigenvalues"):
    """Features of randomly sized, rotated synthetic object clusters."""
    from .features import extract_features

    X, y = [], []
    for kind in kinds:
        for _ in range(n_per_class):
            n = int(rng.integers(40, 200))
            local, _ = object_points(kind, rng, n=n, jitter=0.25)
            pts = place(local, (0.0, 0.0), float(rng.uniform(-np.pi, np.pi)))
            X.append(extract_features(pts, eigen_mode).as_array())
            y.append(int(KIND_CLASS[kind]))
    return np.array(X), np.array(y, dtype=np.int64)


def separable_feature_set(rng, n_per_class: int):
    """Three classes split by features 0 and 1 with wide margins:
    Car has feature 0 in [8, 10]; Pedestrian and Cyclist share feature 0 in
    [0, 3] and differ on feature 1 ([0, 1] vs [3, 4])."""
    def block(f0, f1):
        rows = rng.uniform(0, 1, size=(n_per_class, 5))
        rows[:, 0] = rng.uniform(*f0, size=n_per_class)
        rows[:, 1] = rng.uniform(*f1, size=n_per_class)
        return rows

    X = np.vstack([block((8, 10), (0, 1)), block((0, 3), (0, 1)), block((0, 3), (3, 4))])
    y = np.repeat([int(PointClass.CAR), int(PointClass.PEDESTRIAN), int(PointClass.CYCLIST)],
                  n_per_class)
    return X, y
