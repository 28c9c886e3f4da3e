"""KITTI object-detection I/O: velodyne frames, labels, calibration, PLY export.

Velodyne frames are little-endian ``float32`` quadruples ``(x, y, z, reflectance)``.
Clouds are kept as ``(N, 4)`` ``float32`` arrays so a parse/serialize round trip
is bit-exact.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    CalibrationError,
    LabelParseError,
    MalformedFrameError,
    MalformedPointError,
    MissingCalibrationError,
)

log = logging.getLogger(__name__)

POINT_DTYPE = np.dtype("<f4")
BYTES_PER_POINT = 16


class PointClass(enum.IntEnum):
    """Per-point class. The integer values are the on-disk encoding."""

    CAR = 0
    PEDESTRIAN = 1
    CYCLIST = 2
    IGNORED = 3

    @classmethod
    def from_kitti(cls, type_name: str) -> "PointClass":
        return _KITTI_TYPES.get(type_name, cls.IGNORED)


_KITTI_TYPES = {
    "Car": PointClass.CAR,
    "Pedestrian": PointClass.PEDESTRIAN,
    "Cyclist": PointClass.CYCLIST,
}

CLASS_COLORS = {
    PointClass.CAR: (255, 0, 0),
    PointClass.PEDESTRIAN: (0, 255, 0),
    PointClass.CYCLIST: (0, 0, 255),
    PointClass.IGNORED: (128, 128, 128),
}


class Point(NamedTuple):
    x: float
    y: float
    z: float
    intensity: float


@dataclass
class PointCloud:
    """One LiDAR frame.

    ``points`` is an ``(N, 4)`` array with columns x, y, z, intensity. Row ``i``
    always refers to the same return.
    """

    frame_id: str
    points: np.ndarray
    clamped_intensities: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        self.points = pts

    @classmethod
    def from_points(cls, frame_id: str, points: Iterable[Sequence[float]]) -> "PointCloud":
        arr = np.array([tuple(p) for p in points], dtype=POINT_DTYPE).reshape(-1, 4)
        return cls(frame_id, arr)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i: int) -> Point:
        return Point(*(float(v) for v in self.points[i]))

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.frame_id, self.points[np.asarray(indices, dtype=np.intp)])


@dataclass(frozen=True)
class ObjectLabel:
    """A KITTI 3D box. ``box_center`` is the bottom-face center in the
    rectified camera frame (x right, y down, z forward)."""

    cls: PointClass
    box_height: float
    box_width: float
    box_length: float
    box_center: tuple[float, float, float]
    rotation_y: float
    type_name: str = ""

    @property
    def volume(self) -> float:
        return self.box_height * self.box_width * self.box_length


@dataclass
class Calibration:
    velo_to_cam: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.zeros((3, 1))]))
    rect: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.velo_to_cam = np.asarray(self.velo_to_cam, dtype=np.float64).reshape(3, 4)
        self.rect = np.asarray(self.rect, dtype=np.float64).reshape(3, 3)

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.velo_to_cam)) and np.all(np.isfinite(self.rect))):
            raise CalibrationError("calibration contains non-finite values")
        err = np.abs(self.rect @ self.rect.T - np.eye(3)).max()
        if err > 1e-4:
            raise CalibrationError(f"R0_rect is not orthonormal (max deviation {err:.3g})")

    def velo_to_rect(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        cam = xyz @ self.velo_to_cam[:, :3].T + self.velo_to_cam[:, 3]
        return cam @ self.rect.T


# --------------------------------------------------------------------------
# velodyne frames


def parse_velodyne_bin(data: bytes, frame_id: str = "") -> PointCloud:
    if len(data) % BYTES_PER_POINT:
        raise MalformedFrameError(
            f"frame length {len(data)} is not a multiple of {BYTES_PER_POINT} bytes"
        )
    pts = np.frombuffer(data, dtype=POINT_DTYPE).reshape(-1, 4).copy()
    finite = np.isfinite(pts).all(axis=1)
    if not finite.all():
        raise MalformedPointError(int(np.flatnonzero(~finite)[0]))
    out_of_range = (pts[:, 3] < 0) | (pts[:, 3] > 1)
    n_clamped = int(out_of_range.sum())
    if n_clamped:
        log.warning("frame %s: clamped %d intensities into [0, 1]", frame_id, n_clamped)
        np.clip(pts[:, 3], 0, 1, out=pts[:, 3])
    return PointCloud(frame_id, pts, clamped_intensities=n_clamped)


def serialize_velodyne(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype=POINT_DTYPE).tobytes()


def read_velodyne(path) -> PointCloud:
    from pathlib import Path

    path = Path(path)
    return parse_velodyne_bin(path.read_bytes(), frame_id=path.stem)


# --------------------------------------------------------------------------
# labels and calibration


def parse_label_file(text: str) -> list[ObjectLabel]:
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        cols = line.split()
        if not cols:
            continue
        # a 16th column (score) appears in detection outputs
        if len(cols) not in (15, 16):
            raise LabelParseError(lineno, f"expected 15 columns, got {len(cols)}")
        try:
            nums = [float(c) for c in cols[1:15]]
        except ValueError as exc:
            raise LabelParseError(lineno, f"non-numeric field ({exc})") from None
        h, w, l = nums[7:10]
        cls = PointClass.from_kitti(cols[0])
        if cls is not PointClass.IGNORED and min(h, w, l) <= 0:
            raise LabelParseError(lineno, "box dimensions must be positive")
        labels.append(
            ObjectLabel(
                cls=cls,
                box_height=h,
                box_width=w,
                box_length=l,
                box_center=(nums[10], nums[11], nums[12]),
                rotation_y=nums[13],
                type_name=cols[0],
            )
        )
    return labels


def parse_calibration(text: str) -> Calibration:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        entries[key.strip()] = (lineno, rest.split())

    def floats(key: str, count: int) -> np.ndarray:
        if key not in entries:
            raise MissingCalibrationError(f"calibration key {key!r} not found")
        lineno, vals = entries[key]
        if len(vals) != count:
            raise CalibrationError(f"line {lineno}: {key} needs {count} values, got {len(vals)}")
        try:
            return np.array([float(v) for v in vals])
        except ValueError:
            raise CalibrationError(f"line {lineno}: non-numeric value in {key}") from None

    return Calibration(
        velo_to_cam=floats("Tr_velo_to_cam", 12).reshape(3, 4),
        rect=floats("R0_rect", 9).reshape(3, 3),
    )


def format_calibration(calib: Calibration) -> str:
    def row(values):
        return " ".join(repr(float(v)) for v in np.ravel(values))

    return f"R0_rect: {row(calib.rect)}\nTr_velo_to_cam: {row(calib.velo_to_cam)}\n"


def format_label(label: ObjectLabel) -> str:
    name = label.type_name or {
        PointClass.CAR: "Car",
        PointClass.PEDESTRIAN: "Pedestrian",
        PointClass.CYCLIST: "Cyclist",
    }.get(label.cls, "DontCare")
    cx, cy, cz = label.box_center
    vals = [0.0, 0, -10.0, 0.0, 0.0, 0.0, 0.0,
            label.box_height, label.box_width, label.box_length, cx, cy, cz, label.rotation_y]
    return name + " " + " ".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in vals)


# --------------------------------------------------------------------------
# ground truth assignment


def points_in_box(cam_xyz: np.ndarray, label: ObjectLabel) -> np.ndarray:
    """Boolean mask of rectified-camera points inside ``label``'s box.

    The box spans ``[-l/2, l/2]`` along its local x, ``[-w/2, w/2]`` along local z
    and ``[-h, 0]`` along y (camera y points down, so the box rises from its
    bottom-face center). Boundaries are inclusive.
    """
    c, s = np.cos(label.rotation_y), np.sin(label.rotation_y)
    d = cam_xyz - np.asarray(label.box_center)
    # local = R_y(ry)^T d
    lx = c * d[:, 0] - s * d[:, 2]
    lz = s * d[:, 0] + c * d[:, 2]
    ly = d[:, 1]
    return (
        (np.abs(lx) <= label.box_length / 2)
        & (np.abs(lz) <= label.box_width / 2)
        & (ly >= -label.box_height)
        & (ly <= 0)
    )


def label_points(cloud: PointCloud, labels: Sequence[ObjectLabel], calib: Calibration) -> np.ndarray:
    """Per-point :class:`PointClass` codes (``int8`` array).

    Overlapping boxes resolve to the smallest volume, then earliest label.
    DontCare and unknown types are Ignored boxes and win like any other.
    """
    calib.validate()
    n = len(cloud)
    classes = np.full(n, int(PointClass.IGNORED), dtype=np.int8)
    if n == 0 or not labels:
        return classes
    cam = calib.velo_to_rect(cloud.xyz)
    best_volume = np.full(n, np.inf)
    for label in labels:
        inside = points_in_box(cam, label) & (label.volume < best_volume)
        classes[inside] = int(label.cls)
        best_volume[inside] = label.volume
    return classes


# --------------------------------------------------------------------------
# PLY export


def _ply(xyz: np.ndarray, intensity: np.ndarray, rgb: np.ndarray,
         faces: np.ndarray | None = None) -> bytes:
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(xyz)}",
        "property float x",
        "property float y",
        "property float z",
        "property float intensity",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if faces is not None:
        header += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    lines = header
    for (x, y, z), i, (r, g, b) in zip(xyz.tolist(), intensity.tolist(), rgb.tolist()):
        lines.append(f"{x:.9g} {y:.9g} {z:.9g} {i:.9g} {r} {g} {b}")
    if faces is not None:
        for f in faces.tolist():
            lines.append(f"{len(f)} " + " ".join(map(str, f)))
    return ("\n".join(lines) + "\n").encode("ascii")


def export_ply(cloud: PointCloud, classes: Sequence[int]) -> bytes:
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    if classes.shape[0] != len(cloud):
        raise ValueError(f"{classes.shape[0]} classes for {len(cloud)} points")
    palette = np.array([CLASS_COLORS[c] for c in PointClass], dtype=np.int64)
    return _ply(cloud.xyz, cloud.intensity, palette[classes])


def cluster_color(cluster_id: int) -> tuple[int, int, int]:
    """Deterministic color for a cluster id; noise (-1) is gray."""
    if cluster_id < 0:
        return CLASS_COLORS[PointClass.IGNORED]
    # Knuth multiplicative hash spreads neighbouring ids across the cube
    h = (cluster_id * 2654435761 + 0x9E3779B9) & 0xFFFFFFFF
    return (64 + (h & 0xBF), 64 + ((h >> 8) & 0xBF), 64 + ((h >> 16) & 0xBF))


def export_cluster_ply(cloud: PointCloud, cluster_ids: Sequence[int]) -> bytes:
    ids = np.asarray(cluster_ids, dtype=np.int64).reshape(-1)
    if ids.shape[0] != len(cloud):
        raise ValueError(f"{ids.shape[0]} cluster ids for {len(cloud)} points")
    colors = {int(c): cluster_color(int(c)) for c in np.unique(ids)}
    rgb = np.array([colors[int(c)] for c in ids], dtype=np.int64).reshape(-1, 3)
    return _ply(cloud.xyz, cloud.intensity, rgb)


def read_ply_vertices(data: bytes) -> np.ndarray:
    """Parse the vertex block of an ASCII PLY written by this module."""
    text = data.decode("ascii").splitlines()
    n = 0
    for k, line in enumerate(text):
        if line.startswith("element vertex"):
            n = int(line.split()[2])
        if line == "end_header":
            body = text[k + 1:k + 1 + n]
            break
    else:
        raise ValueError("missing end_header")
    return np.array([[float(v) for v in row.split()] for row in body]).reshape(n, -1)
