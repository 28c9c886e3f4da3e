"""lidarseg: classify LiDAR frames into cars, pedestrians, cyclists and
ignored points via ground filtering, clustering, shape features and
trainable classifiers."""

__version__ = "0.1.0"

from .kitti_io import Point, PointClass, PointCloud  # noqa: E402

__all__ = ["Point", "PointClass", "PointCloud", "__version__"]
