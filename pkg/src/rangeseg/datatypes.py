"""Core containers: point clouds, range-images and labeled samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, MissingChannel, ShapeMismatch

BASE_CHANNELS = ("x", "y", "z", "reflectance", "depth")

CLASS_NAMES = ("background", "car", "pedestrian", "cyclist")
NUM_CLASSES = len(CLASS_NAMES)
NONE_LABEL = -1  # prediction value at invalid pixels


@dataclass
class PointCloud:
    """Ordered points with reflectance.

    ``points`` is (n, 3) float32 in meters, ``reflectance`` is (n,) float32.
    ``n_clamped`` counts reflectance values that were clamped into [0, 1]
    while parsing.
    """

    points: np.ndarray
    reflectance: np.ndarray
    n_clamped: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.reflectance = np.asarray(self.reflectance, dtype=np.float32).reshape(-1)
        if len(self.points) != len(self.reflectance):
            raise LengthMismatch(
                f"{len(self.points)} points but {len(self.reflectance)} reflectance values"
            )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def count(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3), np.float32), np.zeros(0, np.float32))


@dataclass
class RangeImage:
    """H x W grid of per-pixel channels with a validity mask.

    ``channels`` maps a name to an (H, W) float32 plane; ``mask`` is an
    (H, W) uint8 plane (1 = valid); ``point_index`` holds the source point of
    each valid pixel and -1 elsewhere.
    """

    channels: dict[str, np.ndarray]
    mask: np.ndarray
    point_index: np.ndarray | None = None
    stats: object | None = None  # ProjectionStats when produced by project()

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        for name, plane in self.channels.items():
            if plane.shape != self.mask.shape:
                raise ShapeMismatch(f"channel {name!r} has shape {plane.shape}, mask {self.mask.shape}")
        if self.point_index is not None and self.point_index.shape != self.mask.shape:
            raise ShapeMismatch("point_index shape differs from mask")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def H(self) -> int:
        return self.mask.shape[0]

    @property
    def W(self) -> int:
        return self.mask.shape[1]

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise MissingChannel(f"range-image has no {name!r} channel") from None

    def stack(self, names) -> np.ndarray:
        """(len(names), H, W) array of the requested channels."""
        return np.stack([self.channel(n) for n in names])

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class LabeledSample:
    """A range-image with x, y, z, reflectance, depth and an integer label map."""

    image: RangeImage
    labels: np.ndarray
    name: str = field(default="")

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != self.image.shape:
            raise ShapeMismatch(f"labels {self.labels.shape} vs image {self.image.shape}")
