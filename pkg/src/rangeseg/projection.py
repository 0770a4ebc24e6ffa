"""Spherical projection of point clouds onto the sensor grid, and back."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datatypes import BASE_CHANNELS, PointCloud, RangeImage
from .errors import BadMagic, DegenerateConfig, FormatError, ZeroPoint

TWO_PI = 2.0 * math.pi

# HDL-64E vertical field of view, in degrees
HDL64_ELEVATION_LOW = -24.8
HDL64_ELEVATION_HIGH = 2.0


@dataclass(frozen=True)
class GridConfig:
    """Binning of azimuth/elevation into a H x W grid.

    Column ``c`` covers azimuths ``[theta_origin + c*delta_theta,
    theta_origin + (c+1)*delta_theta)``, row ``r`` likewise for elevation
    starting at ``phi_origin``.  Row 0 is therefore the lowest beam.
    """

    H: int = 64
    W: int = 512
    delta_theta: float = math.radians(90.0) / 512
    delta_phi: float = math.radians(HDL64_ELEVATION_HIGH - HDL64_ELEVATION_LOW) / 64
    theta_origin: float = math.radians(-45.0)
    phi_origin: float = math.radians(HDL64_ELEVATION_LOW)

    def __post_init__(self):
        if self.H < 1 or self.W < 1:
            raise DegenerateConfig(f"grid must be at least 1x1, got {self.H}x{self.W}")
        if not (self.delta_theta > 0 and self.delta_phi > 0):
            raise DegenerateConfig("angular steps must be positive")
        if self.W * self.delta_theta > TWO_PI + 1e-9:
            raise DegenerateConfig("azimuth field of view exceeds a full revolution")

    @classmethod
    def from_fov(
        cls,
        H: int = 64,
        W: int = 512,
        azimuth_fov: float = 90.0,
        elevation_low: float = HDL64_ELEVATION_LOW,
        elevation_high: float = HDL64_ELEVATION_HIGH,
        azimuth_center: float = 0.0,
    ) -> "GridConfig":
        """Grid spanning the given field of view (angles in degrees)."""
        if elevation_high <= elevation_low or azimuth_fov <= 0:
            raise DegenerateConfig("empty field of view")
        return cls(
            H=H,
            W=W,
            delta_theta=math.radians(azimuth_fov) / W,
            delta_phi=math.radians(elevation_high - elevation_low) / H,
            theta_origin=math.radians(azimuth_center - azimuth_fov / 2.0),
            phi_origin=math.radians(elevation_low),
        )

    @property
    def azimuth_fov(self) -> float:
        return self.W * self.delta_theta

    def pixel_center_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth (W,) and elevation (H,) of the center of each column/row."""
        theta = self.theta_origin + (np.arange(self.W) + 0.5) * self.delta_theta
        phi = self.phi_origin + (np.arange(self.H) + 0.5) * self.delta_phi
        theta = np.where(theta > math.pi, theta - TWO_PI, theta)
        return theta, phi


@dataclass
class ProjectionStats:
    valid: int = 0
    dropped_oov: int = 0
    dropped_collision: int = 0

    def __str__(self) -> str:
        return f"valid={self.valid} dropped_oov={self.dropped_oov} dropped_collision={self.dropped_collision}"


def spherical_coords(p) -> tuple[float, float, float]:
    """(azimuth, elevation, depth) of a 3D point.

    Azimuth lies in (-pi, pi] and is 0 on the vertical axis (x = y = 0).
    """
    x, y, z = (float(v) for v in p)
    d = math.sqrt(x * x + y * y + z * z)
    if d == 0.0:
        raise ZeroPoint("the origin has no direction")
    theta = 0.0 if x == 0.0 and y == 0.0 else math.atan2(y, x)
    if theta == -math.pi:
        theta = math.pi
    return theta, math.asin(max(-1.0, min(1.0, z / d))), d


def grid_indices(points: np.ndarray, cfg: GridConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row, column and depth of each point; rows/cols may fall outside the grid.

    Zero points get row = col = -1.
    """
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    d = np.sqrt(x * x + y * y + z * z)
    nonzero = d > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where((x == 0) & (y == 0), 0.0, np.arctan2(y, x))
        theta = np.where(theta == -math.pi, math.pi, theta)
        phi = np.arcsin(np.clip(np.where(nonzero, z / d, 0.0), -1.0, 1.0))
    az = theta - cfg.theta_origin
    az = np.where(az < 0, az + TWO_PI, az)
    col = np.floor(az / cfg.delta_theta)
    row = np.floor((phi - cfg.phi_origin) / cfg.delta_phi)
    col = np.where(nonzero, col, -1).astype(np.int64)
    row = np.where(nonzero, row, -1).astype(np.int64)
    return row, col, d


def project(cloud: PointCloud, cfg: GridConfig | None = None) -> RangeImage:
    """Bin a cloud into a range-image.

    Points outside the grid (or at the origin) are dropped; when several
    points share a pixel the nearest one is kept, with remaining ties broken
    on (x, y, z, reflectance) so the result never depends on input order.
    Drop counts are available as ``image.stats``.
    """
    cfg = cfg or GridConfig()
    H, W = cfg.H, cfg.W
    n = len(cloud)
    row, col, d = grid_indices(cloud.points, cfg)
    inside = (row >= 0) & (row < H) & (col >= 0) & (col < W)
    idx = np.flatnonzero(inside)
    pix = row[idx] * W + col[idx]
    pts = cloud.points[idx]
    order = np.lexsort((cloud.reflectance[idx], pts[:, 2], pts[:, 1], pts[:, 0], d[idx], pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    winners = idx[order[first]]
    wpix = pix_sorted[first]

    mask = np.zeros(H * W, dtype=np.uint8)
    mask[wpix] = 1
    point_index = np.full(H * W, -1, dtype=np.int64)
    point_index[wpix] = winners
    channels = {}
    values = {
        "x": cloud.points[winners, 0],
        "y": cloud.points[winners, 1],
        "z": cloud.points[winners, 2],
        "reflectance": cloud.reflectance[winners],
        "depth": d[winners].astype(np.float32),
    }
    for name in BASE_CHANNELS:
        plane = np.zeros(H * W, dtype=np.float32)
        plane[wpix] = values[name]
        channels[name] = plane.reshape(H, W)
    stats = ProjectionStats(
        valid=len(winners),
        dropped_oov=int(n - len(idx)),
        dropped_collision=int(len(idx) - len(winners)),
    )
    return RangeImage(channels, mask.reshape(H, W), point_index.reshape(H, W), stats)


def unproject(img: RangeImage) -> PointCloud:
    """Points of the valid pixels, in row-major pixel order."""
    for name in ("x", "y", "z", "reflectance"):
        img.channel(name)
    valid = img.mask.astype(bool)
    pts = np.stack([img.channels[c][valid] for c in ("x", "y", "z")], axis=1)
    return PointCloud(pts, img.channels["reflectance"][valid])


# serialization --------------------------------------------------------------------

_RI_MAGIC = "RANGEIMAGE"


def save_range_image(path, img: RangeImage) -> None:
    """Write a range-image: textual manifest, then little-endian planes.

    The manifest lists H, W and the channel names; the payload holds one
    float32 plane per channel, the mask as a float32 plane, and the
    point-index map as int64 when present.
    """
    names = list(img.channels)
    lines = [
        f"{_RI_MAGIC} 1",
        f"H {img.H}",
        f"W {img.W}",
        "channels " + " ".join(names),
        "mask 1",
        f"point_index {int(img.point_index is not None)}",
        "END",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for name in names:
            fh.write(np.ascontiguousarray(img.channels[name], dtype="<f4").tobytes())
        fh.write(img.mask.astype("<f4").tobytes())
        if img.point_index is not None:
            fh.write(img.point_index.astype("<i8").tobytes())


def load_range_image(path) -> RangeImage:
    blob = Path(path).read_bytes()
    end = blob.find(b"\nEND\n")
    if not blob.startswith(_RI_MAGIC.encode()) or end < 0:
        raise BadMagic(f"{path} is not a range-image file")
    fields = {}
    for line in blob[:end].decode("ascii").split("\n")[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        H, W = int(fields["H"]), int(fields["W"])
        names = fields["channels"].split()
        has_index = fields.get("point_index", "0") == "1"
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad range-image manifest: {exc}") from None
    offset = end + len(b"\nEND\n")
    plane = H * W * 4
    expected = offset + plane * (len(names) + 1) + (H * W * 8 if has_index else 0)
    if len(blob) != expected:
        raise FormatError(f"range-image payload has {len(blob) - offset} bytes, expected {expected - offset}")

    def take(dtype, itemsize):
        nonlocal offset
        arr = np.frombuffer(blob, dtype=dtype, count=H * W, offset=offset).reshape(H, W)
        offset += H * W * itemsize
        return arr.copy()

    channels = {name: take("<f4", 4).astype(np.float32) for name in names}
    mask = take("<f4", 4).astype(np.uint8)
    point_index = take("<i8", 8).astype(np.int64) if has_index else None
    return RangeImage(channels, mask, point_index)
