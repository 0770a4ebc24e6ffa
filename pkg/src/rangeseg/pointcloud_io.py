"""Readers and writers for raw scans, labeled samples and PLY exports."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

from .datatypes import BASE_CHANNELS, NUM_CLASSES, LabeledSample, PointCloud, RangeImage
from .errors import (
    BadMagic,
    FormatError,
    LengthMismatch,
    NonFiniteValue,
    SizeNotMultipleOf16,
    UnsupportedDtypeOrShape,
)

log = logging.getLogger(__name__)

SAMPLE_SHAPE = (64, 512, 6)
LABEL_TOLERANCE = 0.01

# RGB per class id; invalid pixels are black in image renders
CLASS_COLORS = {
    0: (128, 128, 128),  # background, gray
    1: (0, 0, 255),  # car, blue
    2: (0, 255, 0),  # pedestrian, lime
    3: (255, 0, 0),  # cyclist, red
}
INVALID_COLOR = (0, 0, 0)


# KITTI velodyne scans -------------------------------------------------------------

def decode_kitti_bin(raw: bytes) -> PointCloud:
    if len(raw) % 16:
        raise SizeNotMultipleOf16(f"scan has {len(raw)} bytes, not a multiple of 16")
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float32)
    bad = ~np.isfinite(rec).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteValue(i, f"record {i} has a non-finite value: {rec[i].tolist()}")
    refl = rec[:, 3].copy()
    out_of_range = (refl < 0) | (refl > 1)
    n_clamped = int(out_of_range.sum())
    if n_clamped:
        log.warning("clamped %d reflectance values into [0, 1]", n_clamped)
        refl[refl < 0] = 0.0
        refl[refl > 1] = 1.0
    return PointCloud(rec[:, :3].copy(), refl, n_clamped=n_clamped)


def read_kitti_bin(path: str | os.PathLike) -> PointCloud:
    """Read a KITTI velodyne scan: little-endian float32 (x, y, z, r) records.

    Reflectance outside [0, 1] is clamped; the number of clamped values is
    kept in ``cloud.n_clamped``.
    """
    return decode_kitti_bin(Path(path).read_bytes())


def encode_kitti_bin(cloud: PointCloud) -> bytes:
    rec = np.empty((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    rec[:, 3] = cloud.reflectance
    return rec.tobytes()


def write_bin(cloud: PointCloud, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_kitti_bin(cloud))


# labeled range-image samples (.npy, 64 x 512 x 6) -------------------------------

def _read_npy_header(fh) -> tuple[tuple[int, ...], bool, np.dtype]:
    try:
        version = npy_format.read_magic(fh)
    except ValueError as exc:
        raise BadMagic(str(exc)) from None
    if version != (1, 0):
        raise UnsupportedDtypeOrShape(f"npy format version {version} (expected 1.0)")
    try:
        return npy_format.read_array_header_1_0(fh)
    except ValueError as exc:
        raise UnsupportedDtypeOrShape(f"unreadable npy header: {exc}") from None


def sample_from_array(arr: np.ndarray, name: str = "") -> LabeledSample:
    """Build a LabeledSample from a (H, W, 6) x/y/z/intensity/depth/label array."""
    if arr.ndim != 3 or arr.shape[2] != 6:
        raise UnsupportedDtypeOrShape(f"expected (H, W, 6) sample, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise UnsupportedDtypeOrShape("sample contains non-finite values")
    depth = arr[..., 4]
    mask = (depth > 0).astype(np.uint8)
    raw_labels = arr[..., 5].astype(np.float64)
    labels = np.rint(raw_labels)
    if np.abs(raw_labels - labels).max(initial=0.0) > LABEL_TOLERANCE:
        raise UnsupportedDtypeOrShape("label channel holds non-integral values")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= NUM_CLASSES:
        raise UnsupportedDtypeOrShape(f"labels outside 0..{NUM_CLASSES - 1}")
    labels = labels.astype(np.int64) * mask
    channels = {}
    for c, chan in enumerate(BASE_CHANNELS):
        channels[chan] = np.where(mask == 1, arr[..., c], 0).astype(np.float32)
    return LabeledSample(RangeImage(channels, mask), labels, name=name)


def read_labeled_sample(path: str | os.PathLike, expected_shape=SAMPLE_SHAPE) -> LabeledSample:
    """Read a range-image sample stored as a version 1.0 ``.npy`` file.

    Channel order is x, y, z, intensity, depth, label.  Pixels with
    positive depth are valid; labels are rounded to the nearest integer.
    Pass ``expected_shape=None`` to accept any (H, W, 6) sample.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        shape, fortran, dtype = _read_npy_header(fh)
        if dtype not in (np.dtype("<f4"), np.dtype("<f8")):
            raise UnsupportedDtypeOrShape(f"dtype {dtype} (expected little-endian float32)")
        if expected_shape is not None and tuple(shape) != tuple(expected_shape):
            raise UnsupportedDtypeOrShape(f"shape {shape} (expected {tuple(expected_shape)})")
        if len(shape) != 3 or shape[2] != 6:
            raise UnsupportedDtypeOrShape(f"shape {shape} (expected (H, W, 6))")
        count = int(np.prod(shape))
        data = fh.read(count * dtype.itemsize)
    if len(data) != count * dtype.itemsize:
        raise UnsupportedDtypeOrShape(f"{path} is truncated")
    order = "F" if fortran else "C"
    arr = np.frombuffer(data, dtype=dtype).reshape(shape, order=order).astype(np.float32)
    return sample_from_array(arr, name=path.stem)


def sample_to_array(sample: LabeledSample) -> np.ndarray:
    img = sample.image
    arr = np.zeros(img.shape + (6,), dtype=np.float32)
    for c, chan in enumerate(BASE_CHANNELS):
        arr[..., c] = img.channel(chan)
    arr[..., 5] = sample.labels
    return arr


def write_labeled_sample(sample: LabeledSample, path: str | os.PathLike) -> None:
    arr = np.ascontiguousarray(sample_to_array(sample), dtype="<f4")
    with open(path, "wb") as fh:
        npy_format.write_array(fh, arr, version=(1, 0), allow_pickle=False)


# PLY export -------------------------------------------------------------------------

def write_colored_ply(cloud: PointCloud, labels, path: str | os.PathLike) -> None:
    """ASCII PLY with one colored vertex per point."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != len(cloud):
        raise LengthMismatch(f"{len(labels)} labels for {len(cloud)} points")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for (x, y, z), lab in zip(cloud.points.tolist(), labels.tolist()):
        r, g, b = CLASS_COLORS.get(lab, INVALID_COLOR)
        # repr of a float32 widened to float64 round-trips exactly
        lines.append(f"{x!r} {y!r} {z!r} {r} {g} {b}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_colored_ply(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Parse a PLY written by :func:`write_colored_ply`; returns (xyz, rgb)."""
    text = Path(path).read_text(encoding="ascii").split("\n")
    if not text or text[0] != "ply":
        raise BadMagic(f"{path} is not a PLY file")
    try:
        end = text.index("end_header")
    except ValueError:
        raise FormatError("PLY header is not terminated") from None
    count = 0
    for line in text[1:end]:
        if line.startswith("element vertex"):
            count = int(line.split()[2])
    body = [ln.split() for ln in text[end + 1 : end + 1 + count]]
    if len(body) != count or any(len(row) != 6 for row in body):
        raise FormatError("PLY vertex list is truncated or malformed")
    xyz = np.array([[float(v) for v in row[:3]] for row in body], dtype=np.float32).reshape(-1, 3)
    rgb = np.array([[int(v) for v in row[3:]] for row in body], dtype=np.uint8).reshape(-1, 3)
    return xyz, rgb
