"""Static PNG renders of range-images and segmentation maps."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .datatypes import RangeImage
from .pointcloud_io import CLASS_COLORS, INVALID_COLOR


def depth_gray(img: RangeImage, d_max: float | None = None) -> np.ndarray:
    """(H, W) uint8 grayscale, 255 * (1 - d / d_max) clamped; invalid pixels are 0."""
    depth = img.channel("depth").astype(np.float64)
    valid = img.mask > 0
    if d_max is None:
        d_max = float(depth[valid].max()) if valid.any() else 1.0
    d_max = d_max if d_max > 0 else 1.0
    gray = np.clip(255.0 * (1.0 - depth / d_max), 0.0, 255.0)
    return np.where(valid, np.round(gray), 0).astype(np.uint8)


def render_rgb(img: RangeImage, labels=None, d_max: float | None = None) -> np.ndarray:
    """(H, W, 3) uint8 picture with the sky up.

    Background pixels show the depth underlay, other classes their color and
    invalid pixels are black.  Without labels the whole image is grayscale.
    """
    gray = depth_gray(img, d_max)
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    valid = img.mask > 0
    if labels is not None:
        labels = np.asarray(labels)
        for cls, color in CLASS_COLORS.items():
            if cls == 0:
                continue
            rgb[valid & (labels == cls)] = color
    rgb[~valid] = INVALID_COLOR
    return rgb[::-1].copy()  # row 0 is the lowest beam


def save_png(img: RangeImage, path: str | os.PathLike, labels=None, d_max: float | None = None) -> None:
    Image.fromarray(render_rgb(img, labels, d_max), mode="RGB").save(path, format="PNG")
