"""8-connected neighbor coordinates of every range-image pixel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datatypes import RangeImage

# (row, col) offsets of the eight slots: NW, N, NE, W, E, SW, S, SE in array order
NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

RELATIVE = "relative"
ABSOLUTE = "absolute"


@dataclass
class NeighborField:
    """(H, W, 8, 3) neighbor coordinates plus the mode they were built in."""

    values: np.ndarray
    mode: str = RELATIVE


def _shifted(a: np.ndarray, dr: int, dc: int, wrap: bool, fill=0) -> np.ndarray:
    """out[r, c] = a[r + dr, c + dc]; off-image entries get ``fill``."""
    H, W = a.shape[:2]
    if wrap:
        a = np.roll(a, -dc, axis=1)
        dc = 0
    out = np.full_like(a, fill)
    r0, r1 = max(0, -dr), min(H, H - dr)
    c0, c1 = max(0, -dc), min(W, W - dc)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = a[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    return out


def build_neighbor_field(img: RangeImage, mode: str = RELATIVE, wrap: bool = False) -> NeighborField:
    """Neighbor set of every pixel.

    Relative mode stores ``q - p`` for each neighbor ``q`` of center ``p``;
    absolute mode stores ``q``.  A slot is (0, 0, 0) whenever the center or
    the neighbor pixel is empty or lies outside the image.  With ``wrap`` the
    first and last columns are adjacent (full-revolution scans).
    """
    if mode not in (RELATIVE, ABSOLUTE):
        raise ValueError(f"unknown neighbor mode {mode!r}")
    xyz = np.stack([img.channel(c) for c in ("x", "y", "z")], axis=-1).astype(np.float32)
    valid = img.mask.astype(bool)
    H, W = valid.shape
    out = np.zeros((H, W, 8, 3), dtype=np.float32)
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        q = _shifted(xyz, dr, dc, wrap)
        both = valid & _shifted(valid, dr, dc, wrap, fill=False)
        slot = q - xyz if mode == RELATIVE else q
        out[:, :, k, :] = np.where(both[..., None], slot, 0)
    return NeighborField(out, mode)
