"""Learned per-point features from range-image neighborhoods.

Each point's neighbor set goes through a shared MLP, is max-pooled over the
set, concatenated with the point's own (x, y, z, r), and mapped by a second
MLP to N features.  All points of all scans in a batch go through in one
pass, and the result is laid out as an N-channel image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import BatchNormState, Tensor, batchnorm, concat, linear, max_over_set, relu
from .datatypes import RangeImage
from .errors import ShapeMismatch
from .neighborhood import ABSOLUTE, RELATIVE, NeighborField

CENTER_CHANNELS = ("x", "y", "z", "reflectance")


@dataclass(frozen=True)
class ExtractorConfig:
    n_features: int = 3
    mlp1_widths: tuple[int, ...] = (3, 8, 16)
    mlp2_widths: tuple[int, ...] = (20, 16)  # followed by a final layer to n_features
    mode: str = RELATIVE

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if len(self.mlp1_widths) < 2 or self.mlp1_widths[0] != 3:
            raise ValueError("mlp1_widths must start at 3 and have at least one layer")
        if not self.mlp2_widths or self.mlp2_widths[0] != self.mlp1_widths[-1] + 4:
            raise ValueError("mlp2_widths must start at the last mlp1 width + 4")
        if self.mode not in (RELATIVE, ABSOLUTE):
            raise ValueError(f"unknown coordinate mode {self.mode!r}")


def _uniform(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_extractor(cfg: ExtractorConfig, rng: np.random.Generator, dtype=np.float32,
                   momentum: float = 0.99, prefix: str = "extractor."):
    """Fresh parameters and batch-norm states for an extractor."""
    params: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}

    def layer(name, c_in, c_out, with_bn):
        params[f"{name}.weight"] = Tensor(_uniform(rng, c_in, (c_in, c_out), dtype), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(c_out, dtype), requires_grad=True)
        if with_bn:
            params[f"{name}.bn.gamma"] = Tensor(np.ones(c_out, dtype), requires_grad=True)
            params[f"{name}.bn.beta"] = Tensor(np.zeros(c_out, dtype), requires_grad=True)
            bn[f"{name}.bn"] = BatchNormState.fresh(c_out, dtype, momentum)

    w1 = cfg.mlp1_widths
    for i in range(len(w1) - 1):
        layer(f"{prefix}mlp1.{i}", w1[i], w1[i + 1], True)
    w2 = cfg.mlp2_widths
    for i in range(len(w2) - 1):
        layer(f"{prefix}mlp2.{i}", w2[i], w2[i + 1], True)
    layer(f"{prefix}mlp2.{len(w2) - 1}", w2[-1], cfg.n_features, False)
    return params, bn


def _mlp_layer(x, params, bn, name, training, last=False):
    x = linear(x, params[f"{name}.weight"], params[f"{name}.bias"])
    if last:
        return x
    x = relu(x)
    return batchnorm(x, params[f"{name}.bn.gamma"], params[f"{name}.bn.beta"], bn[f"{name}.bn"], training, axis=-1)


def extractor_forward(cfg: ExtractorConfig, params, bn, neighbors: np.ndarray, centers: np.ndarray,
                      training: bool, prefix: str = "extractor."):
    """Run the extractor on a batch.

    Args:
        neighbors: (B, H, W, 8, 3) neighbor coordinates.
        centers: (B, H, W, 4) center x, y, z, reflectance.

    Returns:
        ``(features, pooled)``: the (B, N, H, W) feature image and the
        (B*H*W, F) max-pooled neighbor features.
    """
    if neighbors.ndim != 5 or neighbors.shape[3:] != (8, 3) or centers.shape != neighbors.shape[:3] + (4,):
        raise ShapeMismatch(f"neighbors {neighbors.shape} / centers {centers.shape} do not match")
    B, H, W = neighbors.shape[:3]
    dtype = params[f"{prefix}mlp1.0.weight"].dtype
    x = Tensor(neighbors.reshape(B * H * W, 8, 3).astype(dtype, copy=False))
    for i in range(len(cfg.mlp1_widths) - 1):
        x = _mlp_layer(x, params, bn, f"{prefix}mlp1.{i}", training)
    pooled = max_over_set(x, axis=1)
    c = Tensor(centers.reshape(B * H * W, 4).astype(dtype, copy=False))
    x = concat([pooled, c], axis=-1)
    n2 = len(cfg.mlp2_widths)
    for i in range(n2):
        x = _mlp_layer(x, params, bn, f"{prefix}mlp2.{i}", training, last=(i == n2 - 1))
    features = x.reshape(B, H, W, cfg.n_features).transpose(0, 3, 1, 2)
    return features, pooled


def centers_of(img: RangeImage) -> np.ndarray:
    """(H, W, 4) center coordinates and reflectance of an image."""
    return np.stack([img.channel(c) for c in CENTER_CHANNELS], axis=-1)


def extract(img: RangeImage, nf: NeighborField, cfg: ExtractorConfig, params, bn,
            training: bool = False) -> RangeImage:
    """Feature range-image for a single scan: the input channels plus f0..f{N-1}."""
    if nf.values.shape[:2] != img.shape:
        raise ShapeMismatch(f"neighbor field {nf.values.shape[:2]} vs image {img.shape}")
    feats, _ = extractor_forward(cfg, params, bn, nf.values[None], centers_of(img)[None], training)
    channels = dict(img.channels)
    for k in range(cfg.n_features):
        channels[f"f{k}"] = feats.data[0, k].astype(np.float32)
    return RangeImage(channels, img.mask.copy(), img.point_index)
