"""U-Net encoder-decoder over the feature range-image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    BatchNormState,
    Tensor,
    batchnorm,
    concat_channels,
    conv1x1,
    conv3x3,
    maxpool2x2,
    relu,
    upconv2x2,
)
from .datatypes import NUM_CLASSES
from .errors import IndivisibleSpatialDims, ShapeMismatch


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 3
    base_channels: int = 16
    in_channels: int = 3
    out_channels: int = NUM_CLASSES
    batchnorm: bool = True

    def __post_init__(self):
        if self.depth < 0 or self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid U-Net config {self}")

    def width(self, stage: int) -> int:
        return self.base_channels * 2**stage


def _uniform(rng, fan_in, shape, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_unet(cfg: UNetConfig, rng: np.random.Generator, dtype=np.float32,
              momentum: float = 0.99, prefix: str = "unet."):
    params: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}

    def conv(name, c_in, c_out):
        params[f"{name}.weight"] = Tensor(_uniform(rng, 9 * c_in, (c_out, c_in, 3, 3), dtype), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(c_out, dtype), requires_grad=True)
        if cfg.batchnorm:
            params[f"{name}.bn.gamma"] = Tensor(np.ones(c_out, dtype), requires_grad=True)
            params[f"{name}.bn.beta"] = Tensor(np.zeros(c_out, dtype), requires_grad=True)
            bn[f"{name}.bn"] = BatchNormState.fresh(c_out, dtype, momentum)

    c_in = cfg.in_channels
    for s in range(cfg.depth):
        conv(f"{prefix}enc{s}.conv0", c_in, cfg.width(s))
        conv(f"{prefix}enc{s}.conv1", cfg.width(s), cfg.width(s))
        c_in = cfg.width(s)
    D = cfg.depth
    conv(f"{prefix}bottleneck.conv0", c_in, cfg.width(D))
    conv(f"{prefix}bottleneck.conv1", cfg.width(D), cfg.width(D))
    for s in reversed(range(D)):
        up = f"{prefix}dec{s}.up"
        params[f"{up}.weight"] = Tensor(
            _uniform(rng, cfg.width(s + 1), (cfg.width(s + 1), cfg.width(s), 2, 2), dtype), requires_grad=True
        )
        params[f"{up}.bias"] = Tensor(np.zeros(cfg.width(s), dtype), requires_grad=True)
        conv(f"{prefix}dec{s}.conv0", cfg.width(s + 1), cfg.width(s))
        conv(f"{prefix}dec{s}.conv1", cfg.width(s), cfg.width(s))
    params[f"{prefix}head.weight"] = Tensor(
        _uniform(rng, cfg.width(0), (cfg.out_channels, cfg.width(0)), dtype), requires_grad=True
    )
    params[f"{prefix}head.bias"] = Tensor(np.zeros(cfg.out_channels, dtype), requires_grad=True)
    return params, bn


def _conv_block(x, params, bn, name, cfg, training):
    for k in (0, 1):
        layer = f"{name}.conv{k}"
        x = conv3x3(x, params[f"{layer}.weight"], params[f"{layer}.bias"])
        if cfg.batchnorm:
            x = batchnorm(x, params[f"{layer}.bn.gamma"], params[f"{layer}.bn.beta"], bn[f"{layer}.bn"], training)
        x = relu(x)
    return x


def unet_forward(cfg: UNetConfig, params, bn, x: Tensor, training: bool, prefix: str = "unet.") -> Tensor:
    """(B, in_channels, H, W) features to (B, out_channels, H, W) logits."""
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeMismatch(f"U-Net expects (B, {cfg.in_channels}, H, W), got {x.shape}")
    step = 2**cfg.depth
    if x.shape[2] % step or x.shape[3] % step:
        raise IndivisibleSpatialDims(f"spatial dims {x.shape[2:]} not divisible by {step}")
    skips = []
    for s in range(cfg.depth):
        x = _conv_block(x, params, bn, f"{prefix}enc{s}", cfg, training)
        skips.append(x)
        x = maxpool2x2(x)
    x = _conv_block(x, params, bn, f"{prefix}bottleneck", cfg, training)
    for s in reversed(range(cfg.depth)):
        up = f"{prefix}dec{s}.up"
        x = upconv2x2(x, params[f"{up}.weight"], params[f"{up}.bias"])
        x = concat_channels(x, skips[s])
        x = _conv_block(x, params, bn, f"{prefix}dec{s}", cfg, training)
    return conv1x1(x, params[f"{prefix}head.weight"], params[f"{prefix}head.bias"])
