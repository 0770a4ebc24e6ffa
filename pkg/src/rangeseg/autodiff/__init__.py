"""Small reverse-mode differentiation engine on top of numpy."""

from .nn import (
    BatchNormState,
    batchnorm,
    concat,
    concat_channels,
    conv1x1,
    conv2x2_stride2,
    conv3x3,
    linear,
    max_over_set,
    maxpool2x2,
    relu,
    softmax_channels,
    upconv2x2,
)
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, active_tape, as_tensor, backward, make_result

__all__ = [
    "AdamState",
    "BatchNormState",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "as_tensor",
    "backward",
    "batchnorm",
    "concat",
    "concat_channels",
    "conv1x1",
    "conv2x2_stride2",
    "conv3x3",
    "linear",
    "make_result",
    "max_over_set",
    "maxpool2x2",
    "relu",
    "softmax_channels",
    "upconv2x2",
]
