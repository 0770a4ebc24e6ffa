"""Differentiable layers used by the feature extractor and the U-Net.

Image tensors are laid out as (batch, channels, height, width).  Point tensors
keep their features on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import OddSpatialDim, ShapeMismatch
from .tensor import Tensor, as_tensor, make_result

BN_EPS = 1e-5


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y = x @ weight + bias`` over the last axis of ``x``.

    Applied to a stack of points this is exactly a 1x1 convolution with shared
    weights.
    """
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    x2 = x.data.reshape(-1, x.shape[-1])
    y = x2 @ weight.data
    if bias is not None:
        y = y + bias.data
    out_shape = x.shape[:-1] + (weight.shape[1],)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y.reshape(out_shape), inputs, lambda g: backward(g)[: len(inputs)])


def _conv3x3_raw(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))  # B, C, H, W, 3, 3
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))  # B, H, W, O
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), cols


def conv3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Zero-padded 'same' 3x3 convolution.

    Args:
        x: input of shape (B, C_in, H, W).
        weight: kernels of shape (C_out, C_in, 3, 3).
        bias: optional (C_out,) offsets.
    """
    if x.ndim != 4 or weight.shape[1:] != (x.shape[1], 3, 3):
        raise ShapeMismatch(f"conv3x3: input {x.shape} incompatible with kernels {weight.shape}")
    y, cols = _conv3x3_raw(x.data, weight.data)
    if bias is not None:
        y += bias.data[None, :, None, None]

    def backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        # adjoint of same-padded correlation: correlate with the flipped, transposed kernel
        flipped = np.ascontiguousarray(weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = _conv3x3_raw(g, flipped)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, inputs, lambda g: backward(g)[: len(inputs)])


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise convolution, kernels of shape (C_out, C_in)."""
    if x.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"conv1x1: input {x.shape} incompatible with kernels {weight.shape}")
    y = np.tensordot(weight.data, x.data, axes=([1], [1])).transpose(1, 0, 2, 3)
    y = np.ascontiguousarray(y)
    if bias is not None:
        y += bias.data[None, :, None, None]

    def backward(g):
        gx = np.ascontiguousarray(np.tensordot(weight.data, g, axes=([0], [1])).transpose(1, 0, 2, 3))
        gw = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, inputs, lambda g: backward(g)[: len(inputs)])


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    active = x.data > 0
    return make_result(np.where(active, x.data, 0).astype(x.dtype), (x,), lambda g: (g * active,))


def _windows2x2(a: np.ndarray) -> np.ndarray:
    b, c, h, w = a.shape
    return a.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)


def _unwindows2x2(a: np.ndarray) -> np.ndarray:
    b, c, h2, w2, _ = a.shape
    return a.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max-pooling with stride 2.

    The gradient of each window goes to its maximum; ties resolve to the first
    cell in row-major order.
    """
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise OddSpatialDim(f"maxpool2x2 needs even spatial dims, got {x.shape}")
    win = _windows2x2(x.data)
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        return (_unwindows2x2(gw),)

    return make_result(out, (x,), backward)


def upconv2x2(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Transposed 2x2 convolution with stride 2 (doubles H and W).

    ``weight`` has shape (C_in, C_out, 2, 2); input pixel (i, j) spreads into
    output block (2i:2i+2, 2j:2j+2).
    """
    if x.ndim != 4 or weight.shape[0] != x.shape[1] or weight.shape[2:] != (2, 2):
        raise ShapeMismatch(f"upconv2x2: input {x.shape} incompatible with kernels {weight.shape}")
    b, _, h, w = x.shape
    c_out = weight.shape[1]
    y = np.tensordot(x.data, weight.data, axes=([1], [0]))  # B, H, W, O, 2, 2
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 4, 2, 5)).reshape(b, c_out, 2 * h, 2 * w)
    if bias is not None:
        y += bias.data[None, :, None, None]

    def backward(g):
        g6 = g.reshape(b, c_out, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5)  # B, H, W, O, 2, 2
        gx = np.tensordot(g6, weight.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, g6, axes=([0, 2, 3], [0, 1, 2]))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return np.ascontiguousarray(gx), gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, inputs, lambda g: backward(g)[: len(inputs)])


def conv2x2_stride2(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Strided 2x2 convolution that is the exact adjoint of :func:`upconv2x2`.

    Same (C_in, C_out, 2, 2) kernel layout; maps (B, C_out, 2H, 2W) to
    (B, C_in, H, W).  Not recorded on the tape.
    """
    b, c_out, h2, w2 = x.shape
    x6 = x.reshape(b, c_out, h2 // 2, 2, w2 // 2, 2)
    y = np.tensordot(x6, weight, axes=([1, 3, 5], [1, 2, 3]))  # B, H, W, C_in
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits the gradient back."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_result(out, tensors, backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b], axis=1)


def max_over_set(x: Tensor, axis: int = -2) -> Tensor:
    """Element-wise maximum over the set axis (default: second to last).

    Gradient is routed to the (first) arg-max member of the set.
    """
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make_result(np.squeeze(out, axis=axis), (x,), backward)


def softmax_channels(logits: Tensor, axis: int = 1) -> Tensor:
    """Softmax over the class axis, with per-pixel max subtraction."""
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_result(p, (logits,), backward)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.99

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64, momentum: float = 0.99) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    axis: int = 1,
    eps: float = BN_EPS,
) -> Tensor:
    """Batch normalisation over every axis except ``axis``.

    In training mode the batch mean and (biased) variance normalise the input
    and the running statistics move as ``running = momentum * running +
    (1 - momentum) * batch``.  Eval mode uses the running statistics.
    """
    axis = axis % x.ndim
    red = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if training:
        n = x.data.size // x.shape[axis]
        mean = x.data.mean(axis=red)
        centered = x.data - mean.reshape(bshape)
        var = (centered * centered).mean(axis=red)
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = centered * invstd.reshape(bshape)
        m = state.momentum
        state.mean[...] = m * state.mean + (1 - m) * mean
        state.var[...] = m * state.var + (1 - m) * var

        def backward(g):
            gxhat = g * g_
            s1 = gxhat.sum(axis=red, keepdims=True)
            s2 = (gxhat * xhat).sum(axis=red, keepdims=True)
            gx = (invstd.reshape(bshape) / n) * (n * gxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=red), g.sum(axis=red)
    else:
        invstd = 1.0 / np.sqrt(state.var + eps)
        xhat = (x.data - state.mean.reshape(bshape)) * invstd.reshape(bshape)

        def backward(g):
            gx = g * (g_ * invstd.reshape(bshape))
            return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    y = (xhat * g_ + b_).astype(x.dtype, copy=False)
    return make_result(y, (x, gamma, beta), backward)
