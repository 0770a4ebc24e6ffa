import math

import numpy as np
import pytest

from conftest import gradcheck
from rangeseg.autodiff import (
    AdamState,
    BatchNormState,
    Tape,
    Tensor,
    adam_step,
    backward,
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
from rangeseg.errors import NonScalarLoss, OddSpatialDim


def T(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def weighted_sum(y: Tensor, seed=0) -> Tensor:
    """Scalar projection with fixed random weights, so every output entry matters."""
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return (y * w).sum()


def direct_conv3x3(x, w, b):
    B, C, H, W = x.shape
    O = w.shape[0]
    out = np.zeros((B, O, H, W))
    for bi in range(B):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    acc = b[o]
                    for c in range(C):
                        for di in range(3):
                            for dj in range(3):
                                ii, jj = i + di - 1, j + dj - 1
                                if 0 <= ii < H and 0 <= jj < W:
                                    acc += w[o, c, di, dj] * x[bi, c, ii, jj]
                    out[bi, o, i, j] = acc
    return out


# linear -----------------------------------------------------------------------------

def test_linear_identity_and_scalar():
    x = np.arange(6.0).reshape(2, 3)
    y = linear(T(x), T(np.eye(3)), T(np.zeros(3)))
    np.testing.assert_array_equal(y.data, x)
    assert linear(T([[2.0]]), T([[3.0]]), T([1.0])).data.item() == 7.0


@pytest.mark.parametrize("seed", range(5))
def test_linear_gradient(seed):
    rng = np.random.default_rng(seed)
    x, w, b = T(rng.standard_normal((4, 5, 3))), T(rng.standard_normal((3, 2))), T(rng.standard_normal(2))
    assert gradcheck(lambda: weighted_sum(linear(x, w, b)), [x, w, b]) < 1e-4


# conv3x3 -----------------------------------------------------------------------------

def test_conv3x3_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(conv3x3(T(x), T(w)).data, x)


def test_conv3x3_ones_kernel_on_one_hot_matches_direct_oracle():
    for pos in [(0, 0), (2, 3), (4, 5)]:
        x = np.zeros((1, 1, 5, 6))
        x[0, 0][pos] = 1.0
        w = np.ones((1, 1, 3, 3))
        y = conv3x3(T(x), T(w), T(np.zeros(1))).data
        expected = direct_conv3x3(x, w, np.zeros(1))
        np.testing.assert_array_equal(y, expected)
        r, c = pos
        block = np.zeros((5, 6))
        block[max(r - 1, 0) : r + 2, max(c - 1, 0) : c + 2] = 1
        np.testing.assert_array_equal(y[0, 0], block)


def test_conv3x3_random_matches_direct_oracle(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(2)
    np.testing.assert_allclose(conv3x3(T(x), T(w), T(b)).data, direct_conv3x3(x, w, b), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_conv3x3_gradient(seed):
    rng = np.random.default_rng(seed)
    x = T(rng.standard_normal((2, 2, 4, 5)))
    w = T(rng.standard_normal((3, 2, 3, 3)))
    b = T(rng.standard_normal(3))
    assert gradcheck(lambda: weighted_sum(conv3x3(x, w, b)), [x, w, b]) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_conv1x1_gradient(seed):
    rng = np.random.default_rng(seed)
    x = T(rng.standard_normal((2, 3, 4, 4)))
    w = T(rng.standard_normal((2, 3)))
    b = T(rng.standard_normal(2))
    assert gradcheck(lambda: weighted_sum(conv1x1(x, w, b)), [x, w, b]) < 1e-4


# relu ---------------------------------------------------------------------------------

def test_relu_values_and_subgradient():
    x = T([-1.0, 0.0, 2.0])
    with Tape() as tape:
        y = relu(x)
        loss = y.sum()
    tape.backward(loss)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


# maxpool --------------------------------------------------------------------------

def test_maxpool_constant_and_small():
    np.testing.assert_array_equal(maxpool2x2(T(np.full((1, 2, 4, 6), 3.0))).data, np.full((1, 2, 2, 3), 3.0))
    assert maxpool2x2(T([[[[1.0, 2.0], [3.0, 4.0]]]])).data.tolist() == [[[[4.0]]]]


def test_maxpool_tie_routes_to_first_cell():
    x = T(np.full((1, 1, 2, 2), 5.0))
    with Tape() as tape:
        loss = maxpool2x2(x).sum()
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_odd_dims():
    with pytest.raises(OddSpatialDim):
        maxpool2x2(T(np.zeros((1, 1, 3, 4))))


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_gradient(seed):
    x = T(np.random.default_rng(seed).standard_normal((2, 2, 4, 6)))
    assert gradcheck(lambda: weighted_sum(maxpool2x2(x)), [x]) < 1e-4


# upconv ----------------------------------------------------------------------------

def test_upconv_shape():
    y = upconv2x2(T(np.zeros((2, 4, 3, 5))), T(np.zeros((4, 6, 2, 2))), T(np.zeros(6)))
    assert y.shape == (2, 6, 6, 10)


@pytest.mark.parametrize("seed", range(5))
def test_upconv_adjoint_of_strided_conv(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((3, 4, 2, 2))
    x = rng.standard_normal((2, 4, 6, 8))  # high resolution, C_out channels
    y = rng.standard_normal((2, 3, 3, 4))  # low resolution, C_in channels
    lhs = np.sum(conv2x2_stride2(x, w) * y)
    rhs = np.sum(x * upconv2x2(T(y), T(w)).data)
    assert abs(lhs - rhs) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_upconv_gradient(seed):
    rng = np.random.default_rng(seed)
    x = T(rng.standard_normal((2, 3, 2, 3)))
    w = T(rng.standard_normal((3, 2, 2, 2)))
    b = T(rng.standard_normal(2))
    assert gradcheck(lambda: weighted_sum(upconv2x2(x, w, b)), [x, w, b]) < 1e-4


# concat ----------------------------------------------------------------------------

def test_concat_shapes_and_split():
    a = T(np.ones((1, 2, 3, 3)))
    b = T(np.ones((1, 3, 3, 3)))
    with Tape() as tape:
        y = concat_channels(a, b)
        loss = (y * np.arange(5.0)[None, :, None, None]).sum()
    tape.backward(loss)
    assert y.shape == (1, 5, 3, 3)
    np.testing.assert_array_equal(a.grad[0, :, 0, 0], [0.0, 1.0])
    np.testing.assert_array_equal(b.grad[0, :, 0, 0], [2.0, 3.0, 4.0])


def test_concat_with_empty():
    a = T(np.random.default_rng(0).standard_normal((1, 2, 2, 2)))
    empty = T(np.zeros((1, 0, 2, 2)))
    np.testing.assert_array_equal(concat_channels(a, empty).data, a.data)


# batch norm --------------------------------------------------------------------------

def test_batchnorm_standardised_batch_is_nearly_unchanged():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((64, 3))
    x = (x - x.mean(0)) / x.std(0)
    st = BatchNormState.fresh(3)
    y = batchnorm(T(x), T(np.ones(3)), T(np.zeros(3)), st, training=True, axis=-1)
    # only the epsilon inside the square root separates output from input
    np.testing.assert_allclose(y.data, x / np.sqrt(1 + 1e-5), rtol=1e-10)
    np.testing.assert_allclose(y.data, x, rtol=1e-5)


def test_batchnorm_train_statistics(rng):
    x = rng.normal(3.0, 2.5, size=(4, 5, 6, 7))
    st = BatchNormState.fresh(5)
    y = batchnorm(T(x), T(np.ones(5)), T(np.zeros(5)), st, training=True).data
    assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-6
    assert np.abs(y.var(axis=(0, 2, 3)) - 1).max() < 1e-5


def test_batchnorm_running_stats_momentum(rng):
    x = rng.normal(2.0, 3.0, size=(10, 4))
    st = BatchNormState.fresh(4, momentum=0.99)
    batchnorm(T(x), T(np.ones(4)), T(np.zeros(4)), st, training=True, axis=-1)
    np.testing.assert_allclose(st.mean, 0.01 * x.mean(0), rtol=1e-12)
    np.testing.assert_allclose(st.var, 0.99 + 0.01 * x.var(0), rtol=1e-12)
    y = batchnorm(T(x), T(np.ones(4)), T(np.zeros(4)), st, training=False, axis=-1).data
    np.testing.assert_allclose(y, (x - st.mean) / np.sqrt(st.var + 1e-5), rtol=1e-12)


@pytest.mark.parametrize("training", [True, False])
@pytest.mark.parametrize("seed", range(3))
def test_batchnorm_gradient(seed, training):
    rng = np.random.default_rng(seed)
    x = T(rng.standard_normal((2, 3, 3, 4)))
    g = T(rng.standard_normal(3))
    b = T(rng.standard_normal(3))
    st = BatchNormState(rng.standard_normal(3), rng.uniform(0.5, 2, 3))
    assert gradcheck(lambda: weighted_sum(batchnorm(x, g, b, st, training)), [x, g, b]) < 1e-4


# max over set ----------------------------------------------------------------------

def test_max_over_set_single_member_is_identity(rng):
    x = rng.standard_normal((5, 1, 4))
    np.testing.assert_array_equal(max_over_set(T(x), axis=1).data, x[:, 0])


def test_max_over_set_permutation(rng):
    x = rng.standard_normal((6, 8, 5))
    perm = rng.permutation(8)
    np.testing.assert_array_equal(max_over_set(T(x), axis=1).data, max_over_set(T(x[:, perm]), axis=1).data)


@pytest.mark.parametrize("seed", range(5))
def test_max_over_set_gradient(seed):
    x = T(np.random.default_rng(seed).standard_normal((4, 8, 3)))
    assert gradcheck(lambda: weighted_sum(max_over_set(x, axis=1)), [x]) < 1e-4


# softmax ----------------------------------------------------------------------------

def test_softmax_closed_forms():
    np.testing.assert_allclose(softmax_channels(T(np.zeros((1, 4, 2, 2)))).data, 0.25)
    p = softmax_channels(T(np.array([0.0, math.log(3.0)]).reshape(1, 2, 1, 1))).data.ravel()
    np.testing.assert_allclose(p, [0.25, 0.75], rtol=1e-12)


def test_softmax_shift_invariance(rng):
    a = rng.standard_normal((2, 4, 3, 3))
    shift = rng.standard_normal((2, 1, 3, 3)) * 10
    p1 = softmax_channels(T(a)).data
    p2 = softmax_channels(T(a + shift)).data
    assert np.abs(p1 - p2).max() < 1e-7
    assert np.abs(p1.sum(axis=1) - 1).max() < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_softmax_gradient(seed):
    x = T(np.random.default_rng(seed).standard_normal((2, 4, 3, 3)))
    assert gradcheck(lambda: weighted_sum(softmax_channels(x)), [x]) < 1e-4


# backward --------------------------------------------------------------------------

def test_backward_sum_and_square():
    x = T(np.arange(4.0))
    with Tape():
        loss = x.sum()
        backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones(4))

    x = T([3.0])
    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)
    assert x.grad.tolist() == [6.0]


def test_backward_rejects_non_scalar():
    x = T(np.ones(3))
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(NonScalarLoss):
        tape.backward(y)


def test_no_tape_means_no_recording():
    x = T(np.ones(3))
    y = relu(x)
    assert y.requires_grad  # recorded nowhere, but still flagged
    with Tape() as tape:
        pass
    assert tape.nodes == []


def test_gradient_accumulates_over_shared_input():
    x = T([2.0])
    with Tape() as tape:
        loss = (x * x + x * 3.0).sum()
    tape.backward(loss)
    assert x.grad.tolist() == [7.0]


# adam ---------------------------------------------------------------------------------

def scalar_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        p = p - lr * mh / (math.sqrt(vh) + eps)
    return p


def test_adam_zero_gradient_leaves_params():
    p = {"w": T(np.array([1.0, -2.0]))}
    st = AdamState()
    adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


@pytest.mark.parametrize("steps", [1, 2])
def test_adam_matches_scalar_oracle(steps):
    g = np.array([0.5, -3.0, 1e-3])
    p0 = np.array([1.0, 2.0, -1.0])
    params = {"w": T(p0.copy())}
    st = AdamState()
    for _ in range(steps):
        adam_step(params, {"w": g}, st, lr=1e-3)
    expected = [scalar_adam(a, [b] * steps) for a, b in zip(p0, g)]
    np.testing.assert_allclose(params["w"].data, expected, rtol=0, atol=1e-12)
    if steps == 1:
        # first bias-corrected step moves by ~lr in the direction of -sign(g)
        np.testing.assert_allclose(params["w"].data - p0, -1e-3 * np.sign(g), rtol=1e-4)


# composed ------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_composed_layers_gradient(seed):
    rng = np.random.default_rng(seed)
    x = T(rng.standard_normal((2, 2, 4, 4)))
    w1 = T(rng.standard_normal((3, 2, 3, 3)))
    w2 = T(rng.standard_normal((3, 2, 2, 2)))
    g, b = T(np.ones(3)), T(np.zeros(3))
    st = BatchNormState.fresh(3)

    def build():
        h = relu(batchnorm(conv3x3(x, w1), g, b, st, True))
        h = upconv2x2(maxpool2x2(h), w2)
        return weighted_sum(softmax_channels(concat([h, x], axis=1)))

    assert gradcheck(build, [x, w1, w2, g, b]) < 1e-4
