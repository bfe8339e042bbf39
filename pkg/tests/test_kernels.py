import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radseq import gradcheck as G
from radseq import kernels as K
from radseq.errors import DimensionError, ValidationError


def naive_conv(x, w, b, stride, pad):
    """Direct loop cross-correlation, used as an oracle for conv2d_forward."""
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((co, oh, ow))
    for o in range(co):
        for i in range(oh):
            for j in range(ow):
                out[o, i, j] = b[o] + np.sum(w[o] * xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw])
    return out


# -- conv2d ---------------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.ones((1, 3, 3), dtype=np.float32)
    out = K.conv2d_forward(x, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32), K.ConvParams(1, 1, 1, 1))
    assert out.shape == (1, 3, 3)
    assert np.array_equal(out, x)


def test_conv_hand_example():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    out = K.conv2d_forward(x, w, np.zeros(1), K.ConvParams(1, 1, 2, 2))
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 5.0


def test_conv_paper_first_layer_shape():
    p = K.ConvParams(3, 96, 7, 7, stride=2, pad=0)
    assert p.output_hw(128, 128) == (61, 61)
    x = np.zeros((3, 128, 128), np.float32)
    out = K.conv2d_forward(x, np.zeros(p.weight_shape, np.float32), np.zeros(96, np.float32), p)
    assert out.shape == (96, 61, 61)


def test_conv_is_cross_correlation_not_convolution():
    x = np.zeros((1, 3, 3))
    x[0, 0, 0] = 1.0
    w = np.arange(9.0).reshape(1, 1, 3, 3)
    out = K.conv2d_forward(x, w, np.zeros(1), K.ConvParams(1, 1, 3, 3, pad=2))
    # the output at offset (2,2) sees x[0,0] under weight tap (0,0) (no flip)
    assert out[0, 2, 2] == w[0, 0, 0, 0]
    assert out[0, 0, 0] == w[0, 0, 2, 2]


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 2), (3, 1)])
def test_conv_matches_naive_oracle(rng, stride, pad):
    x = rng.standard_normal((3, 9, 8))
    w = rng.standard_normal((4, 3, 3, 2))
    b = rng.standard_normal(4)
    p = K.ConvParams(3, 4, 3, 2, stride, pad)
    np.testing.assert_allclose(K.conv2d_forward(x, w, b, p), naive_conv(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_batched_equals_single(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(2)
    p = K.ConvParams(3, 2, 3, 3, 1, 1)
    out = K.conv2d_forward(x, w, b, p)
    np.testing.assert_allclose(out[1], K.conv2d_forward(x[1], w, b, p), rtol=1e-13)


def test_conv_shape_errors():
    p = K.ConvParams(2, 1, 3, 3)
    with pytest.raises(DimensionError, match="channels"):
        K.conv2d_forward(np.zeros((3, 5, 5)), np.zeros((1, 2, 3, 3)), np.zeros(1), p)
    with pytest.raises(DimensionError, match="larger than padded input"):
        K.conv2d_forward(np.zeros((2, 2, 2)), np.zeros((1, 2, 3, 3)), np.zeros(1), p)
    with pytest.raises(DimensionError):
        K.conv2d_forward(np.zeros((2, 5, 5)), np.zeros((1, 2, 2, 2)), np.zeros(1), p)
    with pytest.raises(ValidationError):
        K.ConvParams(0, 1, 3, 3)


def test_conv_backward_zero_grad(rng):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    p = K.ConvParams(2, 3, 3, 3, 2, 1)
    gx, gw, gb = K.conv2d_backward(np.zeros((3, 3, 3)), x, w, p)
    assert not gx.any() and not gw.any() and not gb.any()
    assert gx.shape == x.shape and gw.shape == w.shape and gb.shape == (3,)


def test_conv_backward_hand_example():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    wv = 0.5
    gx, gw, gb = K.conv2d_backward(np.ones((1, 2, 2)), x, np.full((1, 1, 1, 1), wv), K.ConvParams(1, 1, 1, 1))
    assert np.all(gx == wv)
    assert gw[0, 0, 0, 0] == 10.0
    assert gb[0] == 4.0


def test_conv_backward_shape_mismatch(rng):
    p = K.ConvParams(1, 1, 2, 2)
    with pytest.raises(DimensionError):
        K.conv2d_backward(np.zeros((1, 3, 3)), np.zeros((1, 3, 3)), np.zeros((1, 1, 2, 2)), p)


def test_conv_backward_can_skip_input_grad(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    p = K.ConvParams(2, 3, 3, 3)
    g = rng.standard_normal((1, 3, 3, 3))
    full = K.conv2d_backward(g, x, w, p)
    gx, gw, gb = K.conv2d_backward(g, x, w, p, input_grad=False)
    assert gx is None
    assert np.array_equal(gw, full[1]) and np.array_equal(gb, full[2])


# -- maxpool ----------------------------------------------------------------------


def test_maxpool_constant():
    x = np.full((2, 5, 5), 3.5)
    out, _ = K.maxpool2d(x, 3, 2)
    assert out.shape == (2, 2, 2) and np.all(out == 3.5)


def test_maxpool_hand_example():
    out, arg = K.maxpool2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
    assert out.tolist() == [[[4.0]]]
    assert arg.tolist() == [[[3]]]


def test_maxpool_paper_shape():
    out, _ = K.maxpool2d(np.zeros((96, 61, 61), np.float32), 3, 2)
    assert out.shape == (96, 30, 30)


def test_maxpool_ties_go_to_lowest_index():
    x = np.zeros((1, 3, 3))
    out, arg = K.maxpool2d(x, 3, 1)
    assert arg.item() == 0
    g = K.maxpool2d_backward(np.ones((1, 1, 1)), arg, x.shape)
    assert g[0, 0, 0] == 1.0 and g.sum() == 1.0


def test_maxpool_backward_overlapping_windows_accumulate():
    x = np.zeros((1, 3, 5))
    x[0, 1, 2] = 9.0  # centre is the max of both overlapping windows
    out, arg = K.maxpool2d(x, 3, 2)
    assert out.shape == (1, 1, 2)
    g = K.maxpool2d_backward(np.array([[[1.0, 2.0]]]), arg, x.shape)
    assert g[0, 1, 2] == 3.0 and g.sum() == 3.0


def test_maxpool_window_too_large():
    with pytest.raises(DimensionError):
        K.maxpool2d(np.zeros((1, 2, 2)), 3, 2)


# -- relu / linear / softmax --------------------------------------------------------------


def test_relu():
    x = np.array([-1.0, 0.0, 2.0])
    assert K.relu(x).tolist() == [0.0, 0.0, 2.0]
    assert K.relu_backward(np.ones(3), x).tolist() == [0.0, 0.0, 1.0]


def test_relu_all_negative():
    x = -np.arange(1.0, 5.0)
    assert not K.relu(x).any()
    assert not K.relu_backward(np.ones(4), x).any()


def test_linear_identity():
    x = np.array([[1.5, -2.0, 3.0]])
    assert np.array_equal(K.linear(x, np.eye(3), np.zeros(3)), x)


def test_linear_hand_example():
    out = K.linear(np.array([[1.0, 2.0]]), np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([0.0, 1.0]))
    assert out.tolist() == [[3.0, 3.0]]


def test_linear_mismatch():
    with pytest.raises(DimensionError):
        K.linear(np.zeros((1, 3)), np.zeros((2, 2)), np.zeros(2))


def test_softmax_ce_uniform():
    loss, g = K.softmax_cross_entropy(np.array([[0.0, 0.0]]), [0])
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert K.softmax(np.array([[0.0, 0.0]])).tolist() == [[0.5, 0.5]]
    np.testing.assert_allclose(g, [[-0.5, 0.5]])


def test_softmax_hand_example():
    np.testing.assert_allclose(K.softmax(np.array([[0.0, math.log(3)]])), [[0.25, 0.75]], atol=1e-15)


def test_softmax_ce_stable_for_huge_logit():
    loss, g = K.softmax_cross_entropy(np.array([[1000.0, 0.0]], np.float32), [0])
    assert loss == pytest.approx(0.0, abs=1e-6)
    assert np.all(np.isfinite(g))


def test_softmax_ce_bad_label():
    with pytest.raises(ValidationError):
        K.softmax_cross_entropy(np.zeros((2, 2)), [0, 2])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=6),
    st.floats(-100, 100),
)
def test_softmax_rows_sum_to_one_and_shift_invariant(row, shift):
    z = np.array([row])
    p = K.softmax(z)
    assert abs(p.sum() - 1) < 1e-6
    np.testing.assert_allclose(K.softmax(z + shift), p, atol=1e-6)


# -- shape law (property) ------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    h=st.integers(1, 20), w=st.integers(1, 20), k=st.integers(1, 7),
    stride=st.integers(1, 3), pad=st.integers(0, 3),
)
def test_conv_shape_law(h, w, k, stride, pad):
    p = K.ConvParams(1, 2, k, k, stride, pad)
    x = np.ones((1, h, w))
    if h + 2 * pad < k or w + 2 * pad < k:
        with pytest.raises(DimensionError):
            K.conv2d_forward(x, np.ones((2, 1, k, k)), np.zeros(2), p)
        return
    out = K.conv2d_forward(x, np.ones((2, 1, k, k)), np.zeros(2), p)
    assert out.shape == (2, (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)


@settings(max_examples=60, deadline=None)
@given(h=st.integers(1, 15), w=st.integers(1, 15), win=st.integers(1, 5), stride=st.integers(1, 3))
def test_pool_shape_law(h, w, win, stride):
    x = np.arange(h * w, dtype=float).reshape(1, h, w)
    if win > h or win > w:
        with pytest.raises(DimensionError):
            K.maxpool2d(x, win, stride)
        return
    out, _ = K.maxpool2d(x, win, stride)
    assert out.shape == (1, (h - win) // stride + 1, (w - win) // stride + 1)


# -- gradients and determinism ------------------------------------------------------------


@pytest.mark.parametrize("check", [G.check_conv, G.check_maxpool, G.check_relu, G.check_linear, G.check_softmax_ce])
def test_gradient_law(check):
    for r in check(np.random.default_rng(5)):
        assert r.max_rel_error < 1e-4, r.line()


def test_numerical_gradient_oracle_on_known_function():
    x = np.array([0.3, -1.2, 2.0])
    g = G.numerical_gradient(lambda: float(np.sum(x**3)), x)
    np.testing.assert_allclose(g, 3 * x**2, rtol=1e-9)


def test_kernels_are_deterministic(rng):
    x = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    p = K.ConvParams(3, 4, 3, 3, 2, 1)
    a = K.conv2d_forward(x, w, b, p)
    assert a.dtype == np.float32
    assert a.tobytes() == K.conv2d_forward(x, w, b, p).tobytes()
    g = rng.standard_normal(a.shape).astype(np.float32)
    r1, r2 = K.conv2d_backward(g, x, w, p), K.conv2d_backward(g, x, w, p)
    assert all(u.tobytes() == v.tobytes() for u, v in zip(r1, r2))
