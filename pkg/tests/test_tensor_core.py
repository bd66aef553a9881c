import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alseg import tensor_core as tc
from alseg.errors import LabelError, ParameterError, ShapeError
from alseg.rng import RngStream

from _oracles import numeric_grad, rel_error


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- conv2d ----------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.ones((1, 1, 3, 3))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(tc.conv2d(x, k, np.zeros(1)), x)


def test_conv_all_ones_hand_values():
    out = tc.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))[0, 0]
    expected = np.array([[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]])
    np.testing.assert_array_equal(out, expected)


def test_conv_zero_kernel_gives_bias(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    out = tc.conv2d(x, np.zeros((2, 3, 3, 3)), np.array([0.5, -1.5]))
    assert np.all(out[:, 0] == 0.5) and np.all(out[:, 1] == -1.5)


def test_conv_matches_direct_loop(rng):
    x = rng.normal(size=(2, 2, 5, 4))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 3, 5, 4))
    for n in range(2):
        for o in range(3):
            for i in range(5):
                for j in range(4):
                    ref[n, o, i, j] = b[o] + np.sum(xp[n, :, i:i + 3, j:j + 3] * k[o])
    np.testing.assert_allclose(tc.conv2d(x, k, b), ref, rtol=1e-12, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        tc.conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)), np.zeros(1))


@given(st.floats(-5, 5, allow_nan=False))
@settings(max_examples=25, deadline=None)
def test_conv_linear_in_input_and_kernel(alpha):
    r = np.random.default_rng(7)
    x = r.normal(size=(1, 2, 6, 6))
    k = r.normal(size=(2, 2, 3, 3))
    zero = np.zeros(2)
    np.testing.assert_allclose(tc.conv2d(alpha * x, k, zero), alpha * tc.conv2d(x, k, zero), atol=1e-12)
    np.testing.assert_allclose(tc.conv2d(x, alpha * k, zero), alpha * tc.conv2d(x, k, zero), atol=1e-12)


# --- pooling / upsampling ------------------------------------------------

def test_maxpool_examples():
    out, _ = tc.maxpool2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 4.0
    out, _ = tc.maxpool2(np.full((1, 1, 4, 4), 2.5))
    assert np.all(out == 2.5)
    out, _ = tc.maxpool2(np.arange(16.0).reshape(1, 1, 4, 4))
    np.testing.assert_array_equal(out[0, 0], [[5, 7], [13, 15]])


def test_maxpool_odd_size():
    with pytest.raises(ShapeError):
        tc.maxpool2(np.ones((1, 1, 3, 4)))


def test_upsample_examples():
    np.testing.assert_array_equal(tc.upsample2(np.ones((1, 1, 1, 1)))[0, 0], np.ones((2, 2)))
    up = tc.upsample2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))[0, 0]
    np.testing.assert_array_equal(up, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    c = np.full((1, 2, 4, 4), -3.0)
    np.testing.assert_array_equal(tc.upsample2(tc.maxpool2(c)[0]), c)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_pool_up_idempotent_on_block_constant(c, h, w):
    r = np.random.default_rng(c * 100 + h * 10 + w)
    x = tc.upsample2(r.normal(size=(1, c, h, w)))
    np.testing.assert_array_equal(tc.upsample2(tc.maxpool2(x)[0]), x)


# --- elementwise ---------------------------------------------------------

def test_relu_values_and_grad():
    x = np.array([-1.0, 2.5, 0.0])
    np.testing.assert_array_equal(tc.relu(x), [0.0, 2.5, 0.0])
    np.testing.assert_array_equal(tc.relu_backward(np.ones(3), x), [0.0, 1.0, 0.0])


def test_softmax_examples():
    p = tc.softmax_channels(np.zeros((1, 2, 1, 1)))
    np.testing.assert_allclose(p.ravel(), [0.5, 0.5])
    p = tc.softmax_channels(np.array([math.log(3), 0.0]).reshape(1, 2, 1, 1))
    np.testing.assert_allclose(p.ravel(), [0.75, 0.25], atol=1e-15)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-500, 500))
@settings(max_examples=50, deadline=None)
def test_softmax_shift_invariance(a, b, t):
    z = np.array([a, b]).reshape(1, 2, 1, 1)
    np.testing.assert_allclose(tc.softmax_channels(z + t), tc.softmax_channels(z), atol=1e-12)


def test_softmax_normalised_and_positive(rng):
    p = tc.softmax_channels(rng.normal(0, 20, size=(3, 4, 5, 5)))
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_dropout_rate_zero_is_identity(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    out, _ = tc.dropout(x, 0.0, RngStream(1))
    np.testing.assert_array_equal(out, x)


def test_dropout_expectation_and_determinism():
    x = np.full((1, 1, 100, 100), 2.0)
    outs = [tc.dropout(x, 0.5, RngStream(3, "d", draw_counter=i))[0] for i in range(100)]
    # 100 passes x 10000 elements = 1e6 draws
    assert abs(np.mean(outs) - 2.0) / 2.0 < 0.02
    a, _ = tc.dropout(x, 0.3, RngStream(9, "same"))
    b, _ = tc.dropout(x, 0.3, RngStream(9, "same"))
    np.testing.assert_array_equal(a, b)


def test_dropout_rejects_rate_one():
    with pytest.raises(ParameterError):
        tc.dropout(np.ones((1, 1, 2, 2)), 1.0, RngStream(0))


def test_cross_entropy_examples():
    probs = np.zeros((1, 2, 2, 2))
    probs[:, 1] = 1.0
    assert tc.cross_entropy_loss(probs, np.ones((1, 2, 2), dtype=int)) <= 1e-11
    uniform = np.full((1, 2, 3, 3), 0.5)
    assert tc.cross_entropy_loss(uniform, np.zeros((1, 3, 3), dtype=int)) == pytest.approx(-math.log(0.5 + 1e-12), abs=1e-15)
    p = np.array([0.75, 0.25]).reshape(1, 2, 1, 1)
    assert tc.cross_entropy_loss(p, np.ones((1, 1, 1), dtype=int)) == pytest.approx(1.386294, abs=1e-6)


def test_cross_entropy_bad_label():
    with pytest.raises(LabelError):
        tc.cross_entropy_loss(np.full((1, 2, 1, 1), 0.5), np.full((1, 1, 1), 2))


# --- gradients vs finite differences ------------------------------------

def _check(f_out, grads, wrt, r):
    """Compare analytic grads of L = sum(out * R) against central differences."""
    weights = r.normal(size=f_out().shape)
    for x, g in zip(wrt, grads(weights)):
        num = numeric_grad(lambda: float(np.sum(f_out() * weights)), x)
        assert rel_error(g, num) < 1e-4


def test_conv_gradients(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    _check(lambda: tc.conv2d(x, k, b),
           lambda w: tc.conv2d_backward(w, x, k), [x, k, b], rng)


def test_maxpool_gradient(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    _check(lambda: tc.maxpool2(x)[0], lambda w: [tc.maxpool2_backward(w, tc.maxpool2(x)[1])], [x], rng)


def test_upsample_gradient(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    _check(lambda: tc.upsample2(x), lambda w: [tc.upsample2_backward(w)], [x], rng)


def test_relu_gradient(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    x[np.abs(x) < 1e-3] = 0.5  # stay off the kink
    _check(lambda: tc.relu(x), lambda w: [tc.relu_backward(w, x)], [x], rng)


def test_softmax_gradient(rng):
    z = rng.normal(size=(1, 2, 8, 8))
    _check(lambda: tc.softmax_channels(z),
           lambda w: [tc.softmax_channels_backward(w, tc.softmax_channels(z))], [z], rng)


def test_dropout_gradient(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    _, mask = tc.dropout(x, 0.5, RngStream(5))
    _check(lambda: x * mask, lambda w: [w * mask], [x], rng)


def test_cross_entropy_gradients(rng):
    z = rng.normal(size=(1, 2, 8, 8))
    y = rng.integers(0, 2, size=(1, 8, 8))
    p = tc.softmax_channels(z)
    num = numeric_grad(lambda: tc.cross_entropy_loss(p, y), p)
    assert rel_error(tc.cross_entropy_backward(p, y), num) < 1e-4
    num = numeric_grad(lambda: tc.cross_entropy_loss(tc.softmax_channels(z), y), z)
    assert rel_error(tc.softmax_cross_entropy_backward(tc.softmax_channels(z), y), num) < 1e-4


def test_dump_roundtrip(tmp_path, rng):
    t = rng.normal(size=(2, 3, 4, 5))
    tc.dump_tensor(t, tmp_path / "enc0.w")
    header = (tmp_path / "enc0.w.json").read_text()
    assert '"dtype": "f64"' in header and '"order": "row-major"' in header
    assert (tmp_path / "enc0.w.bin").stat().st_size == t.size * 8
    np.testing.assert_array_equal(tc.load_tensor(tmp_path / "enc0.w"), t)


def test_cross_entropy_gradient_when_saturated():
    # target probability underflows below eps: the clamp must show in the gradient
    z = np.zeros((1, 2, 2, 2))
    z[0, 0] = 60.0
    y = np.ones((1, 2, 2), dtype=int)
    num = numeric_grad(lambda: tc.cross_entropy_loss(tc.softmax_channels(z), y), z)
    g = tc.softmax_cross_entropy_backward(tc.softmax_channels(z), y)
    assert np.max(np.abs(g)) < 1e-12
    assert rel_error(g, num) < 1e-4 or np.max(np.abs(num)) < 1e-9
