from __future__ import annotations

import math

import numpy as np
import pytest

from loopscreen.errors import BadLabel, NoCachedForward, OddSpatialDim, ShapeMismatch
from loopscreen.nn import (
    Adam,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    Flatten,
    GlobalAvgPool,
    MaxPool2,
    MaxPoolSame3,
    ReLU,
    SigmoidGate,
    conv2d,
    grad_check,
    softmax,
    softmax_cross_entropy,
)
from loopscreen.nn.optim import adam_step

from oracles import naive_conv2d


# ---------------------------------------------------------------------------
# conv2d contract (channels-first functional form)


def test_conv2d_scalar_kernel_doubles():
    x = np.arange(9, dtype=np.float64).reshape(1, 3, 3)
    w = np.full((1, 1, 1, 1), 2.0)
    out = conv2d(x, w, np.zeros(1))
    assert np.array_equal(out, 2.0 * x)


def test_conv2d_zero_weights_yield_bias():
    x = np.random.default_rng(0).random((2, 5, 5))
    w = np.zeros((3, 2, 3, 3))
    out = conv2d(x, w, np.array([1.5, -2.0, 0.25]), padding=1)
    for channel, b in enumerate((1.5, -2.0, 0.25)):
        assert np.allclose(out[channel], b)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_naive_loops(rng, stride, padding):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    expected = naive_conv2d(x, w, b, stride=stride, padding=padding)
    got = conv2d(x, w, b, stride=stride, padding=padding)
    assert np.abs(got - expected).max() < 1e-10


def test_conv2d_batched_form(rng):
    x = rng.standard_normal((4, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    got = conv2d(x, w, b, padding=1)
    for i in range(4):
        assert np.allclose(got[i], conv2d(x[i], w, b, padding=1), atol=1e-12)


def test_conv2d_shape_errors(rng):
    layer = Conv2d(2, 3, 3)
    with pytest.raises(ShapeMismatch):
        layer.forward(rng.standard_normal((1, 6, 6, 5)))  # wrong channels
    with pytest.raises(ShapeMismatch):
        Conv2d(2, 3, 3, stride=2).forward(rng.standard_normal((1, 6, 6, 2)))


def test_backward_requires_forward():
    layer = Conv2d(1, 1, 3)
    with pytest.raises(NoCachedForward):
        layer.backward(np.zeros((1, 2, 2, 1)))


def test_conv2d_zero_grad_out_gives_zero_grads(rng):
    layer = Conv2d(2, 3, 3, padding=1, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 6, 6, 2))
    out = layer.forward(x, training=True)
    gx = layer.backward(np.zeros_like(out))
    assert not gx.any()
    assert not layer.gradients()["weights"].any()
    assert not layer.gradients()["bias"].any()


def test_conv2d_bias_gradient_is_grad_sum(rng):
    layer = Conv2d(8, 4, 3, padding=1, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 6, 6, 8))
    out = layer.forward(x, training=True)
    g = rng.standard_normal(out.shape)
    layer.backward(g)
    assert np.allclose(layer.grad_bias, g.sum(axis=(0, 1, 2)), atol=1e-12)


# ---------------------------------------------------------------------------
# pooling


def test_maxpool_window_values_and_routing():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    pool = MaxPool2()
    out = pool.forward(x, training=True)
    assert out.reshape(()) == 4.0
    gx = pool.backward(np.ones_like(out))
    expected = np.zeros_like(x)
    expected[0, 1, 1, 0] = 1.0
    assert np.array_equal(gx, expected)


def test_maxpool_tie_routes_to_first_row_major():
    x = np.full((1, 4, 4, 2), 0.5)
    pool = MaxPool2()
    out = pool.forward(x, training=True)
    gx = pool.backward(np.ones_like(out))
    # all gradient lands on the top-left of each 2x2 window
    assert np.array_equal(gx[0, ::2, ::2, :], np.ones((2, 2, 2)))
    assert gx.sum() == out.size


def test_maxpool_rejects_odd_dims():
    with pytest.raises(OddSpatialDim):
        MaxPool2().forward(np.zeros((1, 5, 4, 1)))


def test_maxpool_same3_is_local_max():
    x = np.zeros((1, 5, 5, 1))
    x[0, 2, 2, 0] = 9.0
    out = MaxPoolSame3().forward(x)
    assert (out[0, 1:4, 1:4, 0] == 9.0).all()
    assert out[0, 0, 0, 0] == 0.0


# ---------------------------------------------------------------------------
# simple layers


def test_relu_values():
    out = ReLU().forward(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(out, np.array([0.0, 0.0, 2.0]))


def test_dense_identity():
    layer = Dense(3, 3, dtype=np.float64)
    layer.weights = np.eye(3)
    layer.bias = np.zeros(3)
    x = np.array([[1.0, -2.0, 0.5]])
    assert np.array_equal(layer.forward(x), x)


def test_dropout_eval_is_exact_identity(rng):
    layer = Dropout(0.5, seed=4)
    x = rng.standard_normal((8, 16))
    assert layer.forward(x, training=False) is x


def test_dropout_train_mask_is_seeded():
    x = np.ones((64, 64))
    a = Dropout(0.5, seed=11).forward(x, training=True)
    b = Dropout(0.5, seed=11).forward(x, training=True)
    assert np.array_equal(a, b)
    assert (a == 0).any() and (a == 2.0).any()  # inverted dropout scaling


def test_sigmoid_gate_range_and_extremes():
    gate = SigmoidGate()
    out = gate.forward(np.array([-1000.0, 0.0, 1000.0]))
    assert out[0] == pytest.approx(0.0, abs=1e-12)
    assert out[1] == 0.5
    assert out[2] == pytest.approx(1.0, abs=1e-12)


def test_flatten_roundtrip(rng):
    layer = Flatten()
    x = rng.standard_normal((3, 4, 5, 2))
    out = layer.forward(x, training=True)
    assert out.shape == (3, 40)
    assert np.array_equal(layer.backward(out), x)


def test_global_avg_pool_constant():
    x = np.full((2, 6, 6, 3), 0.25)
    assert np.allclose(GlobalAvgPool().forward(x), 0.25)


# ---------------------------------------------------------------------------
# loss


def test_cross_entropy_uniform_logits_ln2():
    loss = softmax_cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
    assert loss.value == pytest.approx(math.log(2.0), abs=1e-12)


def test_cross_entropy_extreme_logits_stable():
    loss = softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss.value == pytest.approx(0.0, abs=1e-9)
    assert np.isfinite(loss.gradient).all()


def test_cross_entropy_gradient_rows_sum_zero(rng):
    logits = rng.standard_normal((16, 2))
    labels = rng.integers(0, 2, 16)
    loss = softmax_cross_entropy(logits, labels)
    assert np.abs(loss.gradient.sum(axis=1)).max() <= 1e-9


def test_cross_entropy_gradient_matches_finite_difference(rng):
    logits = rng.standard_normal((5, 2))
    labels = rng.integers(0, 2, 5)
    analytic = softmax_cross_entropy(logits, labels).gradient
    eps = 1e-6
    for i in range(5):
        for j in range(2):
            bumped = logits.copy()
            bumped[i, j] += eps
            hi = softmax_cross_entropy(bumped, labels).value
            bumped[i, j] -= 2 * eps
            lo = softmax_cross_entropy(bumped, labels).value
            numeric = (hi - lo) / (2 * eps)
            assert analytic[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(BadLabel):
        softmax_cross_entropy(np.zeros((2, 2)), np.array([0, 2]))
    with pytest.raises(BadLabel):
        softmax_cross_entropy(np.zeros((1, 2)), np.array([-1]))


def test_softmax_rows_sum_to_one(rng):
    probs = softmax(rng.standard_normal((32, 2)) * 3)
    assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9
    assert (probs > 0).all() and (probs < 1).all()


# ---------------------------------------------------------------------------
# adam


def test_adam_first_step_approximates_lr_times_sign(rng):
    grad = rng.standard_normal(40)
    grad[np.abs(grad) < 0.1] = 0.5  # keep |g| away from epsilon's scale
    params = {"w": np.zeros(40)}
    opt = Adam(learning_rate=1e-4)
    opt.step(params, {"w": grad.copy()})
    expected = -1e-4 * np.sign(grad)
    assert np.allclose(params["w"], expected, rtol=1e-6)
    assert opt.step_count == 1


def test_adam_zero_gradient_never_moves():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    opt = Adam(learning_rate=0.1)
    for _ in range(50):
        opt.step(params, {"w": np.zeros(3)})
    assert np.array_equal(params["w"], np.array([1.0, -2.0, 3.0]))
    assert opt.step_count == 50


def test_adam_zero_learning_rate_is_identity(rng):
    params = {"w": rng.standard_normal(10)}
    before = params["w"].copy()
    opt = Adam(learning_rate=0.0)
    for _ in range(10):
        opt.step(params, {"w": rng.standard_normal(10)})
    assert np.array_equal(params["w"], before)


def test_adam_descends_quadratic():
    # scalar oracle: f(w) = w^2 from w=1 with lr=0.1 contracts well under 0.5
    params = {"w": np.array([1.0])}
    opt = Adam(learning_rate=0.1)
    for _ in range(100):
        opt.step(params, {"w": 2.0 * params["w"]})
    assert abs(params["w"][0]) < 0.5


def test_adam_shape_mismatch():
    opt = Adam()
    with pytest.raises(ShapeMismatch):
        opt.step({"w": np.zeros(3)}, {"w": np.zeros(4)})
    with pytest.raises(ShapeMismatch):
        opt.step({"w": np.zeros(3)}, {"v": np.zeros(3)})


def test_adam_step_functional_wrapper():
    params = {"w": np.array([1.0])}
    state = adam_step(params, {"w": np.array([1.0])}, Adam(learning_rate=0.01))
    assert state.step_count == 1
    assert params["w"][0] < 1.0


# ---------------------------------------------------------------------------
# targeted gradient checks (the exhaustive 20-trial suite runs in acceptance)


def test_grad_check_examples(rng):
    conv = Conv2d(8, 3, 3, padding=1, rng=rng, dtype=np.float64)
    assert grad_check(conv, (1, 6, 6, 8), np.random.default_rng(0)) < 1e-4
    dense = Dense(6, 4, rng=rng, dtype=np.float64)
    assert grad_check(dense, (3, 6), np.random.default_rng(1)) < 1e-5
    relu = ReLU()

    def away_from_kink(gen, shape):
        x = gen.standard_normal(shape)
        return np.where(np.abs(x) < 1e-2, 1e-2, x)

    assert grad_check(relu, (4, 20), np.random.default_rng(2),
                      input_fn=away_from_kink) < 1e-5


def test_depthwise_matches_per_channel_conv(rng):
    layer = DepthwiseConv2d(3, 3, padding=1, rng=rng, dtype=np.float64)
    x = rng.standard_normal((1, 6, 6, 3))
    out = layer.forward(x)
    for c in range(3):
        w = layer.weights[c][None, None]
        expected = conv2d(x[0, :, :, c][None], w, layer.bias[c:c + 1], padding=1)
        assert np.allclose(out[0, :, :, c], expected[0], atol=1e-12)


def test_eval_forward_is_bit_stable(rng):
    layer = Conv2d(4, 4, 3, padding=1, rng=rng)
    x = rng.standard_normal((2, 8, 8, 4)).astype(np.float32)
    assert np.array_equal(layer.forward(x), layer.forward(x))


def test_tensor_dump_roundtrip(tmp_path, rng):
    from loopscreen.nn import dump_tensor, load_tensor

    tensor = rng.standard_normal((3, 4, 5)).astype(np.float32)
    dump_tensor(tmp_path / "t.bin", tensor)
    again = load_tensor(tmp_path / "t.bin")
    assert again.shape == (3, 4, 5)
    assert np.array_equal(again, tensor)
    header = (tmp_path / "t.bin").read_bytes().split(b"\n", 1)[0]
    assert header == b"tensor 3 4 5"
