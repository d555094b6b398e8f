import numpy as np
import pytest

from dactext import nn
from dactext.nn import Parameter


def test_embedding_forward_and_repeated_id_gradient():
    table = np.arange(6, dtype=float).reshape(3, 2)
    assert np.array_equal(nn.embedding_forward(table, [2, 0]), [[4, 5], [0, 1]])
    grad = np.zeros_like(table)
    nn.embedding_backward(grad, [1, 1, 2], np.array([[0.5, 0.5], [0.5, 0.5], [2.0, 2.0]]))
    assert np.array_equal(grad, [[0, 0], [1, 1], [2, 2]])


def test_embedding_out_of_range_names_position():
    with pytest.raises(IndexError, match="position 1"):
        nn.embedding_forward(np.zeros((3, 2)), [0, 3])


def test_conv_matches_naive_loop(rng):
    x = rng.normal(size=(7, 3))
    k = rng.normal(size=(4, 3, 3))
    b = rng.normal(size=4)
    out = nn.conv1d_forward(x, k, b)
    ref = np.array([[np.sum(x[t:t + 3] * k[f]) + b[f] for f in range(4)] for t in range(5)])
    assert np.allclose(out, ref, atol=1e-12)


def test_conv_too_short_input():
    with pytest.raises(ValueError, match="shorter than filter width"):
        nn.conv1d_forward(np.zeros((2, 3)), np.zeros((1, 3, 3)), np.zeros(1))


def test_max_over_time_ties_take_first():
    vals, idx = nn.max_over_time(np.array([[1.0, 2.0], [1.0, 5.0], [0.0, 5.0]]))
    assert np.array_equal(vals, [1.0, 5.0])
    assert np.array_equal(idx, [0, 1])
    dx = nn.max_over_time_backward(idx, np.array([3.0, 4.0]), 3)
    assert np.array_equal(dx, [[3, 0], [0, 4], [0, 0]])
    with pytest.raises(ValueError):
        nn.max_over_time(np.zeros((0, 2)))


def test_dense_and_softmax_values():
    assert np.array_equal(nn.dense_forward(np.array([1.0, 2.0]), np.array([[3.0, 4.0]]), np.array([1.0])), [12.0])
    assert np.allclose(nn.softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75], atol=1e-15)
    with pytest.raises(ValueError):
        nn.dense_forward(np.ones(3), np.ones((1, 2)), np.ones(1))


def test_softmax_rejects_nonfinite():
    with pytest.raises(nn.NonFiniteError):
        nn.softmax(np.array([0.0, np.nan]))


def test_relu_backward_masks():
    x = np.array([-1.0, 0.0, 2.0])
    assert np.array_equal(nn.relu(x), [0, 0, 2])
    assert np.array_equal(nn.relu_backward(x, np.ones(3)), [0, 0, 1])


def test_adam_first_step_is_lr_sign():
    value, m, v = nn.adam_update(np.array([1.0, 1.0]), np.array([0.5, -2.0]), np.zeros(2), np.zeros(2), 1, lr=0.1)
    assert np.allclose(value, [0.9, 1.1], atol=1e-7)
    with pytest.raises(ValueError):
        nn.adam_update(value, value, m, v, 0)


def _layer_check(forward, backward, params, rng):
    """Loss = sum(c * forward()) for a fixed random c."""
    c = rng.normal(size=forward().shape)

    def f():
        out = forward()
        grads = backward(c)
        for p, g in zip(params, grads):
            p.grad[...] = g
        return float(np.sum(c * out))
    return nn.grad_check(f, params)


def test_isolated_layer_gradients(rng):
    x = Parameter("x", rng.normal(size=(6, 3)))
    k = Parameter("k", rng.normal(size=(2, 3, 3)))
    b = Parameter("b", rng.normal(size=2))
    err = _layer_check(lambda: nn.conv1d_forward(x.value, k.value, b.value),
                       lambda g: nn.conv1d_backward(x.value, k.value, g), [x, k, b], rng)
    assert err < 1e-6
    W = Parameter("W", rng.normal(size=(3, 4)))
    bb = Parameter("bb", rng.normal(size=3))
    xi = Parameter("xi", rng.normal(size=(5, 4)))
    err = _layer_check(lambda: nn.dense_forward(xi.value, W.value, bb.value),
                       lambda g: nn.dense_backward(xi.value, W.value, g), [xi, W, bb], rng)
    assert err < 1e-6
    z = Parameter("z", rng.normal(size=(5, 3)) + 0.1)
    err = _layer_check(lambda: nn.relu(z.value), lambda g: [nn.relu_backward(z.value, g)], [z], rng)
    assert err < 1e-6


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        nn.grad_check(lambda: 0.0, [], h=0.0)


def test_make_rng_is_reproducible():
    assert np.array_equal(nn.make_rng(3).random(4), nn.make_rng(3).random(4))
