"""Finite-difference verification of every layer's backward pass.

Each check builds the scalar objective L = sum(forward(x) * R) for a
fixed random R, so dL/dy = R and backward(R) must reproduce the central
finite differences of L with respect to inputs and parameters.
"""

import numpy as np
import pytest

from flowgate.nn.layers import (
    BatchNorm,
    Conv1d,
    Dropout,
    Flatten,
    Linear,
    ReLU,
)
from conftest import max_relative_error, numeric_gradient

TOL = 1e-4


def check_layer_gradients(layer, x, train=False, rng=None):
    """Assert analytic input and parameter gradients match FD oracles."""
    weight = np.random.default_rng(99).normal(size=layer.forward(
        x, train=train, rng=rng).shape)

    def objective():
        return float(np.sum(layer.forward(x, train=train, rng=rng) * weight))

    layer.forward(x, train=train, rng=rng)
    dx = layer.backward(weight)
    assert max_relative_error(dx, numeric_gradient(objective, x)) < TOL
    for name, param in layer.params.items():
        numeric = numeric_gradient(objective, param)
        layer.forward(x, train=train, rng=rng)
        layer.backward(weight)
        assert max_relative_error(layer.grads[name], numeric) < TOL, name


@pytest.mark.parametrize("seed", range(3))
def test_linear_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = Linear(5, 4)
    layer.init_params(rng)
    check_layer_gradients(layer, rng.normal(size=(6, 5)))


@pytest.mark.parametrize("kernel,stride", [(3, 1), (5, 2), (2, 3)])
def test_conv1d_gradients(kernel, stride):
    rng = np.random.default_rng(kernel * 10 + stride)
    layer = Conv1d(2, 3, kernel, stride)
    layer.init_params(rng)
    check_layer_gradients(layer, rng.normal(size=(4, 2, 9)))


def test_conv1d_same_padding_output_length():
    layer = Conv1d(1, 1, 3, stride=1)
    layer.init_params(np.random.default_rng(0))
    assert layer.forward(np.zeros((1, 1, 10))).shape == (1, 1, 10)
    strided = Conv1d(1, 1, 5, stride=2)
    strided.init_params(np.random.default_rng(0))
    assert strided.forward(np.zeros((1, 1, 9))).shape == (1, 1, 5)


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients_2d(train):
    rng = np.random.default_rng(int(train))
    layer = BatchNorm(4)
    x = rng.normal(size=(8, 4))
    if not train:
        # Populate running statistics with something non-trivial first.
        layer.forward(rng.normal(size=(16, 4)), train=True)
    check_layer_gradients(layer, x, train=train)


def test_batchnorm_gradients_3d():
    rng = np.random.default_rng(5)
    layer = BatchNorm(3)
    check_layer_gradients(layer, rng.normal(size=(4, 3, 6)), train=True)


def test_batchnorm_normalizes_in_train_mode():
    rng = np.random.default_rng(0)
    layer = BatchNorm(4)
    y = layer.forward(rng.normal(loc=3.0, scale=2.0, size=(64, 4)), train=True)
    assert np.allclose(y.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(y.std(axis=0), 1.0, atol=1e-3)


def test_batchnorm_eval_uses_running_stats():
    rng = np.random.default_rng(1)
    layer = BatchNorm(2)
    for _ in range(200):
        layer.forward(rng.normal(loc=5.0, size=(32, 2)), train=True)
    y = layer.forward(np.full((4, 2), 5.0), train=False)
    assert np.allclose(y, 0.0, atol=0.2)


def test_relu_gradient():
    rng = np.random.default_rng(2)
    check_layer_gradients(ReLU(), rng.normal(size=(5, 7)))


def test_flatten_round_trips_shape():
    rng = np.random.default_rng(3)
    layer = Flatten()
    x = rng.normal(size=(4, 3, 5))
    y = layer.forward(x)
    assert y.shape == (4, 15)
    assert layer.backward(y).shape == x.shape
    check_layer_gradients(layer, x)


def test_dropout_eval_is_identity():
    rng = np.random.default_rng(4)
    layer = Dropout(0.5)
    x = rng.normal(size=(6, 8))
    assert np.array_equal(layer.forward(x, train=False), x)
    check_layer_gradients(layer, x, train=False)


def test_dropout_train_is_inverted_and_masked():
    rng = np.random.default_rng(5)
    layer = Dropout(0.25)
    x = np.ones((2000, 4))
    y = layer.forward(x, train=True, rng=rng)
    kept = y != 0.0
    assert 0.70 < kept.mean() < 0.80
    assert np.allclose(y[kept], 1.0 / 0.75)
    # Backward reuses the exact forward mask.
    dy = np.ones_like(x)
    assert np.array_equal(layer.backward(dy) != 0.0, kept)


def test_dropout_train_requires_rng():
    with pytest.raises(ValueError, match="rng"):
        Dropout(0.5).forward(np.ones((2, 2)), train=True)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_linear_state_round_trip():
    rng = np.random.default_rng(6)
    layer = Linear(3, 2)
    layer.init_params(rng)
    arrays = [a.copy() for _, a in layer.state_arrays()]
    fresh = Linear(3, 2)
    fresh.load_state_arrays(arrays)
    x = rng.normal(size=(4, 3))
    assert np.array_equal(layer.forward(x), fresh.forward(x))
