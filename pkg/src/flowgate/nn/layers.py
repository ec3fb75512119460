"""Network layers with explicit forward and backward passes.

All arithmetic is float64 numpy. Each layer caches what its backward
pass needs during forward; backward returns the gradient with respect
to the layer input and accumulates parameter gradients in `grads`.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Layer:
    """Base class; parameter-free layers keep empty dicts."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def trainable_count(self) -> int:
        return sum(p.size for p in self.params.values())

    # Arrays that must survive serialization, in a fixed documented order.
    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return list(self.params.items()) + list(self.state.items())

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        names = [n for n, _ in self.state_arrays()]
        assert len(names) == len(arrays)
        for name, arr in zip(names, arrays):
            target = self.params if name in self.params else self.state
            if target[name].shape != arr.shape:
                raise ValueError(f"shape mismatch loading {name}")
            target[name] = arr.copy()


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                     fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "W": np.zeros((out_features, in_features)),
            "b": np.zeros(out_features),
        }

    def init_params(self, rng: np.random.Generator) -> None:
        self.params["W"] = _kaiming_uniform(
            rng, (self.out_features, self.in_features), self.in_features)
        bound = 1.0 / np.sqrt(self.in_features)
        self.params["b"] = rng.uniform(-bound, bound, size=self.out_features)

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        self.grads["W"] = dy.T @ self._x
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"]


class Conv1d(Layer):
    """1D convolution over (N, C, L) input with 'same' zero padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.params = {
            "W": np.zeros((out_channels, in_channels * kernel)),
            "b": np.zeros(out_channels),
        }

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.in_channels * self.kernel
        self.params["W"] = _kaiming_uniform(
            rng, (self.out_channels, fan_in), fan_in)
        bound = 1.0 / np.sqrt(fan_in)
        self.params["b"] = rng.uniform(-bound, bound, size=self.out_channels)

    def _pad(self, length: int) -> tuple[int, int]:
        out_len = -(-length // self.stride)  # ceil
        total = max(0, (out_len - 1) * self.stride + self.kernel - length)
        left = total // 2
        return left, total - left

    def forward(self, x, train=False, rng=None):
        n, c, length = x.shape
        left, right = self._pad(length)
        xp = np.pad(x, ((0, 0), (0, 0), (left, right)))
        lp = xp.shape[2]
        out_len = (lp - self.kernel) // self.stride + 1
        idx = np.arange(out_len)[:, None] * self.stride + np.arange(self.kernel)
        cols = xp[:, :, idx]  # (N, C, out_len, k)
        cols = cols.transpose(0, 2, 1, 3).reshape(n, out_len, c * self.kernel)
        y = cols @ self.params["W"].T + self.params["b"]
        self._cols = cols
        self._idx = idx
        self._pad_lr = (left, right)
        self._in_shape = x.shape
        return y.transpose(0, 2, 1)  # (N, out_channels, out_len)

    def backward(self, dy):
        n, c, length = self._in_shape
        dyt = dy.transpose(0, 2, 1)  # (N, out_len, out_channels)
        self.grads["W"] = np.einsum("nlo,nlc->oc", dyt, self._cols)
        self.grads["b"] = dyt.sum(axis=(0, 1))
        dcols = dyt @ self.params["W"]  # (N, out_len, C*k)
        out_len = dcols.shape[1]
        dcols = dcols.reshape(n, out_len, c, self.kernel).transpose(0, 2, 1, 3)
        left, right = self._pad_lr
        dxp = np.zeros((n, c, length + left + right))
        np.add.at(dxp, (slice(None), slice(None), self._idx), dcols)
        return dxp[:, :, left:length + left]


class BatchNorm(Layer):
    """Batch normalization over (N, F) or per-channel over (N, C, L)."""

    def __init__(self, num_features: int) -> None:
        super().__init__()
        self.num_features = num_features
        self.params = {
            "gamma": np.ones(num_features),
            "beta": np.zeros(num_features),
        }
        self.state = {
            "running_mean": np.zeros(num_features),
            "running_var": np.ones(num_features),
        }

    def _to2d(self, x):
        if x.ndim == 3:
            n, c, length = x.shape
            return x.transpose(0, 2, 1).reshape(n * length, c)
        return x

    def _from2d(self, x2, like):
        if like.ndim == 3:
            n, c, length = like.shape
            return x2.reshape(n, length, c).transpose(0, 2, 1)
        return x2

    def forward(self, x, train=False, rng=None):
        x2 = self._to2d(x)
        self._train = train
        self._like = x
        if train:
            mu = x2.mean(axis=0)
            var = x2.var(axis=0)
            self.state["running_mean"] = (
                (1 - BN_MOMENTUM) * self.state["running_mean"] + BN_MOMENTUM * mu)
            self.state["running_var"] = (
                (1 - BN_MOMENTUM) * self.state["running_var"] + BN_MOMENTUM * var)
        else:
            mu = self.state["running_mean"]
            var = self.state["running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x2 - mu) * inv
        self._xhat = xhat
        self._inv = inv
        y2 = self.params["gamma"] * xhat + self.params["beta"]
        return self._from2d(y2, x)

    def backward(self, dy):
        dy2 = self._to2d(dy)
        self.grads["gamma"] = (dy2 * self._xhat).sum(axis=0)
        self.grads["beta"] = dy2.sum(axis=0)
        dxhat = dy2 * self.params["gamma"]
        if self._train:
            m = dy2.shape[0]
            dx2 = (self._inv / m) * (
                m * dxhat
                - dxhat.sum(axis=0)
                - self._xhat * (dxhat * self._xhat).sum(axis=0)
            )
        else:
            dx2 = dxhat * self._inv
        return self._from2d(dx2, self._like)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask
