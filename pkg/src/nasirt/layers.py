"""Differentiable 1-D network layers with explicit forward/backward passes.

Conventions: convolutional activations are (batch, channels, length) arrays,
dense activations are (batch, features). A layer caches whatever its backward
pass needs during forward; backward fills ``self.grads`` (same keys as
``self.params``) and returns the input gradient, or ``None`` when the caller
sets ``need_input_grad=False`` (used for the first layer of a stack).

All arithmetic is float64. Convolutions are valid (no padding), stride 1,
implemented as im2col matrix products.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ArchitectureError",
    "Layer",
    "Conv1D",
    "BatchNorm1D",
    "LeakyReLU",
    "Tanh",
    "MaxPool1D",
    "Flatten",
    "Dense",
    "Dropout",
    "softmax",
    "cross_entropy",
    "param_count",
]


class ArchitectureError(ValueError):
    """Raised when a layer stack cannot be realized for the given input size."""


class Layer:
    """Base layer: parameter-free identity semantics."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None,
                update_stats: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray,
                 need_input_grad: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                    fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1D(Layer):
    """Valid cross-correlation, stride 1: (N, C, L) -> (N, F, L - K + 1)."""

    def __init__(self, in_channels: int, filters: int, kernel_size: int,
                 rng: np.random.Generator):
        super().__init__()
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        self.params = {
            "w": _fan_in_uniform(rng, (filters, in_channels, kernel_size),
                                 in_channels * kernel_size),
            "b": np.zeros(filters),
        }
        self._cache = None

    def output_length(self, length: int) -> int:
        return length - self.kernel_size + 1

    def forward(self, x, training=False, rng=None, update_stats=True):
        n, c, length = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        if length < self.kernel_size:
            raise ArchitectureError(
                f"conv kernel {self.kernel_size} exceeds input length {length}"
            )
        k = self.kernel_size
        l_out = length - k + 1
        win = sliding_window_view(x, k, axis=2)          # (N, C, L_out, K)
        cols = win.transpose(0, 2, 1, 3).reshape(n * l_out, c * k)
        w = self.params["w"].reshape(self.filters, c * k)
        out = cols @ w.T
        out = out.reshape(n, l_out, self.filters).transpose(0, 2, 1) \
            + self.params["b"][None, :, None]
        self._cache = (cols, (n, c, length, l_out))
        return out

    def backward(self, dout, need_input_grad=True):
        cols, (n, c, length, l_out) = self._cache
        k = self.kernel_size
        dflat = dout.transpose(0, 2, 1).reshape(n * l_out, self.filters)
        self.grads["w"] = (dflat.T @ cols).reshape(self.filters, c, k)
        self.grads["b"] = dout.sum(axis=(0, 2))
        if not need_input_grad:
            return None
        dcols = (dflat @ self.params["w"].reshape(self.filters, c * k))
        dcols = dcols.reshape(n, l_out, c, k)
        dx = np.zeros((n, c, length))
        for j in range(k):       # fold overlapping windows back onto the input
            dx[:, :, j:j + l_out] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dx


class BatchNorm1D(Layer):
    """Per-channel normalization of (N, C, L) maps over batch and position.

    Training mode normalizes with batch statistics and (optionally) updates
    the running estimates used at inference.
    """

    def __init__(self, channels: int, momentum: float = 0.1,
                 eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def forward(self, x, training=False, rng=None, update_stats=True):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ValueError(f"expected (N, {self.channels}, L), got {x.shape}")
        if training:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            if update_stats:
                self.running_mean = ((1 - self.momentum) * self.running_mean
                                     + self.momentum * mean)
                self.running_var = ((1 - self.momentum) * self.running_var
                                    + self.momentum * var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None]) * inv_std[None, :, None]
        self._cache = (x_hat, inv_std, training, x.shape)
        return (self.params["gamma"][None, :, None] * x_hat
                + self.params["beta"][None, :, None])

    def backward(self, dout, need_input_grad=True):
        x_hat, inv_std, training, shape = self._cache
        self.grads["gamma"] = (dout * x_hat).sum(axis=(0, 2))
        self.grads["beta"] = dout.sum(axis=(0, 2))
        if not need_input_grad:
            return None
        scale = (self.params["gamma"] * inv_std)[None, :, None]
        if not training:
            return dout * scale
        m = shape[0] * shape[2]
        mean_d = dout.mean(axis=(0, 2))[None, :, None]
        mean_dx = (dout * x_hat).sum(axis=(0, 2))[None, :, None] / m
        return scale * (dout - mean_d - x_hat * mean_dx)


class LeakyReLU(Layer):
    def __init__(self, negative_slope: float = 0.3):
        super().__init__()
        self.negative_slope = negative_slope
        self._cache = None

    def forward(self, x, training=False, rng=None, update_stats=True):
        pos = x > 0
        self._cache = pos
        return np.where(pos, x, self.negative_slope * x)

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        pos = self._cache
        return np.where(pos, dout, self.negative_slope * dout)


class Tanh(Layer):
    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x, training=False, rng=None, update_stats=True):
        out = np.tanh(x)
        self._cache = out
        return out

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        out = self._cache
        return dout * (1.0 - out * out)


class MaxPool1D(Layer):
    """Non-overlapping max pooling; trailing remainder positions are dropped."""

    def __init__(self, size: int):
        super().__init__()
        if size < 2:
            raise ValueError("pool size must be >= 2")
        self.size = size
        self._cache = None

    def output_length(self, length: int) -> int:
        return length // self.size

    def forward(self, x, training=False, rng=None, update_stats=True):
        n, c, length = x.shape
        l_out = length // self.size
        if l_out == 0:
            raise ArchitectureError(
                f"maxpool size {self.size} collapses length {length} to zero"
            )
        windows = x[:, :, :l_out * self.size].reshape(n, c, l_out, self.size)
        idx = windows.argmax(axis=3)
        out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
        self._cache = (idx, (n, c, length, l_out))
        return out

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        idx, (n, c, length, l_out) = self._cache
        dwin = np.zeros((n, c, l_out, self.size))
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=3)
        dx = np.zeros((n, c, length))
        dx[:, :, :l_out * self.size] = dwin.reshape(n, c, l_out * self.size)
        return dx


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x, training=False, rng=None, update_stats=True):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        return dout.reshape(self._cache)


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "w": _fan_in_uniform(rng, (in_features, out_features), in_features),
            "b": np.zeros(out_features),
        }
        self._cache = None

    def forward(self, x, training=False, rng=None, update_stats=True):
        if x.shape[1] != self.in_features:
            raise ValueError(
                f"expected {self.in_features} features, got {x.shape[1]}"
            )
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout, need_input_grad=True):
        x = self._cache
        self.grads["w"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        if not need_input_grad:
            return None
        return dout @ self.params["w"].T


class Dropout(Layer):
    """Inverted dropout: active only when training with an rng supplied."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._cache = None

    def forward(self, x, training=False, rng=None, update_stats=True):
        if not training or rng is None or self.rate == 0.0:
            self._cache = None
            return x
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, dout, need_input_grad=True):
        if not need_input_grad:
            return None
        if self._cache is None:
            return dout
        return dout * self._cache


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax; rows sum to 1 within float tolerance."""
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def cross_entropy(logits: np.ndarray,
                  labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def param_count(layers) -> int:
    """Total learnable element count over a layer stack (weights + biases)."""
    return sum(layer.param_count() for layer in layers)
