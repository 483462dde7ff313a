"""Layers with explicit forward/backward passes.

Activations are numpy arrays in (batch, height, width, channels) layout.
Each layer keeps its learnable arrays in ``params`` and fills ``grads`` with
the same keys during ``backward``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..rng import stream


def glorot_uniform(shape, seed: int, key: int = 0) -> np.ndarray:
    """Glorot/Xavier uniform draw; conv kernels are (kh, kw, in, out)."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 4:
        receptive = shape[0] * shape[1]
        fan_in, fan_out = receptive * shape[2], receptive * shape[3]
    else:
        raise ValueError(f"cannot derive fans from shape {shape}")
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("glorot_uniform needs positive fan_in and fan_out")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return stream(seed, key).uniform(-limit, limit, size=shape)


def same_padding(k: int) -> tuple[int, int]:
    """(before, after) zero padding that keeps the size at stride 1; extra goes after."""
    before = (k - 1) // 2
    return before, k - 1 - before


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train: bool = True):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError


class Conv2D(Layer):
    """Stride-1 cross-correlation with 'same' zero padding."""

    def __init__(self, kh: int, kw: int, in_ch: int, out_ch: int, seed: int = 0, key: int = 0):
        super().__init__()
        if min(kh, kw, in_ch, out_ch) < 1:
            raise ValueError("kernel extents and channel counts must be >= 1")
        self.params["w"] = glorot_uniform((kh, kw, in_ch, out_ch), seed, key)
        self.params["b"] = np.zeros(out_ch)

    @property
    def kernel_shape(self):
        return self.params["w"].shape

    def forward(self, x, train=True):
        kh, kw, cin, cout = self.kernel_shape
        if x.ndim != 4 or x.shape[-1] != cin:
            raise ValueError(f"conv expects (B, H, W, {cin}) input, got {x.shape}")
        B, H, W, _ = x.shape
        ph, pw = same_padding(kh), same_padding(kw)
        xp = np.pad(x, ((0, 0), ph, pw, (0, 0)))
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # B, H, W, C, kh, kw
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * H * W, kh * kw * cin)
        y = cols @ self.params["w"].reshape(-1, cout) + self.params["b"]
        self._cache = (x.shape, cols)
        return y.reshape(B, H, W, cout)

    def backward(self, gy):
        (B, H, W, cin), cols = self._cache
        kh, kw, _, cout = self.kernel_shape
        g = gy.reshape(-1, cout)
        self.grads["w"] = (cols.T @ g).reshape(self.kernel_shape)
        self.grads["b"] = g.sum(axis=0)
        gcols = (g @ self.params["w"].reshape(-1, cout).T).reshape(B, H, W, kh, kw, cin)
        ph, pw = same_padding(kh), same_padding(kw)
        gxp = np.zeros((B, H + kh - 1, W + kw - 1, cin))
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + H, j : j + W, :] += gcols[:, :, :, i, j, :]
        return gxp[:, ph[0] : ph[0] + H, pw[0] : pw[0] + W, :]


class BatchNorm(Layer):
    """Per-channel batch normalisation over (batch, height, width)."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)

    def forward(self, x, train=True):
        axes = tuple(range(x.ndim - 1))
        if train:
            if x.shape[0] < 2:
                raise ValueError("batch normalisation in train mode needs batch >= 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, gy):
        xhat, inv_std, train = self._cache
        axes = tuple(range(gy.ndim - 1))
        self.grads["gamma"] = (gy * xhat).sum(axis=axes)
        self.grads["beta"] = gy.sum(axis=axes)
        gxhat = gy * self.params["gamma"]
        if not train:
            return gxhat * inv_std
        n = gy.size // gy.shape[-1]
        return (inv_std / n) * (n * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))


class PReLU(Layer):
    """x for x >= 0, alpha * x otherwise; one learnable alpha per channel."""

    def __init__(self, channels: int, init: float = 0.25):
        super().__init__()
        self.params["alpha"] = np.full(channels, init)

    def forward(self, x, train=True):
        neg = x < 0
        self._cache = (x, neg)
        return np.where(neg, self.params["alpha"] * x, x)

    def backward(self, gy):
        x, neg = self._cache
        axes = tuple(range(x.ndim - 1))
        self.grads["alpha"] = np.where(neg, gy * x, 0.0).sum(axis=axes)
        return np.where(neg, self.params["alpha"] * gy, gy)


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, seed: int = 0, key: int = 0):
        super().__init__()
        self.params["w"] = glorot_uniform((in_features, out_features), seed, key)
        self.params["b"] = np.zeros(out_features)

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.params["w"].shape[0]:
            raise ValueError(f"dense expects (B, {self.params['w'].shape[0]}) input, got {x.shape}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, gy):
        self.grads["w"] = self._x.T @ gy
        self.grads["b"] = gy.sum(axis=0)
        return gy @ self.params["w"].T
