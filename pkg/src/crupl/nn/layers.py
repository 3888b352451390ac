"""Differentiable building blocks for 1-D convolutional classifiers.

Every layer follows an explicit-context protocol: ``forward`` returns the
output together with a cache, and ``backward`` consumes that cache. This lets
one layer take part in several forward passes per optimization step (the
consistency term needs a clean and a perturbed branch through shared
parameters). Parameter gradients accumulate into ``grads`` until
``zero_grads`` is called, so multi-branch losses simply call ``backward``
once per branch.

Parameters default to float32; ``astype`` produces a float64 copy for
finite-difference verification.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from crupl.errors import DegenerateBatchError, DimensionError, InvalidValueError


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    """Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    limit = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer: a dict of parameters and a matching dict of gradients."""

    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False):
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray, ctx):
        raise NotImplementedError

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0

    def _alloc_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state persisted in checkpoints (e.g. running stats)."""
        return {}

    def hyper(self) -> dict:
        """Constructor arguments needed to rebuild the layer."""
        return {}

    def astype(self, dtype) -> "Layer":
        other = self.__class__(**self.hyper())
        for k, v in self.params.items():
            other.params[k] = v.astype(dtype)
        for k, v in self.buffers().items():
            other.buffers()[k][...] = v
        other._alloc_grads()
        return other

    @property
    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())


class Conv1D(Layer):
    """Valid (unpadded) 1-D convolution over (batch, channels, time) input.

    Output time length is floor((T - kernel_size) / stride) + 1. The forward
    pass is an im2col matrix product, so throughput comes from BLAS.
    """

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        if kernel_size < 1:
            raise DimensionError(f"conv1d kernel size must be >= 1, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        rng = rng or np.random.default_rng(0)
        self.params["w"] = fan_in_uniform(
            rng, (out_channels, in_channels, kernel_size), in_channels * kernel_size, dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self._alloc_grads()

    def hyper(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel_size": self.kernel_size, "stride": self.stride}

    def _windows(self, x: np.ndarray) -> np.ndarray:
        # (B, C, T', k) view of every stride-aligned window
        return sliding_window_view(x, self.kernel_size, axis=2)[:, :, ::self.stride, :]

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv1d expected input (batch, {self.in_channels}, time), got {x.shape} "
                f"for kernel {self.params['w'].shape}")
        if x.shape[2] < self.kernel_size:
            raise DimensionError(
                f"conv1d kernel size {self.kernel_size} exceeds time length {x.shape[2]}")
        windows = self._windows(x)
        b, _, t_out, _ = windows.shape
        cols = windows.transpose(0, 2, 1, 3).reshape(b * t_out, -1)
        w2 = self.params["w"].reshape(self.out_channels, -1).T
        y = cols @ w2 + self.params["b"]
        return y.reshape(b, t_out, self.out_channels).transpose(0, 2, 1), x

    def backward(self, grad_out, ctx):
        x = ctx
        b, _, t_out = grad_out.shape
        windows = self._windows(x)
        if grad_out.shape != (b, self.out_channels, windows.shape[2]):
            raise DimensionError(
                f"conv1d upstream gradient {grad_out.shape} does not match output "
                f"(batch, {self.out_channels}, {windows.shape[2]})")
        gy = grad_out.transpose(0, 2, 1).reshape(b * t_out, self.out_channels)
        cols = windows.transpose(0, 2, 1, 3).reshape(b * t_out, -1)
        self.grads["b"] += grad_out.sum(axis=(0, 2))
        self.grads["w"] += (gy.T @ cols).reshape(self.params["w"].shape)
        grad_x = np.zeros_like(x)
        w = self.params["w"]
        for kk in range(self.kernel_size):
            # window t covers absolute position t*stride + kk
            contrib = np.einsum("bot,oc->bct", grad_out, w[:, :, kk], optimize=True)
            stop = kk + self.stride * (t_out - 1) + 1
            grad_x[:, :, kk:stop:self.stride] += contrib
        return grad_x


class BatchNorm1D(Layer):
    """Per-channel batch normalization over (batch, time) for 3-D input.

    Training mode standardizes with batch statistics and updates running
    statistics by exponential moving average; inference mode uses the stored
    running statistics, so outputs do not depend on batch composition.
    """

    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._alloc_grads()

    def hyper(self):
        return {"channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def astype(self, dtype):
        other = super().astype(dtype)
        other.running_mean = self.running_mean.astype(dtype)
        other.running_var = self.running_var.astype(dtype)
        return other

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise DimensionError(
                f"batchnorm expected input (batch, {self.channels}, time), got {x.shape}")
        if training:
            if x.shape[0] < 2:
                raise DegenerateBatchError(
                    "batchnorm needs a batch of at least 2 in training mode, "
                    f"got {x.shape[0]}")
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv[None, :, None]
        y = self.params["gamma"][None, :, None] * xhat + self.params["beta"][None, :, None]
        return y, (xhat, inv, training)

    def backward(self, grad_out, ctx):
        xhat, inv, training = ctx
        if grad_out.shape != xhat.shape:
            raise DimensionError(
                f"batchnorm upstream gradient {grad_out.shape} does not match "
                f"output {xhat.shape}")
        self.grads["beta"] += grad_out.sum(axis=(0, 2))
        self.grads["gamma"] += (grad_out * xhat).sum(axis=(0, 2))
        dxhat = grad_out * self.params["gamma"][None, :, None]
        if not training:
            return dxhat * inv[None, :, None]
        # batch statistics depend on every element, hence the mean corrections
        return inv[None, :, None] * (
            dxhat
            - dxhat.mean(axis=(0, 2), keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=(0, 2), keepdims=True))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        return x * mask, mask

    def backward(self, grad_out, ctx):
        return grad_out * ctx


class MaxPool1D(Layer):
    """Max pooling along time; remembers argmax positions for the backward
    scatter. Ties take the earliest position."""

    kind = "pool"

    def __init__(self, width: int = 2, stride: int = 2):
        super().__init__()
        self.width = width
        self.stride = stride

    def hyper(self):
        return {"width": self.width, "stride": self.stride}

    def forward(self, x, training=False):
        if x.ndim != 3:
            raise DimensionError(f"pool expected (batch, channels, time), got {x.shape}")
        if self.width > x.shape[2]:
            raise DimensionError(
                f"pool width {self.width} exceeds time length {x.shape[2]}")
        windows = sliding_window_view(x, self.width, axis=2)[:, :, ::self.stride, :]
        y = windows.max(axis=-1)
        t_out = windows.shape[2]
        abs_idx = np.arange(t_out)[None, None, :] * self.stride + windows.argmax(axis=-1)
        return y, (x.shape, abs_idx)

    def backward(self, grad_out, ctx):
        in_shape, abs_idx = ctx
        if grad_out.shape != abs_idx.shape:
            raise DimensionError(
                f"pool upstream gradient {grad_out.shape} does not match output "
                f"{abs_idx.shape}")
        b, c, t = in_shape
        grad_x = np.zeros((b * c, t), dtype=grad_out.dtype)
        t_out = abs_idx.shape[2]
        rows = np.repeat(np.arange(b * c), t_out)
        np.add.at(grad_x, (rows, abs_idx.reshape(-1)), grad_out.reshape(-1))
        return grad_x.reshape(in_shape)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, ctx):
        return grad_out.reshape(ctx)


class Dense(Layer):
    """Affine map y = x W + b over (batch, features) input."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        self.params["w"] = fan_in_uniform(rng, (in_features, out_features), in_features, dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)
        self._alloc_grads()

    def hyper(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"dense expected input (batch, {self.in_features}), got {x.shape} "
                f"for weights {self.params['w'].shape}")
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, grad_out, ctx):
        x = ctx
        if grad_out.ndim != 2 or grad_out.shape != (x.shape[0], self.out_features):
            raise DimensionError(
                f"dense upstream gradient {grad_out.shape} does not match output "
                f"({x.shape[0]}, {self.out_features})")
        self.grads["w"] += x.T @ grad_out
        self.grads["b"] += grad_out.sum(axis=0)
        return grad_out @ self.params["w"].T


class Softmax(Layer):
    """Row-wise softmax with max subtraction; stable for logits up to 1e4."""

    kind = "softmax"

    def forward(self, x, training=False):
        if not np.isfinite(x).all():
            raise InvalidValueError("softmax input contains NaN or Inf")
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p, p

    def backward(self, grad_out, ctx):
        p = ctx
        if grad_out.shape != p.shape:
            raise DimensionError(
                f"softmax upstream gradient {grad_out.shape} does not match "
                f"output {p.shape}")
        return p * (grad_out - (grad_out * p).sum(axis=1, keepdims=True))
