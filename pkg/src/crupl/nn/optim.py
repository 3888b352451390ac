"""Parameter update rules.

Adaptive moment estimation is the default; plain gradient descent is kept for
determinism studies. Both update parameters in place and are deterministic
given identical state and gradients.
"""

from __future__ import annotations

import numpy as np

from crupl.errors import DimensionError, DivergenceError


class Sgd:
    """params <- params - lr * grads."""

    def __init__(self, learning_rate: float = 1e-3):
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        _check(params, grads)
        self.step_count += 1
        for p, g in zip(params, grads):
            p -= (self.learning_rate * g).astype(p.dtype)


class Adam:
    """Adaptive moments with bias correction (lr 1e-3, betas 0.9/0.999, eps 1e-8).

    First and second moment accumulators are allocated lazily to match the
    parameter shapes; a step with all-zero gradients from a fresh state
    leaves the parameters unchanged.
    """

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        _check(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if any(m.shape != p.shape for m, p in zip(self.m, params)):
            raise DimensionError("optimizer state shapes do not match parameters")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1 - self.beta1) * g
            v[...] = self.beta2 * v + (1 - self.beta2) * g * g
            p -= (self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


def _check(params, grads) -> None:
    if len(params) != len(grads):
        raise DimensionError(
            f"got {len(params)} parameter arrays but {len(grads)} gradient arrays")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"parameter {p.shape} has gradient {g.shape}")
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient encountered")


def make_optimizer(kind: str, learning_rate: float):
    if kind == "adam":
        return Adam(learning_rate)
    if kind == "sgd":
        return Sgd(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}, expected 'adam' or 'sgd'")
