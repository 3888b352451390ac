"""Fixed-sequence network container.

The last layer must be a softmax, so ``forward`` always yields row-stochastic
probabilities. A network is safe for concurrent read-only prediction; training
mutates parameters and requires exclusive access.
"""

from __future__ import annotations

import copy

import numpy as np

from crupl.errors import DimensionError
from crupl.nn.layers import Layer, Softmax


class Network:
    def __init__(self, layers: list[Layer], class_count: int):
        if not layers or not isinstance(layers[-1], Softmax):
            raise DimensionError("network must end in a softmax layer")
        if class_count < 2:
            raise DimensionError(f"class count must be >= 2, got {class_count}")
        self.layers = layers
        self.class_count = class_count

    def forward(self, x: np.ndarray, training: bool = False):
        """Run all layers; returns (probabilities, per-layer caches)."""
        caches = []
        out = x
        for layer in self.layers:
            out, ctx = layer.forward(out, training=training)
            caches.append(ctx)
        return out, caches

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode probabilities, caches discarded."""
        probs, _ = self.forward(x, training=False)
        return probs

    def backward(self, grad_probs: np.ndarray, caches: list) -> np.ndarray:
        """Propagate a loss gradient through the cached pass, accumulating
        parameter gradients; returns the input gradient."""
        grad = grad_probs
        for layer, ctx in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(grad, ctx)
        return grad

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def param_arrays(self) -> list[np.ndarray]:
        return [v for layer in self.layers for v in layer.params.values()]

    def grad_arrays(self) -> list[np.ndarray]:
        return [v for layer in self.layers for v in layer.grads.values()]

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield i, name, value

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def get_state(self) -> list[np.ndarray]:
        """Snapshot of parameters and buffers, for checkpoint-in-memory use."""
        state = []
        for layer in self.layers:
            state.extend(v.copy() for v in layer.params.values())
            state.extend(v.copy() for v in layer.buffers().values())
        return state

    def set_state(self, state: list[np.ndarray]) -> None:
        it = iter(state)
        for layer in self.layers:
            for v in layer.params.values():
                v[...] = next(it)
            for v in layer.buffers().values():
                v[...] = next(it)

    def astype(self, dtype) -> "Network":
        return Network([layer.astype(dtype) for layer in self.layers], self.class_count)
