"""Central finite-difference verification of analytic gradients.

The check runs on a float64 copy of the network (float32 rounding would
swamp a 1e-4 relative tolerance at step 1e-5) and compares the analytic
gradient of the soft cross-entropy loss against a central difference at a
random sample of parameter coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from crupl.nn.losses import cross_entropy_soft, cross_entropy_soft_grad
from crupl.nn.network import Network


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    passed: bool
    worst: tuple[int, str, int] | None = None  # (layer index, param name, flat index)
    per_param: list[tuple[int, str, float]] = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"gradcheck {status}: max relative error {self.max_rel_error:.3e} "
                f"over {self.n_checked} coordinates (tolerance {self.tolerance:.1e})")


def gradcheck(network: Network, x: np.ndarray, y: np.ndarray,
              tolerance: float = 1e-4, step: float = 1e-5,
              max_coords_per_array: int = 6,
              rng: np.random.Generator | None = None) -> GradcheckReport:
    """Compare analytic and central-difference gradients on one batch.

    Relative error uses |a - n| / max(|a| + |n|, 1e-8); coordinates whose
    absolute discrepancy is below 1e-7 count as agreeing, which keeps
    dead-unit coordinates from dominating the ratio. Report-only: never
    raises on failure.
    """
    rng = rng or np.random.default_rng(0)
    net = network.astype(np.float64)
    x = x.astype(np.float64)
    y = y.astype(np.float64)

    def loss() -> float:
        probs, _ = net.forward(x, training=True)
        return cross_entropy_soft(probs, y)

    net.zero_grads()
    probs, caches = net.forward(x, training=True)
    net.backward(cross_entropy_soft_grad(probs, y), caches)

    max_rel = 0.0
    worst = None
    n_checked = 0
    per_param = []
    for li, layer in enumerate(net.layers):
        for name, param in layer.params.items():
            analytic = layer.grads[name]
            n_coords = min(max_coords_per_array, param.size)
            coords = rng.choice(param.size, size=n_coords, replace=False)
            layer_worst = 0.0
            for flat in coords:
                idx = np.unravel_index(flat, param.shape)
                orig = param[idx]
                param[idx] = orig + step
                up = loss()
                param[idx] = orig - step
                down = loss()
                param[idx] = orig
                numeric = (up - down) / (2 * step)
                a = analytic[idx]
                diff = abs(a - numeric)
                rel = 0.0 if diff < 1e-7 else diff / max(abs(a) + abs(numeric), 1e-8)
                n_checked += 1
                layer_worst = max(layer_worst, rel)
                if rel > max_rel:
                    max_rel = rel
                    worst = (li, name, int(flat))
            per_param.append((li, name, layer_worst))
    return GradcheckReport(max_rel_error=max_rel, tolerance=tolerance,
                           n_checked=n_checked, passed=max_rel <= tolerance,
                           worst=worst, per_param=per_param)
