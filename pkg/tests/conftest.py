import numpy as np
import pytest


def rel_grad_error(analytic: float, numeric: float) -> float:
    """Relative error with an absolute escape for dead coordinates, matching
    the gradcheck convention."""
    diff = abs(analytic - numeric)
    if diff < 1e-7:
        return 0.0
    return diff / max(abs(analytic) + abs(numeric), 1e-8)


def fd_layer_check(layer, x, training=True, step=1e-5, rng=None):
    """Central-difference check of one layer's backward pass in float64.

    Uses the scalar probe loss L = sum(forward(x) * R) for a fixed random R,
    whose gradient wrt the output is exactly R. Returns the worst relative
    error over all parameter coordinates and a sample of input coordinates.
    """
    rng = rng or np.random.default_rng(0)
    layer = layer.astype(np.float64)
    x = x.astype(np.float64)
    y, ctx = layer.forward(x, training=training)
    probe = rng.normal(size=y.shape)

    def loss():
        out, _ = layer.forward(x, training=training)
        return float((out * probe).sum())

    layer.zero_grads()
    grad_x = layer.backward(probe, ctx)

    worst = 0.0
    for name, param in layer.params.items():
        analytic = layer.grads[name]
        for flat in range(param.size):
            idx = np.unravel_index(flat, param.shape)
            orig = param[idx]
            param[idx] = orig + step
            up = loss()
            param[idx] = orig - step
            down = loss()
            param[idx] = orig
            worst = max(worst, rel_grad_error(analytic[idx], (up - down) / (2 * step)))
    n_input = min(x.size, 40)
    for flat in rng.choice(x.size, size=n_input, replace=False):
        idx = np.unravel_index(flat, x.shape)
        orig = x[idx]
        x[idx] = orig + step
        up = loss()
        x[idx] = orig - step
        down = loss()
        x[idx] = orig
        worst = max(worst, rel_grad_error(grad_x[idx], (up - down) / (2 * step)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
