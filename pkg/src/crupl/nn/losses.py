"""Training losses over predicted probability rows.

Sums accumulate in float64 regardless of the activation dtype. Gradients are
returned for the clamped losses actually computed, so finite differences of
the loss agree with them.
"""

from __future__ import annotations

import numpy as np

from crupl.errors import DimensionError

LOG_CLAMP = 1e-12


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} arguments differ in shape: {a.shape} vs {b.shape}")


def cross_entropy_soft(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over the batch of -sum_i target_i * log(pred_i).

    Targets may be one-hot or soft rows; log arguments are clamped at 1e-12.
    """
    _check_same_shape(pred, target, "cross_entropy_soft")
    p = np.maximum(pred.astype(np.float64), LOG_CLAMP)
    per_row = -(target.astype(np.float64) * np.log(p)).sum(axis=1)
    return float(per_row.mean())


def cross_entropy_soft_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d/d pred of cross_entropy_soft; zero where the clamp is active."""
    _check_same_shape(pred, target, "cross_entropy_soft")
    batch = pred.shape[0]
    grad = np.zeros_like(pred)
    live = pred > LOG_CLAMP
    grad[live] = -(target[live] / pred[live]) / batch
    return grad


def consistency_loss(pred_clean: np.ndarray, pred_augmented: np.ndarray) -> float:
    """Mean over the batch of the squared L2 distance between the two
    probability rows. Zero iff the predictions are identical; symmetric."""
    _check_same_shape(pred_clean, pred_augmented, "consistency_loss")
    diff = pred_clean.astype(np.float64) - pred_augmented.astype(np.float64)
    return float((diff ** 2).sum(axis=1).mean())


def consistency_loss_grads(pred_clean: np.ndarray, pred_augmented: np.ndarray):
    """Gradients of consistency_loss wrt both arguments."""
    _check_same_shape(pred_clean, pred_augmented, "consistency_loss")
    batch = pred_clean.shape[0]
    g = (2.0 / batch) * (pred_clean - pred_augmented)
    return g, -g
