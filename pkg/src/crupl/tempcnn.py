"""Three-block temporal CNN classifier: assembly, training, prediction.

The architecture is fixed at three blocks of conv1d -> batchnorm -> relu ->
maxpool, then flatten -> dense -> relu -> dense -> softmax. Filter counts,
kernel sizes, and the hidden dense width come from :class:`TempCnnConfig`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from crupl.errors import ConfigError, DimensionError, DivergenceError
from crupl.nn.layers import (BatchNorm1D, Conv1D, Dense, Flatten, MaxPool1D,
                             ReLU, Softmax)
from crupl.nn.losses import (consistency_loss, consistency_loss_grads,
                             cross_entropy_soft, cross_entropy_soft_grad)
from crupl.nn.network import Network
from crupl.nn.optim import make_optimizer


@dataclass
class TempCnnConfig:
    input_channels: int
    input_length: int
    class_count: int
    filters: tuple[int, int, int] = (32, 32, 32)
    kernel_sizes: tuple[int, int, int] = (5, 5, 5)
    pool_width: int = 2
    pool_stride: int = 2
    dense_width: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    patience: int = 10
    optimizer: str = "adam"
    seed: int = 0

    def validate(self):
        if len(self.filters) != 3 or len(self.kernel_sizes) != 3:
            raise ConfigError("the architecture has exactly 3 blocks; give 3 "
                              "filter counts and 3 kernel sizes")
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch statistics)")
        if self.input_channels < 1:
            raise ConfigError(f"input_channels must be >= 1, got {self.input_channels}")
        need = min_input_length(self.kernel_sizes, self.pool_width, self.pool_stride)
        if self.input_length < need:
            raise ConfigError(
                f"input_length {self.input_length} is too short for kernels "
                f"{tuple(self.kernel_sizes)} with pooling "
                f"{self.pool_width}/{self.pool_stride}; minimum is {need}")

    def to_jsonable(self) -> dict:
        d = dict(self.__dict__)
        d["filters"] = list(self.filters)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d


def min_input_length(kernel_sizes, pool_width: int = 2, pool_stride: int = 2) -> int:
    """Smallest time length that leaves at least one step after all blocks."""
    need = 1
    for k in reversed(list(kernel_sizes)):
        need = pool_stride * (need - 1) + pool_width  # invert pooling
        need = need + k - 1                           # invert valid convolution
    return need


def block_output_length(length: int, kernel: int, pool_width: int, pool_stride: int) -> int:
    after_conv = length - kernel + 1
    return (after_conv - pool_width) // pool_stride + 1


def build_tempcnn(cfg: TempCnnConfig) -> Network:
    """Assemble the network; seeded fan-in-uniform initialization."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    layers = []
    channels = cfg.input_channels
    length = cfg.input_length
    for n_filters, kernel in zip(cfg.filters, cfg.kernel_sizes):
        layers.append(Conv1D(channels, n_filters, kernel, rng=rng))
        layers.append(BatchNorm1D(n_filters))
        layers.append(ReLU())
        layers.append(MaxPool1D(cfg.pool_width, cfg.pool_stride))
        channels = n_filters
        length = block_output_length(length, kernel, cfg.pool_width, cfg.pool_stride)
    layers.append(Flatten())
    layers.append(Dense(channels * length, cfg.dense_width, rng=rng))
    layers.append(ReLU())
    layers.append(Dense(cfg.dense_width, cfg.class_count, rng=rng))
    layers.append(Softmax())
    return Network(layers, cfg.class_count)


@dataclass
class TrainReport:
    """Per-epoch training trace. validation_accuracy entries are None when no
    validation set was supplied."""

    supervised_loss: list[float] = field(default_factory=list)
    consistency_loss: list[float] = field(default_factory=list)
    validation_accuracy: list[float | None] = field(default_factory=list)
    epochs_run: int = 0
    wall_time_s: float = 0.0

    def to_jsonable(self) -> dict:
        return {
            "supervised_loss": self.supervised_loss,
            "consistency_loss": self.consistency_loss,
            "validation_accuracy": self.validation_accuracy,
            "epochs_run": self.epochs_run,
        }


def _check_targets(y: np.ndarray, class_count: int) -> None:
    if y.ndim != 2 or y.shape[1] != class_count:
        raise DimensionError(f"targets must be (batch, {class_count}), got {y.shape}")
    sums = y.sum(axis=1)
    if ((y < -1e-6).any() or np.abs(sums - 1.0).max() > 1e-3):
        raise DimensionError("target rows must be probability distributions")


def _batches(order: np.ndarray, batch_size: int):
    """Contiguous slices of a shuffled index vector; a trailing singleton is
    merged into the previous batch so batch statistics stay defined."""
    n = len(order)
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        yield order[lo:hi]


def fit(network: Network, x: np.ndarray, y: np.ndarray, cfg: TempCnnConfig,
        validation: tuple[np.ndarray, np.ndarray] | None = None,
        pair_x: np.ndarray | None = None,
        consistency_weight: float = 0.0) -> TrainReport:
    """Minibatch training on the soft cross-entropy loss.

    ``pair_x`` supplies an alternate view of each sample (the clean signal
    when x holds perturbed copies); when given with a positive weight, the
    squared distance between the two predicted distributions is added to the
    loss and both branches are backpropagated through the shared parameters.

    Shuffle order is fixed by cfg.seed, so identical calls produce identical
    parameter trajectories. Raises DivergenceError (with the epoch index) on
    a non-finite loss. With a validation set, training stops once the
    validation loss has not improved for ``patience`` epochs (loss, not
    accuracy: accuracy on a small calibration slice is too coarse to see
    progress) and the best parameters are restored.
    """
    if len(x) != len(y):
        raise DimensionError(f"{len(x)} inputs vs {len(y)} target rows")
    if pair_x is not None and pair_x.shape != x.shape:
        raise DimensionError(
            f"pair inputs {pair_x.shape} do not match inputs {x.shape}")
    _check_targets(y, network.class_count)
    use_pair = pair_x is not None and consistency_weight > 0

    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate)
    params = network.param_arrays()
    grads = network.grad_arrays()
    report = TrainReport()
    if validation is not None:
        val_x, val_labels = validation
        val_onehot = np.eye(network.class_count, dtype=np.float32)[val_labels]
    best_val_loss = math.inf
    best_state = None
    stale = 0
    started = time.perf_counter()

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        sup_sum = 0.0
        cons_sum = 0.0
        for batch in _batches(order, cfg.batch_size):
            xb, yb = x[batch], y[batch]
            network.zero_grads()
            try:
                probs, caches = network.forward(xb, training=True)
                loss = cross_entropy_soft(probs, yb)
                grad_probs = cross_entropy_soft_grad(probs, yb)
                cons = 0.0
                if use_pair:
                    probs_clean, caches_clean = network.forward(pair_x[batch],
                                                                training=True)
                    cons = consistency_loss(probs_clean, probs)
                    g_clean, g_aug = consistency_loss_grads(probs_clean, probs)
                    grad_probs += consistency_weight * g_aug
                    network.backward(consistency_weight * g_clean, caches_clean)
                if not math.isfinite(loss) or not math.isfinite(cons):
                    raise DivergenceError("non-finite loss")
                network.backward(grad_probs, caches)
                optimizer.step(params, grads)
            except (InvalidValueError, DivergenceError) as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}: {exc}",
                    epoch=epoch) from exc
            sup_sum += loss * len(batch)
            cons_sum += cons * len(batch)
        report.supervised_loss.append(sup_sum / len(x))
        report.consistency_loss.append(cons_sum / len(x))

        if validation is not None:
            val_probs = predict_proba(network, val_x)
            report.validation_accuracy.append(
                float((val_probs.argmax(axis=1) == val_labels).mean()))
            val_loss = cross_entropy_soft(val_probs, val_onehot)
            if val_loss < best_val_loss - 1e-12:
                best_val_loss = val_loss
                best_state = network.get_state()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        else:
            report.validation_accuracy.append(None)

    if best_state is not None:
        network.set_state(best_state)
    report.epochs_run = len(report.supervised_loss)
    report.wall_time_s = time.perf_counter() - started
    return report


def predict_proba(network: Network, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode class probabilities, one row per sample.

    Runs in fixed-size chunks, so per-sample cost does not depend on how many
    samples are being labeled.
    """
    if len(x) == 0:
        return np.zeros((0, network.class_count), dtype=np.float32)
    chunks = [network.predict(x[lo:lo + batch_size])
              for lo in range(0, len(x), batch_size)]
    return np.concatenate(chunks, axis=0)
