"""Weak augmentation: additive zero-mean Gaussian noise.

The per-channel noise scale is a fraction of the channel's standard
deviation on labeled data, so the perturbation is small relative to signal
spread and label-preserving by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from crupl.data import FeatureStats
from crupl.errors import ConfigError, PreconditionError


@dataclass
class AugmentConfig:
    noise_scale: float = 0.05
    seed: int = 0

    def validate(self):
        if not 0 < self.noise_scale <= 1:
            raise ConfigError(f"noise_scale must lie in (0, 1], got {self.noise_scale}")

    def to_jsonable(self) -> dict:
        return dict(self.__dict__)


def weak_augment(x: np.ndarray, cfg: AugmentConfig,
                 feature_stats: FeatureStats) -> np.ndarray:
    """x plus per-channel Gaussian noise with sigma = noise_scale * std.

    Deterministic for a fixed cfg.seed; shape and dtype are preserved.
    """
    cfg.validate()
    if feature_stats is None:
        raise PreconditionError(
            "weak_augment needs per-channel feature statistics from labeled data")
    if x.ndim != 3 or x.shape[1] != len(feature_stats.std):
        raise PreconditionError(
            f"input {x.shape} does not match {len(feature_stats.std)}-channel stats")
    rng = np.random.default_rng(cfg.seed)
    sigma = cfg.noise_scale * np.asarray(feature_stats.std, dtype=np.float64)
    noise = rng.normal(0.0, 1.0, size=x.shape) * sigma[None, :, None]
    return (x + noise).astype(x.dtype)
