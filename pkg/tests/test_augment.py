import numpy as np
import pytest

from crupl.augment import AugmentConfig, weak_augment
from crupl.data import FeatureStats
from crupl.errors import ConfigError, PreconditionError


@pytest.fixture
def stats():
    return FeatureStats(mean=np.zeros(2), std=np.array([1.0, 3.0]))


def test_vanishing_scale_is_identity(rng, stats):
    x = rng.normal(size=(4, 2, 8)).astype(np.float32)
    out = weak_augment(x, AugmentConfig(noise_scale=1e-9, seed=0), stats)
    assert np.abs(out - x).max() < 1e-9


def test_deterministic_per_seed(rng, stats):
    x = rng.normal(size=(4, 2, 8)).astype(np.float32)
    cfg = AugmentConfig(noise_scale=0.1, seed=42)
    np.testing.assert_array_equal(weak_augment(x, cfg, stats),
                                  weak_augment(x, cfg, stats))
    other = weak_augment(x, AugmentConfig(noise_scale=0.1, seed=43), stats)
    assert (weak_augment(x, cfg, stats) != other).any()


def test_shape_and_dtype_preserved(rng, stats):
    x = rng.normal(size=(5, 2, 16)).astype(np.float32)
    out = weak_augment(x, AugmentConfig(), stats)
    assert out.shape == x.shape and out.dtype == x.dtype


def test_noise_statistics_match_config(stats):
    # 10k samples: empirical per-channel std of the added noise within 5%
    x = np.zeros((10000, 2, 4), dtype=np.float32)
    cfg = AugmentConfig(noise_scale=0.2, seed=7)
    noise = weak_augment(x, cfg, stats) - x
    empirical = noise.std(axis=(0, 2))
    expected = 0.2 * stats.std
    np.testing.assert_allclose(empirical, expected, rtol=0.05)
    assert abs(noise.mean()) < 0.01


def test_missing_stats_rejected(rng):
    x = rng.normal(size=(2, 2, 4)).astype(np.float32)
    with pytest.raises(PreconditionError):
        weak_augment(x, AugmentConfig(), None)


def test_channel_mismatch_rejected(rng, stats):
    x = rng.normal(size=(2, 3, 4)).astype(np.float32)
    with pytest.raises(PreconditionError):
        weak_augment(x, AugmentConfig(), stats)


@pytest.mark.parametrize("bad", [0.0, -0.5, 1.5])
def test_invalid_noise_scale(bad):
    with pytest.raises(ConfigError):
        AugmentConfig(noise_scale=bad).validate()
