import numpy as np
import pytest

from crupl.data import normalize, synth_generate
from crupl.errors import ConfigError, DivergenceError
from crupl.nn.layers import BatchNorm1D, Conv1D, Dense
from crupl.tempcnn import (TempCnnConfig, build_tempcnn, fit, min_input_length,
                           predict_proba)


def small_cfg(**overrides):
    base = dict(input_channels=1, input_length=32, class_count=2,
                filters=(8, 8, 8), kernel_sizes=(3, 3, 3), dense_width=16,
                epochs=10, seed=0)
    base.update(overrides)
    return TempCnnConfig(**base)


def separable_data(seed=0, n=40):
    ds = synth_generate(n_per_class=n, channels=1, length=32, class_margin=4.0,
                        seed=seed, class_names=["normal", "dos"])
    ds, _ = normalize(ds)
    return ds.x, ds.one_hot(), ds.labels


class TestBuild:
    def test_shape_contract(self, rng):
        net = build_tempcnn(small_cfg())
        x = rng.normal(size=(4, 1, 32)).astype(np.float32)
        probs = predict_proba(net, x)
        assert probs.shape == (4, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert (probs >= 0).all()

    def test_too_short_input_reports_minimum(self):
        with pytest.raises(ConfigError) as err:
            build_tempcnn(small_cfg(input_length=4))
        assert str(min_input_length((3, 3, 3))) in str(err.value)

    def test_min_input_length_is_tight(self):
        need = min_input_length((3, 3, 3))
        assert need == 22
        build_tempcnn(small_cfg(input_length=need))  # exactly feasible
        with pytest.raises(ConfigError):
            build_tempcnn(small_cfg(input_length=need - 1))

    def test_default_kernels_minimum(self):
        assert min_input_length((5, 5, 5)) == 36

    def test_parameter_count_closed_form(self):
        cfg = TempCnnConfig(input_channels=3, input_length=64, class_count=7,
                            filters=(32, 32, 32), kernel_sizes=(5, 5, 5),
                            dense_width=64, seed=0)
        net = build_tempcnn(cfg)
        lengths = []
        t = 64
        for k in (5, 5, 5):
            t = ((t - k + 1) - 2) // 2 + 1
            lengths.append(t)
        expected = (
            (32 * 3 * 5 + 32) + (32 * 32 * 5 + 32) + (32 * 32 * 5 + 32)  # conv
            + 3 * (2 * 32)                                               # batchnorm
            + (32 * lengths[-1]) * 64 + 64                               # hidden dense
            + 64 * 7 + 7)                                                # output dense
        assert net.param_count == expected

    def test_exactly_three_blocks_enforced(self):
        with pytest.raises(ConfigError):
            TempCnnConfig(input_channels=1, input_length=64, class_count=2,
                          filters=(8, 8), kernel_sizes=(3, 3)).validate()

    def test_layer_sequence(self):
        net = build_tempcnn(small_cfg())
        kinds = [layer.kind for layer in net.layers]
        assert kinds == ["conv1d", "batchnorm", "relu", "pool"] * 3 + [
            "flatten", "dense", "relu", "dense", "softmax"]


class TestFit:
    def test_zero_epochs_leaves_parameters(self, rng):
        cfg = small_cfg(epochs=0)
        net = build_tempcnn(cfg)
        before = [p.copy() for p in net.param_arrays()]
        x, y, _ = separable_data()
        report = fit(net, x, y, cfg)
        assert report.epochs_run == 0
        for a, b in zip(before, net.param_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_same_losses(self):
        x, y, _ = separable_data()
        cfg = small_cfg(epochs=5)
        r1 = fit(build_tempcnn(cfg), x, y, cfg)
        r2 = fit(build_tempcnn(cfg), x, y, cfg)
        assert r1.supervised_loss == r2.supervised_loss

    def test_training_is_bit_reproducible(self):
        x, y, _ = separable_data()
        cfg = small_cfg(epochs=5)

        def run():
            net = build_tempcnn(cfg)
            fit(net, x, y, cfg)
            return net.get_state()

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)

    def test_learns_separable_classes(self):
        x, y, labels = separable_data()
        cfg = small_cfg(epochs=50)
        net = build_tempcnn(cfg)
        fit(net, x, y, cfg)
        acc = (predict_proba(net, x).argmax(axis=1) == labels).mean()
        assert acc >= 0.95

    def test_loss_decreases_over_first_epochs(self):
        x, y, _ = separable_data()
        cfg = small_cfg(epochs=5)
        net = build_tempcnn(cfg)
        losses = fit(net, x, y, cfg).supervised_loss
        violations = sum(b >= a for a, b in zip(losses, losses[1:]))
        assert violations <= 1

    def test_divergent_learning_rate_raises_with_epoch(self):
        x, y, _ = separable_data()
        cfg = small_cfg(epochs=30, learning_rate=1e12, optimizer="sgd")
        net = build_tempcnn(cfg)
        with pytest.raises(DivergenceError) as err:
            fit(net, x, y, cfg)
        assert err.value.epoch is not None

    def test_early_stopping_restores_best(self):
        x, y, labels = separable_data()
        cfg = small_cfg(epochs=60, patience=3)
        net = build_tempcnn(cfg)
        report = fit(net, x, y, cfg, validation=(x[:10], labels[:10]))
        assert report.epochs_run <= 60
        assert len(report.validation_accuracy) == report.epochs_run

    def test_bad_targets_rejected(self, rng):
        cfg = small_cfg()
        net = build_tempcnn(cfg)
        x = rng.normal(size=(8, 1, 32)).astype(np.float32)
        from crupl.errors import DimensionError
        with pytest.raises(DimensionError):
            fit(net, x, np.full((8, 2), 0.9, dtype=np.float32), cfg)


class TestPredict:
    def test_untrained_predictions_near_uniform(self, rng):
        for c in (2, 5):
            cfg = small_cfg(class_count=c, seed=3)
            net = build_tempcnn(cfg)
            x = rng.normal(size=(16, 1, 32)).astype(np.float32)
            probs = predict_proba(net, x)
            assert np.abs(probs - 1.0 / c).max() < 0.15

    def test_batch_independence_in_inference(self, rng):
        x, y, labels = separable_data()
        cfg = small_cfg(epochs=5)
        net = build_tempcnn(cfg)
        fit(net, x, y, cfg)
        batch = rng.normal(size=(32, 1, 32)).astype(np.float32)
        full = predict_proba(net, batch)
        single = predict_proba(net, batch[:1])
        np.testing.assert_allclose(single[0], full[0], atol=1e-6)

    def test_row_stochastic_over_random_batches(self, rng):
        net = build_tempcnn(small_cfg(seed=9))
        for _ in range(10):
            x = rng.normal(scale=3.0, size=(7, 1, 32)).astype(np.float32)
            probs = predict_proba(net, x)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
            assert ((probs >= 0) & (probs <= 1)).all()

    def test_chunking_matches_single_batch(self, rng):
        net = build_tempcnn(small_cfg(seed=2))
        x = rng.normal(size=(300, 1, 32)).astype(np.float32)
        np.testing.assert_array_equal(predict_proba(net, x, batch_size=64),
                                      predict_proba(net, x, batch_size=300))
