import numpy as np
import pytest

from crupl.data import (CsvSchema, Dataset, SplitSpec, class_motifs,
                        denormalize, load_csv, normalize, schema_for, split,
                        synth_generate, write_csv)
from crupl.errors import (ConfigError, ParseError, SchemaError,
                          StratificationError)


class TestCsv:
    def test_two_row_file(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("c0_t0,c0_t1,c0_t2,c0_t3,label\n"
                        "1,2,3,4,normal\n"
                        "5,6,7,8,dos\n")
        schema = CsvSchema(channels=1, window_length=4,
                           class_names=["normal", "dos"])
        ds = load_csv(path, schema)
        assert ds.n == 2 and ds.channels == 1 and ds.length == 4
        np.testing.assert_array_equal(ds.labels, [0, 1])
        np.testing.assert_array_equal(ds.x[1].ravel(), [5, 6, 7, 8])

    def test_non_numeric_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("c0_t0,c0_t1,label\n1,2,normal\n3,oops,normal\n")
        schema = CsvSchema(channels=1, window_length=2, class_names=["normal"])
        with pytest.raises(ParseError) as err:
            load_csv(path, schema)
        assert err.value.line == 3 and "3" in str(err.value)

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("c0_t0,c0_t1,label\n1,2,normal\n1,normal\n")
        schema = CsvSchema(channels=1, window_length=2, class_names=["normal"])
        with pytest.raises(ParseError) as err:
            load_csv(path, schema)
        assert err.value.line == 3

    def test_unknown_class_name(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("c0_t0,label\n1,martian\n")
        schema = CsvSchema(channels=1, window_length=1, class_names=["normal"])
        with pytest.raises(SchemaError):
            load_csv(path, schema)

    def test_round_trip_is_value_identical(self, tmp_path, rng):
        ds = synth_generate(n_per_class=5, channels=2, length=6, seed=3)
        path = tmp_path / "round.csv"
        write_csv(ds, path, comment="config_hash=deadbeef")
        loaded = load_csv(path, schema_for(ds))
        np.testing.assert_array_equal(loaded.x, ds.x)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        assert loaded.class_names == ds.class_names

    def test_rolling_window_assembly(self, tmp_path):
        rows = ["c0,c1,label"]
        for i in range(10):
            rows.append(f"{i},{10 * i},{'normal' if i < 8 else 'dos'}")
        path = tmp_path / "roll.csv"
        path.write_text("\n".join(rows) + "\n")
        schema = CsvSchema(channels=2, window_length=4, window_mode="rolling",
                           window_stride=2, class_names=["normal", "dos"])
        ds = load_csv(path, schema)
        assert ds.n == (10 - 4) // 2 + 1
        np.testing.assert_array_equal(ds.x[0, 0], [0, 1, 2, 3])
        np.testing.assert_array_equal(ds.x[0, 1], [0, 10, 20, 30])
        np.testing.assert_array_equal(ds.x[1, 0], [2, 3, 4, 5])
        # window label comes from its last row
        np.testing.assert_array_equal(ds.labels, [0, 0, 0, 1])

    def test_schema_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "schema.json"
        path.write_text('{"channels": 1, "windw_length": 4}')
        with pytest.raises(SchemaError):
            CsvSchema.load(path)

    def test_schema_round_trip(self, tmp_path):
        schema = CsvSchema(channels=3, window_length=16, label_column=None,
                           class_names=["a", "b"])
        path = tmp_path / "schema.json"
        schema.save(path)
        assert CsvSchema.load(path) == schema

    def test_comment_lines_skipped(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("# config_hash=abc\nc0_t0,label\n1,normal\n")
        ds = load_csv(path, CsvSchema(channels=1, window_length=1,
                                      class_names=["normal"]))
        assert ds.n == 1


class TestSplit:
    def test_balanced_arithmetic(self):
        ds = synth_generate(n_per_class=200, channels=1, length=8, seed=0,
                            class_names=["normal", "dos", "injection",
                                         "scanning", "switching"])
        labeled, val, unlabeled, truth = split(ds, SplitSpec(seed=1))
        # 5% of 1000 = 50 on the labeled side, split 40 train / 10 validation
        assert labeled.n + val.n == 50
        assert unlabeled.n == 950
        assert len(truth) == 950
        for c in range(5):
            assert (labeled.labels == c).sum() == 8
            assert (val.labels == c).sum() == 2
        assert unlabeled.labels is None

    def test_same_seed_identical(self):
        ds = synth_generate(n_per_class=40, channels=1, length=8, seed=0)
        a = split(ds, SplitSpec(seed=5))
        b = split(ds, SplitSpec(seed=5))
        for da, db in zip(a[:3], b[:3]):
            np.testing.assert_array_equal(da.x, db.x)
        np.testing.assert_array_equal(a[3].for_scoring(), b[3].for_scoring())

    def test_partition_is_exhaustive_and_disjoint(self):
        ds = synth_generate(n_per_class=30, channels=2, length=8, seed=2)
        labeled, val, unlabeled, truth = split(ds, SplitSpec(seed=3))
        rebuilt = np.concatenate([labeled.x, val.x, unlabeled.x])
        assert rebuilt.shape == ds.x.shape
        original = np.sort(ds.x.reshape(ds.n, -1).sum(axis=1))
        recombined = np.sort(rebuilt.reshape(ds.n, -1).sum(axis=1))
        np.testing.assert_allclose(original, recombined, rtol=1e-6)
        labels = np.concatenate([labeled.labels, val.labels, truth.for_scoring()])
        np.testing.assert_array_equal(np.bincount(labels),
                                      np.bincount(ds.labels))

    def test_small_class_raises(self):
        ds = synth_generate(n_per_class=5, channels=1, length=8, seed=0,
                            class_names=["normal", "dos"])
        with pytest.raises(StratificationError):
            split(ds, SplitSpec(labeled_fraction=0.05, seed=0))

    def test_fraction_bounds(self):
        with pytest.raises(ConfigError):
            SplitSpec(labeled_fraction=1.5).validate()


class TestNormalize:
    def test_constant_channel_floored(self):
        x = np.ones((4, 1, 5), dtype=np.float32)
        ds = Dataset(x, None, ["normal"])
        with pytest.warns(UserWarning):
            out, stats = normalize(ds)
        np.testing.assert_array_equal(out.x, 0.0)

    def test_zscore_definition(self, rng):
        x = rng.normal(3.0, 2.5, size=(50, 3, 7)).astype(np.float32)
        ds = Dataset(x, None, ["normal"])
        out, stats = normalize(ds)
        np.testing.assert_allclose(out.x.mean(axis=(0, 2)), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.x.std(axis=(0, 2)), 1.0, atol=1e-6)

    def test_stored_stats_are_affine(self, rng):
        train = Dataset(rng.normal(1.0, 2.0, (20, 2, 4)).astype(np.float32),
                        None, ["normal"])
        _, stats = normalize(train)
        new = rng.normal(size=(5, 2, 4)).astype(np.float32)
        out, _ = normalize(Dataset(new, None, ["normal"]), stats)
        expected = (new - stats.mean[None, :, None]) / stats.std[None, :, None]
        np.testing.assert_allclose(out.x, expected.astype(np.float32), rtol=1e-6)

    def test_denormalize_round_trip(self, rng):
        ds = Dataset(rng.normal(5.0, 3.0, (30, 2, 6)).astype(np.float32),
                     None, ["normal"])
        out, stats = normalize(ds)
        back = denormalize(out, stats)
        np.testing.assert_allclose(back.x, ds.x, atol=1e-5)


class TestSynthGenerate:
    def test_deterministic(self):
        a = synth_generate(n_per_class=10, seed=9)
        b = synth_generate(n_per_class=10, seed=9)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_empty(self):
        ds = synth_generate(n_per_class=0)
        assert ds.n == 0

    def test_labels_exact_counts(self):
        ds = synth_generate(n_per_class=12, seed=1)
        np.testing.assert_array_equal(np.bincount(ds.labels), [12] * 7)

    def test_nearest_centroid_perfect_at_large_margin(self):
        # independent oracle: classify a fresh draw by nearest class motif
        motifs = class_motifs(synth_generate(n_per_class=1).class_names, 3, 64)
        fresh = synth_generate(n_per_class=30, class_margin=1000.0, seed=123)
        flat_motifs = motifs.reshape(len(motifs), -1)
        flat_x = fresh.x.reshape(fresh.n, -1)
        d = ((flat_x[:, None, :] - flat_motifs[None, :, :]) ** 2).sum(axis=2)
        assert (d.argmin(axis=1) == fresh.labels).all()

    def test_margin_scales_noise(self):
        tight = synth_generate(n_per_class=40, class_margin=10.0, seed=0)
        loose = synth_generate(n_per_class=40, class_margin=2.0, seed=0)
        motifs = class_motifs(tight.class_names, 3, 64)
        r_tight = (tight.x - motifs[tight.labels]).std()
        r_loose = (loose.x - motifs[loose.labels]).std()
        assert r_tight == pytest.approx(0.1, rel=0.05)
        assert r_loose == pytest.approx(0.5, rel=0.05)

    def test_invalid_margin(self):
        with pytest.raises(ConfigError):
            synth_generate(class_margin=0.0)

    def test_unknown_class_name(self):
        with pytest.raises(SchemaError):
            synth_generate(class_names=["normal", "quantum-flip"])
