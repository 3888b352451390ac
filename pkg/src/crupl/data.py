"""Dataset ingestion, splitting, normalization, and synthetic generation.

Samples are windows of shape (channels, time), stacked into one float32
array. Labels are class indices into ``class_names``. Ground truth for the
unlabeled pool is moved into a :class:`SealedLabels` container at split time
so no training or calibration path can touch it by accident.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from crupl.errors import (ConfigError, ParseError, SchemaError,
                          StratificationError)

DEFAULT_CLASS_NAMES = [
    "normal", "dos", "injection", "rogue-device",
    "scanning", "switching", "connection-loss",
]

VARIANCE_FLOOR = 1e-8


@dataclass
class Dataset:
    """Windows (n, channels, time) plus optional per-sample class indices."""

    x: np.ndarray
    labels: np.ndarray | None
    class_names: list[str]

    def __post_init__(self):
        if self.x.ndim != 3:
            raise SchemaError(f"dataset windows must be (n, channels, time), got {self.x.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.x):
                raise SchemaError(
                    f"{len(self.labels)} labels for {len(self.x)} samples")
            if len(self.labels) and (self.labels.min() < 0
                                     or self.labels.max() >= len(self.class_names)):
                raise SchemaError("label index outside the declared class list")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def channels(self) -> int:
        return self.x.shape[1]

    @property
    def length(self) -> int:
        return self.x.shape[2]

    def one_hot(self) -> np.ndarray:
        if self.labels is None:
            raise SchemaError("dataset has no labels")
        eye = np.eye(len(self.class_names), dtype=np.float32)
        return eye[self.labels]

    def take(self, idx: np.ndarray) -> "Dataset":
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.x[idx], labels, self.class_names)


class SealedLabels:
    """Ground truth for the unlabeled pool, quarantined from the pipeline.

    Only evaluation code calls :meth:`for_scoring`; nothing in training,
    calibration, or labeling takes this type.
    """

    def __init__(self, labels: np.ndarray):
        self._labels = np.asarray(labels, dtype=np.int64).copy()

    def __len__(self):
        return len(self._labels)

    def for_scoring(self) -> np.ndarray:
        return self._labels.copy()


@dataclass
class SplitSpec:
    labeled_fraction: float = 0.05
    validation_fraction: float = 0.2  # slice of the labeled side
    seed: int = 0
    stratified: bool = True

    def validate(self):
        for name in ("labeled_fraction", "validation_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")


@dataclass
class FeatureStats:
    """Per-channel mean and standard deviation, computed on labeled data."""

    mean: np.ndarray
    std: np.ndarray

    def to_jsonable(self) -> dict:
        return {"mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_jsonable(cls, d: dict) -> "FeatureStats":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64))


@dataclass
class CsvSchema:
    """Declares how a CSV maps onto windows.

    window_mode "per_row": each row is one pre-assembled window laid out
    channel-major (c0_t0 ... c0_t{N-1}, c1_t0, ...). window_mode "rolling":
    each row is a single timestep with one column per channel; windows are
    cut with the given length and stride, and a window takes the label of
    its last row.
    """

    channels: int
    window_length: int = 32
    window_mode: str = "per_row"
    window_stride: int = 16
    label_column: str | None = "label"
    class_names: list[str] = field(default_factory=lambda: list(DEFAULT_CLASS_NAMES))

    _KEYS = ("channels", "window_length", "window_mode", "window_stride",
             "label_column", "class_names")

    def validate(self):
        if self.window_mode not in ("per_row", "rolling"):
            raise SchemaError(f"unknown window_mode {self.window_mode!r}")
        if self.channels < 1 or self.window_length < 1 or self.window_stride < 1:
            raise SchemaError("channels, window_length, and window_stride must be >= 1")

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({k: getattr(self, k) for k in self._KEYS}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CsvSchema":
        with open(path) as fh:
            raw = json.load(fh)
        unknown = set(raw) - set(cls._KEYS)
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        schema = cls(**raw)
        schema.validate()
        return schema

    def feature_columns(self) -> list[str]:
        if self.window_mode == "per_row":
            return [f"c{c}_t{t}" for c in range(self.channels)
                    for t in range(self.window_length)]
        return [f"c{c}" for c in range(self.channels)]


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read windows from a CSV according to the schema.

    Lines starting with '#' are skipped (output files carry a config-hash
    comment). Rows with the wrong cell count or non-numeric features are
    rejected with the 1-based line number.
    """
    schema.validate()
    expected = schema.feature_columns()
    rows: list[list[float]] = []
    row_labels: list[int] = []
    name_to_idx = {name: i for i, name in enumerate(schema.class_names)}
    with open(path, newline="") as fh:
        header = None
        label_pos = None
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if record and record[0].startswith("#"):
                continue
            if header is None:
                header = record
                want = expected + ([schema.label_column] if schema.label_column else [])
                if header != want:
                    raise SchemaError(
                        f"{path}: header {header[:4]}... does not match schema "
                        f"columns {want[:4]}...")
                label_pos = len(expected) if schema.label_column else None
                continue
            if len(record) != len(header):
                raise ParseError(
                    f"{path}: line {lineno} has {len(record)} cells, expected "
                    f"{len(header)}", line=lineno)
            try:
                rows.append([float(v) for v in record[:len(expected)]])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}", line=lineno) from exc
            if label_pos is not None:
                name = record[label_pos]
                if name not in name_to_idx:
                    raise SchemaError(
                        f"{path}: line {lineno}: unknown class name {name!r}")
                row_labels.append(name_to_idx[name])
        if header is None:
            raise ParseError(f"{path}: empty file, expected a header row", line=0)

    values = (np.asarray(rows, dtype=np.float32) if rows
              else np.zeros((0, len(expected)), dtype=np.float32))
    if schema.window_mode == "per_row":
        x = values.reshape(len(rows), schema.channels, schema.window_length)
        labels = np.asarray(row_labels, dtype=np.int64) if schema.label_column else None
    else:
        n_windows = max(0, (len(rows) - schema.window_length) // schema.window_stride + 1)
        windows = []
        labels_list = []
        for w in range(n_windows):
            start = w * schema.window_stride
            stop = start + schema.window_length
            windows.append(values[start:stop].T)  # (channels, time)
            if schema.label_column:
                labels_list.append(row_labels[stop - 1])
        x = (np.stack(windows) if windows
             else np.zeros((0, schema.channels, schema.window_length), dtype=np.float32))
        labels = np.asarray(labels_list, dtype=np.int64) if schema.label_column else None
    return Dataset(x.astype(np.float32), labels, list(schema.class_names))


def write_csv(dataset: Dataset, path, comment: str | None = None) -> None:
    """Write a dataset in per_row layout, loadable bit-compatibly.

    Floats are written with shortest round-trip decimal form, so
    write_csv -> load_csv reproduces the float32 values exactly.
    """
    k, n_t = dataset.channels, dataset.length
    header = [f"c{c}_t{t}" for c in range(k) for t in range(n_t)]
    if dataset.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        flat = dataset.x.reshape(dataset.n, -1)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in flat[i]]
            if dataset.labels is not None:
                row.append(dataset.class_names[dataset.labels[i]])
            writer.writerow(row)


def schema_for(dataset: Dataset, label_column: str | None = "label") -> CsvSchema:
    return CsvSchema(channels=dataset.channels, window_length=dataset.length,
                     window_mode="per_row",
                     label_column=label_column if dataset.labels is not None else None,
                     class_names=list(dataset.class_names))


def split(dataset: Dataset, spec: SplitSpec):
    """Partition into (labeled, validation, unlabeled, hidden_truth).

    The labeled side is a stratified ``labeled_fraction`` of the dataset;
    ``validation_fraction`` of it is held out for calibration. The unlabeled
    side keeps its samples but its labels move into a SealedLabels container
    for scoring only. Partitions are disjoint and exhaustive, in stable
    original order.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if dataset.labels is None:
        # deployment mode: nothing to stratify, no truth to seal
        idx = rng.permutation(dataset.n)
        n_lab = int(round(spec.labeled_fraction * dataset.n))
        n_val = int(round(spec.validation_fraction * n_lab))
        lab = np.sort(idx[:n_lab - n_val])
        val = np.sort(idx[n_lab - n_val:n_lab])
        unl = np.sort(idx[n_lab:])
        return dataset.take(lab), dataset.take(val), dataset.take(unl), None

    train_idx, val_idx, unl_idx = [], [], []
    for c in range(len(dataset.class_names)):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) == 0:
            continue
        n_lab = max(1, int(round(spec.labeled_fraction * len(members))))
        if spec.stratified and n_lab >= len(members):
            raise StratificationError(
                f"class {dataset.class_names[c]!r} has {len(members)} samples, "
                f"too few to leave any unlabeled at fraction {spec.labeled_fraction}")
        n_val = max(1, int(round(spec.validation_fraction * n_lab)))
        if spec.stratified and n_lab - n_val < 2:
            raise StratificationError(
                f"class {dataset.class_names[c]!r} gets {n_lab} labeled samples, "
                f"too few for {n_val} validation and >= 2 training samples")
        perm = rng.permutation(members)
        train_idx.extend(perm[:n_lab - n_val])
        val_idx.extend(perm[n_lab - n_val:n_lab])
        unl_idx.extend(perm[n_lab:])
    train_idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    val_idx = np.sort(np.asarray(val_idx, dtype=np.int64))
    unl_idx = np.sort(np.asarray(unl_idx, dtype=np.int64))

    unlabeled = dataset.take(unl_idx)
    truth = SealedLabels(unlabeled.labels)
    unlabeled = Dataset(unlabeled.x, None, dataset.class_names)
    return dataset.take(train_idx), dataset.take(val_idx), unlabeled, truth


def normalize(dataset: Dataset, stats: FeatureStats | None = None):
    """Per-channel z-score. With stats=None they are computed from this
    dataset (call on the labeled training split only, then reuse the returned
    stats everywhere else to avoid leakage). Zero-variance channels are
    floored at 1e-8 with a warning."""
    if dataset.n == 0:
        raise SchemaError("cannot normalize an empty dataset")
    if stats is None:
        mean = dataset.x.astype(np.float64).mean(axis=(0, 2))
        std = dataset.x.astype(np.float64).std(axis=(0, 2))
        floored = std < VARIANCE_FLOOR
        if floored.any():
            warnings.warn(
                f"channels {np.flatnonzero(floored).tolist()} have near-zero "
                f"variance; flooring at {VARIANCE_FLOOR}")
            std = np.maximum(std, VARIANCE_FLOOR)
        stats = FeatureStats(mean, std)
    x = (dataset.x - stats.mean[None, :, None]) / stats.std[None, :, None]
    return Dataset(x.astype(np.float32), dataset.labels, dataset.class_names), stats


def denormalize(dataset: Dataset, stats: FeatureStats) -> Dataset:
    x = dataset.x * stats.std[None, :, None] + stats.mean[None, :, None]
    return Dataset(x.astype(np.float32), dataset.labels, dataset.class_names)


def class_motifs(class_names: list[str], channels: int, length: int) -> np.ndarray:
    """Deterministic per-class waveforms, shape (C, channels, time).

    Each class is a distinct temporal pattern with unit amplitude; channel j
    carries the same pattern scaled by 1 - 0.3*j/(k-1). The rogue-device
    pattern is the scanning probe train shifted in phase, which makes that
    pair genuinely confusable under noise.
    """
    t = np.arange(length)
    bases = {}
    bases["normal"] = np.zeros(length)
    spikes = np.zeros(length)
    mid = slice(length // 4, 3 * length // 4)
    spikes[mid] = (t[mid] % 3 == 0).astype(float)
    bases["dos"] = spikes
    bases["injection"] = t / max(1, length - 1)
    probe = (t % 8 == 0).astype(float)
    bases["scanning"] = probe
    bases["rogue-device"] = np.roll(probe, 3)
    bases["switching"] = (t >= length // 2).astype(float)
    bases["connection-loss"] = (t < int(0.4 * length)).astype(float)

    unknown = [n for n in class_names if n not in bases]
    if unknown:
        raise SchemaError(f"no motif defined for class names {unknown}")
    if channels > 1:
        scales = 1.0 - 0.3 * np.arange(channels) / (channels - 1)
    else:
        scales = np.ones(1)
    motifs = np.stack([bases[n] for n in class_names])  # (C, time)
    return motifs[:, None, :] * scales[None, :, None]


def synth_generate(n_per_class: int = 200, channels: int = 3, length: int = 64,
                   class_margin: float = 2.2, seed: int = 0,
                   class_names: list[str] | None = None) -> Dataset:
    """Draw labeled windows: class motif plus Gaussian noise with standard
    deviation 1/class_margin (motif amplitude is 1). Labels are exact by
    construction; identical seeds give identical datasets."""
    if class_margin <= 0:
        raise ConfigError(f"class_margin must be > 0, got {class_margin}")
    names = list(class_names) if class_names is not None else list(DEFAULT_CLASS_NAMES)
    motifs = class_motifs(names, channels, length)
    n_total = n_per_class * len(names)
    labels = np.repeat(np.arange(len(names)), n_per_class)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0 / class_margin, size=(n_total, channels, length))
    x = (motifs[labels] + noise).astype(np.float32)
    return Dataset(x, labels, names)
