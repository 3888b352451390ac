"""Batch command-line front end.

Commands: synth | run | label | eval. A run is configured by a JSON file
(see README for the key schema); flags override file values. Exit codes:
0 ok, 2 configuration error, 3 data error, 4 training divergence.

Outputs are deterministic: identical configs and seeds give byte-identical
manifests and decision files, and every output file carries the hash of the
effective configuration that produced it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from crupl import data as data_mod
from crupl import metrics as metrics_mod
from crupl.augment import AugmentConfig
from crupl.data import CsvSchema, Dataset, FeatureStats, SplitSpec
from crupl.errors import (ConfigError, CruplError, DataError, DivergenceError,
                          JoinError)
from crupl.nn.checkpoint import load_network, save_network
from crupl.pipeline import (CurriculumConfig, PseudoLabelResult, ThresholdVector,
                            assign_pseudo_labels, evaluate_decisions, run_crupl)
from crupl.tempcnn import TempCnnConfig, predict_proba

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Effective configuration of one `run` invocation."""

    csv: str
    schema: str
    seed: int = 0
    labeled_fraction: float = 0.05
    validation_fraction: float = 0.2
    model: dict = field(default_factory=dict)
    augment: dict = field(default_factory=dict)
    curriculum: dict = field(default_factory=dict)
    consistency_weight: float = 0.5

    _MODEL_KEYS = {"filters", "kernel_sizes", "dense_width", "learning_rate",
                   "batch_size", "epochs", "patience", "optimizer",
                   "pool_width", "pool_stride"}
    _AUG_KEYS = {"noise_scale"}
    _CUR_KEYS = {"t_start", "t_end", "t_step", "max_iterations"}

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        return cls.from_dict(raw, origin=path)

    @classmethod
    def from_dict(cls, raw: dict, origin: str = "<config>") -> "RunConfig":
        known_top = {"data", "model", "augment", "curriculum", "seed",
                     "consistency_weight"}
        unknown = set(raw) - known_top
        if unknown:
            raise ConfigError(f"{origin}: unknown config keys {sorted(unknown)}")
        data_sec = raw.get("data")
        if data_sec is None:
            raise ConfigError(f"{origin}: missing required config key 'data'")
        known_data = {"csv", "schema", "labeled_fraction", "validation_fraction"}
        unknown = set(data_sec) - known_data
        if unknown:
            raise ConfigError(f"{origin}: unknown data keys {sorted(unknown)}")
        for key in ("csv", "schema"):
            if key not in data_sec:
                raise ConfigError(f"{origin}: missing required config key 'data.{key}'")
        for section, keys in (("model", cls._MODEL_KEYS), ("augment", cls._AUG_KEYS),
                              ("curriculum", cls._CUR_KEYS)):
            unknown = set(raw.get(section, {})) - keys
            if unknown:
                raise ConfigError(f"{origin}: unknown {section} keys {sorted(unknown)}")
        return cls(csv=data_sec["csv"], schema=data_sec["schema"],
                   seed=int(raw.get("seed", 0)),
                   labeled_fraction=float(data_sec.get("labeled_fraction", 0.05)),
                   validation_fraction=float(data_sec.get("validation_fraction", 0.2)),
                   model=dict(raw.get("model", {})),
                   augment=dict(raw.get("augment", {})),
                   curriculum=dict(raw.get("curriculum", {})),
                   consistency_weight=float(raw.get("consistency_weight", 0.5)))

    def apply_overrides(self, args: argparse.Namespace) -> None:
        if args.seed is not None:
            self.seed = args.seed
        if args.curriculum_cap is not None:
            self.curriculum["max_iterations"] = args.curriculum_cap
        if args.epochs is not None:
            self.model["epochs"] = args.epochs
        if args.labeled_fraction is not None:
            self.labeled_fraction = args.labeled_fraction
        if args.noise_scale is not None:
            self.augment["noise_scale"] = args.noise_scale
        if args.consistency_weight is not None:
            self.consistency_weight = args.consistency_weight

    def to_jsonable(self) -> dict:
        return {
            "data": {"csv": self.csv, "schema": self.schema,
                     "labeled_fraction": self.labeled_fraction,
                     "validation_fraction": self.validation_fraction},
            "seed": self.seed,
            "model": self.model,
            "augment": self.augment,
            "curriculum": self.curriculum,
            "consistency_weight": self.consistency_weight,
        }

    # sub-seeds derived from the global seed, recorded in the manifest
    @property
    def split_seed(self) -> int:
        return self.seed

    @property
    def model_seed(self) -> int:
        return self.seed + 1

    @property
    def augment_seed(self) -> int:
        return self.seed + 2

    def tempcnn_config(self, channels: int, length: int, class_count: int) -> TempCnnConfig:
        kw = dict(self.model)
        for key in ("filters", "kernel_sizes"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return TempCnnConfig(input_channels=channels, input_length=length,
                             class_count=class_count, seed=self.model_seed, **kw)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(seed=self.augment_seed, **self.augment)

    def curriculum_config(self) -> CurriculumConfig:
        return CurriculumConfig(**self.curriculum)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(labeled_fraction=self.labeled_fraction,
                         validation_fraction=self.validation_fraction,
                         seed=self.split_seed)


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# file writers/readers


def write_decisions_csv(path, pseudo: PseudoLabelResult, cfg_hash: str) -> None:
    names = pseudo.class_names
    header = (["sample_id"] + [f"p_{n}" for n in names]
              + ["decision", "confidence", "first_selected_iteration"])
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        decision_names = pseudo.decision_names()
        for i in range(len(pseudo.decisions)):
            row = [str(i)]
            row += [repr(float(v)) for v in pseudo.probabilities[i]]
            row += [decision_names[i], repr(float(pseudo.confidence[i])),
                    str(int(pseudo.first_selected[i]))]
            writer.writerow(row)


def read_decisions_csv(path):
    """Returns (ids, decision indices with ABSTAIN = -1, class names)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty decisions file")
    header = rows[0]
    names = [c[2:] for c in header if c.startswith("p_")]
    if not names or header[:1] != ["sample_id"] or "decision" not in header:
        raise DataError(f"{path}: not a decisions file (header {header[:3]}...)")
    dec_pos = header.index("decision")
    to_idx = {n: i for i, n in enumerate(names)}
    ids, decisions = [], []
    for row in rows[1:]:
        ids.append(row[0])
        name = row[dec_pos]
        if name == "ABSTAIN":
            decisions.append(metrics_mod.ABSTAIN)
        elif name in to_idx:
            decisions.append(to_idx[name])
        else:
            raise DataError(f"{path}: unknown decision class {name!r}")
    return ids, np.asarray(decisions, dtype=np.int64), names


def write_truth_csv(path, labels: np.ndarray, class_names: list[str],
                    cfg_hash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([str(i), class_names[int(lab)]])


def read_truth_csv(path, class_names: list[str]):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0] != ["sample_id", "label"]:
        raise DataError(f"{path}: expected header sample_id,label")
    to_idx = {n: i for i, n in enumerate(class_names)}
    ids, labels = [], []
    for row in rows[1:]:
        if row[1] not in to_idx:
            raise DataError(f"{path}: unknown class name {row[1]!r}")
        ids.append(row[0])
        labels.append(to_idx[row[1]])
    return ids, np.asarray(labels, dtype=np.int64)


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    class_names = data_mod.DEFAULT_CLASS_NAMES[:args.classes]
    if args.classes < 2 or args.classes > len(data_mod.DEFAULT_CLASS_NAMES):
        raise ConfigError(
            f"--classes must lie in [2, {len(data_mod.DEFAULT_CLASS_NAMES)}]")
    dataset = data_mod.synth_generate(
        n_per_class=args.per_class, channels=args.channels, length=args.length,
        class_margin=args.class_margin, seed=args.seed or 0,
        class_names=class_names)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": "synth", "classes": args.classes,
               "per_class": args.per_class, "channels": args.channels,
               "length": args.length, "class_margin": args.class_margin,
               "seed": args.seed or 0}
    h = config_hash(payload)
    data_mod.write_csv(dataset, out_dir / "data.csv", comment=f"config_hash={h}")
    data_mod.schema_for(dataset).save(out_dir / "schema.json")
    counts = np.bincount(dataset.labels, minlength=len(class_names))
    for name, count in zip(class_names, counts):
        print(f"{name}: {count}")
    print(f"wrote {dataset.n} samples to {out_dir / 'data.csv'} (config_hash={h})",
          file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig.from_file(args.config)
    cfg.apply_overrides(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    schema = CsvSchema.load(cfg.schema)
    dataset = data_mod.load_csv(cfg.csv, schema)
    if dataset.labels is None:
        raise DataError("run needs a labeled dataset; use `label` to apply a "
                        "trained model to unlabeled data")
    labeled, validation, unlabeled, truth = data_mod.split(dataset, cfg.split_spec())
    labeled_norm, stats = data_mod.normalize(labeled)
    validation_norm, _ = data_mod.normalize(validation, stats)
    unlabeled_norm, _ = data_mod.normalize(unlabeled, stats)

    model_cfg = cfg.tempcnn_config(dataset.channels, dataset.length,
                                   len(dataset.class_names))
    cfg_hash = config_hash(cfg.to_jsonable())
    result = run_crupl(labeled_norm, validation_norm, unlabeled_norm,
                       model_cfg, cfg.augment_config(), cfg.curriculum_config(),
                       stats, consistency_weight=cfg.consistency_weight,
                       hidden_truth=truth)

    for entry in result.curriculum.log_jsonable():
        print(f"iteration {entry['iteration']}: t={entry['t']} "
              f"selected={entry['selected']} pool={entry['pool_size']} "
              f"loss={entry['final_supervised_loss']:.4f} "
              f"epochs={entry['epochs_run']}", file=sys.stderr)

    save_network(result.network, out_dir / "checkpoint.npz")
    write_decisions_csv(out_dir / "pseudo_labels.csv", result.pseudo, cfg_hash)
    data_mod.write_csv(unlabeled, out_dir / "unlabeled.csv",
                       comment=f"config_hash={cfg_hash}")
    data_mod.schema_for(unlabeled).save(out_dir / "unlabeled_schema.json")
    if truth is not None:
        write_truth_csv(out_dir / "truth.csv", truth.for_scoring(),
                        dataset.class_names, cfg_hash)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "config_hash": cfg_hash,
        "config": cfg.to_jsonable(),
        "seeds": {"split": cfg.split_seed, "model": cfg.model_seed,
                  "augment": cfg.augment_seed},
        "class_names": dataset.class_names,
        "counts": {"labeled": labeled.n, "validation": validation.n,
                   "unlabeled": unlabeled.n},
        "schema": {k: getattr(schema, k) for k in CsvSchema._KEYS},
        "feature_stats": stats.to_jsonable(),
        "thresholds": result.thresholds.to_jsonable(),
        "curriculum_log": result.curriculum.log_jsonable(),
        "warmup": [r.to_jsonable() for r in result.warmup_reports],
        "metrics": result.metrics.to_jsonable() if result.metrics else None,
    }
    write_json(out_dir / "manifest.json", manifest)
    if result.metrics is not None:
        with open(out_dir / "metrics.txt", "w") as fh:
            fh.write(f"config_hash: {cfg_hash}\n")
            fh.write(metrics_mod.report_text(result.metrics))
        with open(out_dir / "metrics.csv", "w") as fh:
            fh.write(f"# config_hash={cfg_hash}\n")
            fh.write(metrics_mod.report_csv(result.metrics))
        print(f"accuracy={result.metrics.accuracy:.4f} "
              f"abstention={result.metrics.abstention_rate:.4f}", file=sys.stderr)
    print(f"run complete: outputs in {out_dir} (config_hash={cfg_hash})",
          file=sys.stderr)
    return 0


def cmd_label(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ConfigError(f"{args.manifest}: unsupported manifest version")
    class_names = manifest["class_names"]
    stats = FeatureStats.from_jsonable(manifest["feature_stats"])
    thresholds = ThresholdVector.from_jsonable(manifest["thresholds"])
    network = load_network(args.checkpoint)

    if args.schema:
        schema = CsvSchema.load(args.schema)
    else:
        schema_dict = dict(manifest["schema"])
        schema_dict["label_column"] = None
        schema = CsvSchema(**schema_dict)
    dataset = data_mod.load_csv(args.data, schema)
    normalized, _ = data_mod.normalize(dataset, stats) if dataset.n else (dataset, stats)
    probs = predict_proba(network, normalized.x)
    pseudo = assign_pseudo_labels(probs, thresholds, class_names)

    payload = {"command": "label", "checkpoint": args.checkpoint,
               "manifest": args.manifest, "data": args.data,
               "run_config_hash": manifest["config_hash"]}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_decisions_csv(out, pseudo, config_hash(payload))
    print(f"labeled {dataset.n} samples -> {out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    dec_ids, decisions, class_names = read_decisions_csv(args.decisions)
    truth_ids, truth_labels = read_truth_csv(args.truth, class_names)
    dec_by_id = dict(zip(dec_ids, decisions))
    common = [i for i in truth_ids if i in dec_by_id]
    if not common:
        raise JoinError(
            f"no shared sample_id between {args.decisions} and {args.truth}")
    truth_by_id = dict(zip(truth_ids, truth_labels))
    joined_truth = np.asarray([truth_by_id[i] for i in common])
    joined_dec = np.asarray([dec_by_id[i] for i in common])
    rep = metrics_mod.report(metrics_mod.confusion(joined_truth, joined_dec,
                                                   class_names))
    payload = {"command": "eval", "decisions": args.decisions, "truth": args.truth}
    h = config_hash(payload)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.txt", "w") as fh:
        fh.write(f"config_hash: {h}\n")
        fh.write(metrics_mod.report_text(rep))
    with open(out_dir / "metrics.csv", "w") as fh:
        fh.write(f"# config_hash={h}\n")
        fh.write(metrics_mod.report_csv(rep))
    print(metrics_mod.report_text(rep), end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crupl",
        description="Semi-supervised labeling of time-series windows with "
                    "consistency training, curriculum pseudo-labeling, and "
                    "per-class confidence thresholds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--class-margin", type=float, default=2.2)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default="synth_out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="train on a labeled split and pseudo-label the rest")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out-dir", default="run_out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--curriculum-cap", type=int, default=None,
                   help="override curriculum.max_iterations (0 = warm-up only)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--labeled-fraction", type=float, default=None)
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--consistency-weight", type=float, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("label", help="apply a trained run to new unlabeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data", required=True, help="CSV of unlabeled windows")
    p.add_argument("--schema", default=None,
                   help="schema JSON (defaults to the run's schema, label-free)")
    p.add_argument("--out", default="decisions.csv")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="score a decisions file against ground truth")
    p.add_argument("--decisions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out-dir", default="eval_out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    except CruplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
