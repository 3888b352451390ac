"""Confusion-matrix evaluation with abstention accounting.

Multiclass metrics use the one-vs-rest reduction per class; the macro
average is the headline number (micro is also reported). Zero-denominator
cases yield 0.0 and are listed in the report's ``degenerate`` flags rather
than inflating any score.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from crupl.errors import DataError

ABSTAIN = -1


@dataclass
class ConfusionMatrix:
    """counts[i, j] = samples of true class i predicted as class j.
    Abstentions are tallied per true class, outside the counts."""

    counts: np.ndarray
    abstained: np.ndarray
    class_names: list[str]

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def scored(self) -> int:
        return int(self.counts.sum())


def confusion(true_labels, decisions, class_names: list[str]) -> ConfusionMatrix:
    """Tally decisions against truth; ABSTAIN (-1) decisions are counted
    separately and excluded from the matrix."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    decisions = np.asarray(decisions, dtype=np.int64)
    if len(true_labels) != len(decisions):
        raise DataError(
            f"{len(true_labels)} truth labels vs {len(decisions)} decisions")
    c = len(class_names)
    if len(true_labels) and (true_labels.min() < 0 or true_labels.max() >= c):
        raise DataError(f"truth label outside [0, {c})")
    if len(decisions) and (decisions.min() < ABSTAIN or decisions.max() >= c):
        raise DataError(f"decision outside [0, {c}) and not ABSTAIN")
    counts = np.zeros((c, c), dtype=np.int64)
    abstained = np.zeros(c, dtype=np.int64)
    scored = decisions != ABSTAIN
    np.add.at(counts, (true_labels[scored], decisions[scored]), 1)
    np.add.at(abstained, true_labels[~scored], 1)
    return ConfusionMatrix(counts, abstained, list(class_names))


def _ovr(cm: ConfusionMatrix, c: int):
    tp = cm.counts[c, c]
    fp = cm.counts[:, c].sum() - tp
    fn = cm.counts[c, :].sum() - tp
    tn = cm.counts.sum() - tp - fp - fn
    return int(tp), int(fp), int(fn), int(tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def precision(cm: ConfusionMatrix, c: int) -> float:
    tp, fp, _, _ = _ovr(cm, c)
    return _ratio(tp, tp + fp)


def recall(cm: ConfusionMatrix, c: int) -> float:
    tp, _, fn, _ = _ovr(cm, c)
    return _ratio(tp, tp + fn)


def tpr(cm: ConfusionMatrix, c: int) -> float:
    return recall(cm, c)


def fpr(cm: ConfusionMatrix, c: int) -> float:
    _, fp, _, tn = _ovr(cm, c)
    return _ratio(fp, fp + tn)


def f1(cm: ConfusionMatrix, c: int) -> float:
    p, r = precision(cm, c), recall(cm, c)
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(int(np.trace(cm.counts)), cm.scored)


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """diagonal / row total per class; 0 with a warning for empty rows."""
    totals = cm.counts.sum(axis=1)
    empty = totals == 0
    if empty.any():
        warnings.warn(
            f"classes {np.flatnonzero(empty).tolist()} have no scored samples; "
            "their accuracy is reported as 0")
    out = np.zeros(cm.class_count, dtype=np.float64)
    np.divide(np.diag(cm.counts), totals, out=out, where=~empty)
    return out


@dataclass
class MetricsReport:
    class_names: list[str]
    per_class: dict[str, list[float]]
    macro: dict[str, float]
    micro: dict[str, float]
    accuracy: float
    abstention_rate: float
    degenerate: list[str] = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return {
            "class_names": self.class_names,
            "per_class": self.per_class,
            "macro": self.macro,
            "micro": self.micro,
            "accuracy": self.accuracy,
            "abstention_rate": self.abstention_rate,
            "degenerate": self.degenerate,
        }


_METRIC_FNS = {"precision": precision, "recall": recall, "tpr": tpr,
               "fpr": fpr, "f1": f1}


def report(cm: ConfusionMatrix) -> MetricsReport:
    per_class = {name: [fn(cm, c) for c in range(cm.class_count)]
                 for name, fn in _METRIC_FNS.items()}
    macro = {name: float(np.mean(vals)) for name, vals in per_class.items()}

    degenerate = []
    for c in range(cm.class_count):
        tp, fp, fn_, tn = _ovr(cm, c)
        if tp + fp == 0:
            degenerate.append(f"precision[{cm.class_names[c]}]")
        if tp + fn_ == 0:
            degenerate.append(f"recall[{cm.class_names[c]}]")
        if fp + tn == 0:
            degenerate.append(f"fpr[{cm.class_names[c]}]")

    # micro: pool one-vs-rest counts across classes
    tps = sum(_ovr(cm, c)[0] for c in range(cm.class_count))
    fps = sum(_ovr(cm, c)[1] for c in range(cm.class_count))
    fns = sum(_ovr(cm, c)[2] for c in range(cm.class_count))
    tns = sum(_ovr(cm, c)[3] for c in range(cm.class_count))
    micro_p = _ratio(tps, tps + fps)
    micro_r = _ratio(tps, tps + fns)
    micro = {
        "precision": micro_p,
        "recall": micro_r,
        "tpr": micro_r,
        "fpr": _ratio(fps, fps + tns),
        "f1": 2 * micro_p * micro_r / (micro_p + micro_r) if micro_p + micro_r > 0 else 0.0,
    }

    total = cm.scored + int(cm.abstained.sum())
    return MetricsReport(
        class_names=list(cm.class_names),
        per_class=per_class,
        macro=macro,
        micro=micro,
        accuracy=accuracy(cm),
        abstention_rate=_ratio(int(cm.abstained.sum()), total),
        degenerate=degenerate,
    )


CSV_COLUMNS = ["Precision", "Recall", "TPR", "FPR", "F1-score", "Accuracy"]


def report_csv(r: MetricsReport, averaging: str = "macro") -> str:
    """One header plus one row in the conventional column order; averaged
    per-class metrics plus overall accuracy."""
    avg = r.macro if averaging == "macro" else r.micro
    row = [avg["precision"], avg["recall"], avg["tpr"], avg["fpr"], avg["f1"],
           r.accuracy]
    return ",".join(CSV_COLUMNS) + "\n" + ",".join(f"{v:.6f}" for v in row) + "\n"


def report_text(r: MetricsReport) -> str:
    lines = [
        f"accuracy        {r.accuracy:.4f}",
        f"abstention rate {r.abstention_rate:.4f}",
        "",
        f"{'class':<16}{'prec':>8}{'recall':>8}{'tpr':>8}{'fpr':>8}{'f1':>8}",
    ]
    for c, name in enumerate(r.class_names):
        lines.append(f"{name:<16}"
                     f"{r.per_class['precision'][c]:>8.4f}"
                     f"{r.per_class['recall'][c]:>8.4f}"
                     f"{r.per_class['tpr'][c]:>8.4f}"
                     f"{r.per_class['fpr'][c]:>8.4f}"
                     f"{r.per_class['f1'][c]:>8.4f}")
    lines.append(f"{'macro':<16}"
                 f"{r.macro['precision']:>8.4f}{r.macro['recall']:>8.4f}"
                 f"{r.macro['tpr']:>8.4f}{r.macro['fpr']:>8.4f}{r.macro['f1']:>8.4f}")
    lines.append(f"{'micro':<16}"
                 f"{r.micro['precision']:>8.4f}{r.micro['recall']:>8.4f}"
                 f"{r.micro['tpr']:>8.4f}{r.micro['fpr']:>8.4f}{r.micro['f1']:>8.4f}")
    if r.degenerate:
        lines.append("")
        lines.append("zero-denominator metrics reported as 0: " + ", ".join(r.degenerate))
    return "\n".join(lines) + "\n"
