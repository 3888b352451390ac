"""The semi-supervised labeling procedure, end to end.

Phases: supervised warm-up on the labeled set and its weakly augmented copy
(with an optional prediction-consistency term), curriculum fine-tuning that
folds progressively less-confident unlabeled samples into the training pool
as soft-label targets, then per-class threshold calibration and final
pseudo-label assignment with abstention.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from crupl.augment import AugmentConfig, weak_augment
from crupl.data import Dataset, FeatureStats, SealedLabels
from crupl.errors import (ConfigError, CurriculumDivergenceError,
                          DivergenceError, PreconditionError,
                          StratificationError)
from crupl.metrics import MetricsReport, confusion, per_class_accuracy, report
from crupl.nn.network import Network
from crupl.tempcnn import TempCnnConfig, TrainReport, build_tempcnn, fit, predict_proba

ABSTAIN = -1


@dataclass
class CurriculumConfig:
    """Confidence schedule: iterate t = t_start, t_start + t_step, ... while
    t < t_end, capped at max_iterations."""

    t_start: float = 75.0
    t_end: float = 100.0
    t_step: float = 5.0
    max_iterations: int = 10

    def validate(self):
        if not 0 < self.t_start < self.t_end <= 100:
            raise ConfigError(
                f"need 0 < t_start < t_end <= 100, got {self.t_start}, {self.t_end}")
        if self.t_step <= 0:
            raise ConfigError(f"t_step must be > 0, got {self.t_step}")
        if self.max_iterations < 0:
            raise ConfigError(f"max_iterations must be >= 0, got {self.max_iterations}")

    def iteration_count(self) -> int:
        return min(math.ceil((self.t_end - self.t_start) / self.t_step),
                   self.max_iterations)

    def to_jsonable(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CurriculumState:
    """Cumulative training pool over the unlabeled set.

    ``targets[i]`` is the current soft label of unlabeled sample i while
    ``in_pool[i]`` is set; re-selected samples get their targets refreshed to
    the newest prediction. ``first_selected[i]`` is the 1-based iteration at
    which sample i first entered the pool (-1 if never). The pool only grows,
    and the original labeled samples always keep their true one-hot targets.
    """

    in_pool: np.ndarray
    targets: np.ndarray
    first_selected: np.ndarray
    ts: list[float] = field(default_factory=list)
    selected_counts: list[int] = field(default_factory=list)
    pool_sizes: list[int] = field(default_factory=list)
    pool_history: list[np.ndarray] = field(default_factory=list)
    train_reports: list[TrainReport] = field(default_factory=list)

    @classmethod
    def fresh(cls, n_unlabeled: int, class_count: int) -> "CurriculumState":
        return cls(in_pool=np.zeros(n_unlabeled, dtype=bool),
                   targets=np.zeros((n_unlabeled, class_count), dtype=np.float32),
                   first_selected=np.full(n_unlabeled, -1, dtype=np.int64))

    def log_jsonable(self) -> list[dict]:
        return [
            {"iteration": i + 1, "t": t, "selected": s, "pool_size": p,
             "final_supervised_loss": (r.supervised_loss[-1] if r.supervised_loss else None),
             "epochs_run": r.epochs_run}
            for i, (t, s, p, r) in enumerate(
                zip(self.ts, self.selected_counts, self.pool_sizes, self.train_reports))
        ]


@dataclass
class ThresholdVector:
    """Per-class decision thresholds.

    ``raw[c]`` is the 90th percentile (linear interpolation between order
    statistics) of the probability mass that samples claiming class c put on
    c; ``class_accuracy[c]`` is that class's validation accuracy; the
    calibrated threshold is their product, so it never exceeds the raw one.
    """

    raw: np.ndarray
    class_accuracy: np.ndarray
    calibrated: np.ndarray
    fallback_classes: list[int] = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return {"raw": [float(v) for v in self.raw],
                "class_accuracy": [float(v) for v in self.class_accuracy],
                "calibrated": [float(v) for v in self.calibrated],
                "fallback_classes": self.fallback_classes}

    @classmethod
    def from_jsonable(cls, d: dict) -> "ThresholdVector":
        return cls(np.asarray(d["raw"], dtype=np.float64),
                   np.asarray(d["class_accuracy"], dtype=np.float64),
                   np.asarray(d["calibrated"], dtype=np.float64),
                   list(d.get("fallback_classes", [])))


@dataclass
class PseudoLabelResult:
    """Final soft labels, hard decisions (ABSTAIN = -1), confidences, and the
    iteration at which each sample first entered the curriculum pool."""

    probabilities: np.ndarray
    decisions: np.ndarray
    confidence: np.ndarray
    first_selected: np.ndarray
    class_names: list[str]

    def decision_names(self) -> list[str]:
        return ["ABSTAIN" if d == ABSTAIN else self.class_names[d]
                for d in self.decisions]


def _require_min_per_class(labels: np.ndarray, class_count: int,
                           minimum: int, what: str) -> None:
    counts = np.bincount(labels, minlength=class_count)
    small = np.flatnonzero(counts < minimum)
    if small.size:
        raise StratificationError(
            f"{what} needs at least {minimum} samples per class; classes "
            f"{small.tolist()} have counts {counts[small].tolist()}")


def warmup_train(network: Network, labeled: Dataset, cfg: TempCnnConfig,
                 aug_cfg: AugmentConfig, feature_stats: FeatureStats,
                 validation: Dataset | None = None,
                 consistency_weight: float = 0.5) -> list[TrainReport]:
    """Supervised warm-up: fit on the labeled data, then on a weakly
    augmented copy carrying the original labels. With a positive
    consistency_weight the second phase also penalizes disagreement between
    predictions on the clean and perturbed signals."""
    if labeled.labels is None or labeled.n == 0:
        raise PreconditionError("warm-up needs a nonempty labeled dataset")
    _require_min_per_class(labeled.labels, len(labeled.class_names), 2, "warm-up")
    val = (validation.x, validation.labels) if validation is not None else None
    y = labeled.one_hot()
    reports = [fit(network, labeled.x, y, cfg, validation=val)]
    augmented = weak_augment(labeled.x, aug_cfg, feature_stats)
    reports.append(fit(network, augmented, y, cfg, validation=val,
                       pair_x=labeled.x, consistency_weight=consistency_weight))
    return reports


def select_confident(probs: np.ndarray, t: float) -> np.ndarray:
    """Indices of the top t% most-confident samples by max class probability.

    The cutoff is the ceil(t% * n)-th largest max-probability (an
    inverted-CDF percentile of the confidence distribution); every sample at
    or above the cutoff is included, so ties at the threshold are kept and
    the selection is inclusion-monotone in t.
    """
    if not 0 < t < 100:
        raise ConfigError(f"confidence percentage must lie in (0, 100), got {t}")
    n = len(probs)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    maxprob = probs.max(axis=1)
    n_sel = min(n, math.ceil(t / 100.0 * n))
    cutoff = np.sort(maxprob)[::-1][n_sel - 1]
    return np.flatnonzero(maxprob >= cutoff)


def curriculum_finetune(network: Network, labeled: Dataset, unlabeled: Dataset,
                        cfg: TempCnnConfig, cur_cfg: CurriculumConfig,
                        validation: Dataset | None = None) -> CurriculumState:
    """Iterative fine-tuning on a growing pool of self-labeled samples.

    Each iteration predicts soft labels for the whole unlabeled pool, admits
    the top-t% most confident samples (refreshing targets of ones admitted
    earlier), and refits on the labeled data plus the pool. On divergence the
    procedure aborts with the iteration index and the last finite parameter
    snapshot.
    """
    cur_cfg.validate()
    state = CurriculumState.fresh(unlabeled.n, network.class_count)
    y_labeled = labeled.one_hot()
    val = (validation.x, validation.labels) if validation is not None else None
    t = cur_cfg.t_start
    iteration = 0
    while t < cur_cfg.t_end and iteration < cur_cfg.max_iterations:
        probs = predict_proba(network, unlabeled.x)
        selected = select_confident(probs, t)
        newly = selected[state.first_selected[selected] == -1]
        state.first_selected[newly] = iteration + 1
        state.in_pool[selected] = True
        state.targets[selected] = probs[selected]

        pool_idx = np.flatnonzero(state.in_pool)
        x_train = np.concatenate([labeled.x, unlabeled.x[pool_idx]], axis=0)
        y_train = np.concatenate([y_labeled, state.targets[pool_idx]], axis=0)
        snapshot = network.get_state()
        try:
            train_report = fit(network, x_train, y_train, cfg, validation=val)
        except DivergenceError as exc:
            raise CurriculumDivergenceError(
                f"fine-tuning diverged at iteration {iteration + 1} (t={t}): {exc}",
                iteration=iteration + 1, last_good_params=snapshot) from exc

        state.ts.append(t)
        state.selected_counts.append(int(len(selected)))
        state.pool_sizes.append(int(labeled.n + len(pool_idx)))
        state.pool_history.append(pool_idx)
        state.train_reports.append(train_report)
        t += cur_cfg.t_step
        iteration += 1
    return state


def threshold_vector(unlabeled_probs: np.ndarray, val_predicted: np.ndarray,
                     val_true: np.ndarray, class_names: list[str]) -> ThresholdVector:
    """Pure threshold computation from probabilities and validation labels.

    raw[c]: 90th percentile of {p_i[c] : argmax p_i = c}; classes nobody
    claims fall back to the global 90th percentile of max-probabilities.
    class_accuracy[c]: fraction of validation samples of class c predicted
    correctly. calibrated[c] = class_accuracy[c] * raw[c].
    """
    c_count = len(class_names)
    claims = unlabeled_probs.argmax(axis=1)
    global_raw = float(np.percentile(unlabeled_probs.max(axis=1), 90)) \
        if len(unlabeled_probs) else 1.0
    raw = np.zeros(c_count, dtype=np.float64)
    fallback = []
    for c in range(c_count):
        claimed = unlabeled_probs[claims == c, c]
        if claimed.size:
            raw[c] = float(np.percentile(claimed, 90))
        else:
            raw[c] = global_raw
            fallback.append(c)
    cm = confusion(val_true, val_predicted, class_names)
    acc = per_class_accuracy(cm)
    return ThresholdVector(raw=raw, class_accuracy=acc, calibrated=acc * raw,
                           fallback_classes=fallback)


def calibrate_thresholds(network: Network, unlabeled_probs: np.ndarray,
                         validation: Dataset) -> ThresholdVector:
    """Per-class thresholds from the model's own confidence distribution,
    scaled down by validation accuracy so weak classes stay permissive."""
    if validation.labels is None or validation.n == 0:
        raise PreconditionError("threshold calibration needs a labeled validation set")
    if len(unlabeled_probs) == 0:
        raise PreconditionError("threshold calibration needs a nonempty probability matrix")
    _require_min_per_class(validation.labels, len(validation.class_names), 1,
                           "threshold calibration")
    val_pred = predict_proba(network, validation.x).argmax(axis=1)
    return threshold_vector(unlabeled_probs, val_pred, validation.labels,
                            validation.class_names)


def assign_pseudo_labels(probs: np.ndarray, thresholds: ThresholdVector,
                         class_names: list[str],
                         first_selected: np.ndarray | None = None) -> PseudoLabelResult:
    """Label each sample with its argmax class if that class's probability
    clears the calibrated threshold, else ABSTAIN. Argmax ties resolve to the
    lowest class index."""
    best = probs.argmax(axis=1)
    confidence = probs.max(axis=1)
    decisions = np.where(confidence >= thresholds.calibrated[best], best, ABSTAIN)
    if first_selected is None:
        first_selected = np.full(len(probs), -1, dtype=np.int64)
    return PseudoLabelResult(probabilities=probs, decisions=decisions.astype(np.int64),
                             confidence=confidence, first_selected=first_selected,
                             class_names=list(class_names))


@dataclass
class RunResult:
    network: Network
    pseudo: PseudoLabelResult
    thresholds: ThresholdVector
    curriculum: CurriculumState
    warmup_reports: list[TrainReport]
    metrics: MetricsReport | None
    wall_time_s: float


def evaluate_decisions(pseudo: PseudoLabelResult,
                       hidden_truth: SealedLabels) -> MetricsReport:
    """Score pseudo-labels against the sealed ground truth (evaluation mode
    only); abstentions are excluded from the matrix and reported as a rate."""
    truth = hidden_truth.for_scoring()
    return report(confusion(truth, pseudo.decisions, pseudo.class_names))


def run_crupl(labeled: Dataset, validation: Dataset, unlabeled: Dataset,
              model_cfg: TempCnnConfig, aug_cfg: AugmentConfig,
              cur_cfg: CurriculumConfig, feature_stats: FeatureStats,
              consistency_weight: float = 0.5,
              hidden_truth: SealedLabels | None = None,
              network: Network | None = None) -> RunResult:
    """Full procedure: warm-up, curriculum fine-tuning, threshold
    calibration, pseudo-label assignment, and (when ground truth for the
    unlabeled pool is supplied) evaluation.

    Labeled and unlabeled sets must be disjoint; everything downstream of
    the seeds is deterministic. Total cost grows linearly with the unlabeled
    pool size, and per-sample prediction cost is constant.
    """
    started = time.perf_counter()
    if network is None:
        network = build_tempcnn(model_cfg)
    warmup_reports = warmup_train(network, labeled, model_cfg, aug_cfg,
                                  feature_stats, validation=validation,
                                  consistency_weight=consistency_weight)
    state = curriculum_finetune(network, labeled, unlabeled, model_cfg, cur_cfg,
                                validation=validation)
    probs = predict_proba(network, unlabeled.x)
    thresholds = calibrate_thresholds(network, probs, validation)
    pseudo = assign_pseudo_labels(probs, thresholds, unlabeled.class_names,
                                  first_selected=state.first_selected)
    metrics_report = evaluate_decisions(pseudo, hidden_truth) if hidden_truth else None
    return RunResult(network=network, pseudo=pseudo, thresholds=thresholds,
                     curriculum=state, warmup_reports=warmup_reports,
                     metrics=metrics_report,
                     wall_time_s=time.perf_counter() - started)
