"""Semi-supervised labeling of multivariate time-series windows.

A small labeled set plus a large unlabeled pool go in; calibrated class
labels (or abstentions) for the pool come out, produced by a temporal CNN
trained with consistency regularization and curriculum pseudo-labeling.
"""

from crupl.augment import AugmentConfig, weak_augment
from crupl.data import (CsvSchema, Dataset, FeatureStats, SealedLabels,
                        SplitSpec, load_csv, normalize, split, synth_generate,
                        write_csv)
from crupl.metrics import ConfusionMatrix, MetricsReport, confusion, report
from crupl.pipeline import (CurriculumConfig, CurriculumState,
                            PseudoLabelResult, RunResult, ThresholdVector,
                            assign_pseudo_labels, calibrate_thresholds,
                            curriculum_finetune, run_crupl, select_confident,
                            warmup_train)
from crupl.tempcnn import (TempCnnConfig, TrainReport, build_tempcnn, fit,
                           predict_proba)

__version__ = "0.1.0"
