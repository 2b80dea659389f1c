"""Spread-aware margin training with checkable generalization bounds."""

from .bounds import (
    BoundReport,
    build_bound_report,
    c_p_constant,
    empirical_margin_risk,
    lemma1_rhs,
    prop1_rhs,
    per_class_rhs,
    rademacher_bound_l2,
    rademacher_bound_lp,
    rademacher_exact,
    rademacher_mc,
    surrogate_risk,
)
from .datagen import Dataset, SynthSpec, generate, read_dataset, write_dataset
from .estimator import MarginRegularizedClassifier
from .losses import (
    LossGrad,
    combined_objective,
    delta_margin_ce,
    gamma_margin_loss,
    log2_surrogate,
    logit_margin_ce,
    ramp,
    rep_margin_loss,
    rep_margin_loss_hard,
    zero_one_loss,
)
from .margins import compute_gamma, compute_gamma_lp, delta_margins, gamma_from_stats
from .metrics import EvalReport, evaluate_model, partition_classes, per_class_accuracy
from .model import MarginModel, load_checkpoint, save_checkpoint
from .stats import ClassStats, batch_class_stats, mean_deviation_sq
from .trainer import TrainConfig, TrainLog, TrainResult, ablation_suite, train

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "ClassStats",
    "Dataset",
    "EvalReport",
    "LossGrad",
    "MarginModel",
    "MarginRegularizedClassifier",
    "SynthSpec",
    "TrainConfig",
    "TrainLog",
    "TrainResult",
    "ablation_suite",
    "batch_class_stats",
    "build_bound_report",
    "c_p_constant",
    "combined_objective",
    "compute_gamma",
    "compute_gamma_lp",
    "delta_margin_ce",
    "delta_margins",
    "empirical_margin_risk",
    "evaluate_model",
    "gamma_from_stats",
    "gamma_margin_loss",
    "generate",
    "lemma1_rhs",
    "load_checkpoint",
    "log2_surrogate",
    "logit_margin_ce",
    "mean_deviation_sq",
    "partition_classes",
    "per_class_accuracy",
    "per_class_rhs",
    "prop1_rhs",
    "rademacher_bound_l2",
    "rademacher_bound_lp",
    "rademacher_exact",
    "rademacher_mc",
    "ramp",
    "read_dataset",
    "rep_margin_loss",
    "rep_margin_loss_hard",
    "save_checkpoint",
    "surrogate_risk",
    "train",
    "write_dataset",
    "zero_one_loss",
]
