from ucf.evaluation.cv import (
    HoldoutReport,
    MetricsReport,
    holdout_eval,
    kfold_cv,
    kfold_many,
    stratified_folds,
)
from ucf.evaluation.metrics import (
    ClassificationMetrics,
    ConfusionMatrix,
    classification_metrics,
    confusion,
    roc_auc,
    roc_auc_trapezoid,
    roc_curve,
)
from ucf.evaluation.tsne import TsneConfig, TsneResult, joint_probabilities, kl_divergence, kl_gradient, tsne

__all__ = [
    "ClassificationMetrics",
    "ConfusionMatrix",
    "HoldoutReport",
    "MetricsReport",
    "TsneConfig",
    "TsneResult",
    "classification_metrics",
    "confusion",
    "holdout_eval",
    "joint_probabilities",
    "kfold_cv",
    "kfold_many",
    "kl_divergence",
    "kl_gradient",
    "roc_auc",
    "roc_auc_trapezoid",
    "roc_curve",
    "stratified_folds",
    "tsne",
]
