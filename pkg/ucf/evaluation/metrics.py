"""
Confusion counts, threshold metrics and ROC-AUC for labels in {-1, +1}.
"""

from dataclasses import asdict, dataclass

import numpy as np
from loguru import logger
from scipy.stats import rankdata

from ucf.errors import ContractError, ShapeError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    # names of metrics whose denominator was zero and were set to 0
    undefined: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def _labels(y, name: str) -> np.ndarray:
    y = np.asarray(y).ravel()
    if not np.isin(y, (-1, 1)).all():
        raise ShapeError(f"{name} must contain only -1 and +1")
    return y


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = _labels(y_true, "y_true")
    y_pred = _labels(y_pred, "y_pred")
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"y_true has {y_true.size} labels, y_pred has {y_pred.size}")
    pos_true, pos_pred = y_true == 1, y_pred == 1
    return ConfusionMatrix(
        tp=int(np.count_nonzero(pos_true & pos_pred)),
        fp=int(np.count_nonzero(~pos_true & pos_pred)),
        fn=int(np.count_nonzero(pos_true & ~pos_pred)),
        tn=int(np.count_nonzero(~pos_true & ~pos_pred)),
    )


def classification_metrics(cm: ConfusionMatrix) -> ClassificationMetrics:
    if cm.total <= 0:
        raise ContractError("confusion matrix is empty")
    undefined = []
    accuracy = (cm.tp + cm.tn) / cm.total
    if cm.tp + cm.fp == 0:
        precision = 0.0
        undefined.append("precision")
    else:
        precision = cm.tp / (cm.tp + cm.fp)
    if cm.tp + cm.fn == 0:
        recall = 0.0
        undefined.append("recall")
    else:
        recall = cm.tp / (cm.tp + cm.fn)
    if precision + recall == 0:
        f1 = 0.0
        undefined.append("f1")
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    if undefined:
        logger.debug("metrics with zero denominator set to 0: {}", undefined)
    return ClassificationMetrics(accuracy, precision, recall, f1, tuple(undefined))


def _scores_for(y_true, scores) -> tuple[np.ndarray, np.ndarray, int, int]:
    y = _labels(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ShapeError(f"y_true has {y.size} labels, scores has {s.size}")
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"ROC-AUC needs both classes (positives={n_pos}, negatives={n_neg})")
    return y, s, n_pos, n_neg


def roc_auc(y_true, scores) -> float:
    """
    P(score of a random positive > score of a random negative), ties counted
    one half: the Mann-Whitney U statistic over average ranks.
    """
    y, s, n_pos, n_neg = _scores_for(y_true, scores)
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_counts(y_true, scores) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    """
    Cumulative (fp, tp) counts at each distinct threshold, from the highest
    score down, starting at (0, 0). Tied scores form one step.
    """
    y, s, n_pos, n_neg = _scores_for(y_true, scores)
    order = np.argsort(-s, kind="stable")
    s_sorted, pos_sorted = s[order], (y[order] == 1)
    tp = np.cumsum(pos_sorted)
    fp = np.cumsum(~pos_sorted)
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    fp_steps = np.r_[0, fp[ends]]
    tp_steps = np.r_[0, tp[ends]]
    thresholds = np.r_[np.inf, s_sorted[ends]]
    return fp_steps, tp_steps, thresholds, n_pos, n_neg


def roc_curve(y_true, scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds); predicting positive for score >= threshold."""
    fp, tp, thresholds, n_pos, n_neg = roc_counts(y_true, scores)
    return fp / n_neg, tp / n_pos, thresholds


def roc_auc_trapezoid(y_true, scores) -> float:
    """Trapezoidal area under the tie-grouped ROC curve, accumulated on integer counts."""
    fp, tp, _, n_pos, n_neg = roc_counts(y_true, scores)
    twice_area = np.sum(np.diff(fp) * (tp[1:] + tp[:-1]))
    return float(twice_area / (2.0 * n_pos * n_neg))


def roc_auc_pairwise(y_true, scores) -> float:
    """Brute force over every positive/negative pair; O(n_pos * n_neg)."""
    y, s, n_pos, n_neg = _scores_for(y_true, scores)
    diff = s[y == 1][:, None] - s[y == -1][None, :]
    return float((np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)) / (n_pos * n_neg))
