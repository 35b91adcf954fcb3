"""
Stratified k-fold cross-validation and single holdout evaluation of the
downstream classifiers on frozen embeddings.
"""

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from loguru import logger

from ucf import numcore as nc
from ucf.downstream import ClassifierKind, fit
from ucf.errors import StratificationError, UndefinedMetricError
from ucf.evaluation.metrics import (
    ClassificationMetrics,
    ConfusionMatrix,
    classification_metrics,
    confusion,
    roc_auc,
)
from ucf.utils import derive_seed, dumps_json, parallel_map, write_json

AGGREGATE_KEYS = ("accuracy", "precision", "recall", "f1", "auc")


def stratified_folds(y, k: int, seed: int) -> list[np.ndarray]:
    """
    Test indices of each fold, ascending. Every class is shuffled with the
    seed and dealt round-robin over the folds, smallest label first.
    """
    y = np.asarray(y).ravel()
    if k < 2:
        raise StratificationError(f"need at least 2 folds, got {k}")
    rng = nc.make_rng(seed)
    fold_of = np.empty(y.size, dtype=np.int64)
    for label in np.unique(y):
        members = np.flatnonzero(y == label)
        if members.size < k:
            raise StratificationError(
                f"class {label} has {members.size} members, fewer than k={k}",
                label=int(label),
                members=int(members.size),
            )
        fold_of[rng.permutation(members)] = np.arange(members.size) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


@dataclass
class FoldResult:
    fold: int
    confusion: ConfusionMatrix
    metrics: ClassificationMetrics
    auc: float

    def to_dict(self) -> dict:
        return {"fold": self.fold, **self.confusion.to_dict(), **self.metrics.to_dict(), "auc": self.auc}


def _safe_auc(y, scores) -> float:
    try:
        return roc_auc(y, scores)
    except UndefinedMetricError:
        return math.nan


@dataclass
class MetricsReport:
    classifier: str
    seed: int
    folds: list[FoldResult]
    dataset_digest: str = ""
    # out-of-fold score and fold number per sample; not part of the JSON
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    fold_of: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    def aggregate(self) -> dict:
        """Unweighted fold means of the rates, summed confusion counts."""
        rows = [f.to_dict() for f in self.folds]
        agg: dict = {key: sum(r[key] for r in rows) for key in ("tp", "fp", "fn", "tn")}
        for key in AGGREGATE_KEYS:
            agg[key] = float(np.mean([r[key] for r in rows]))
        return agg

    def to_dict(self) -> dict:
        return {
            "classifier": self.classifier,
            "seed": self.seed,
            "folds": [f.to_dict() for f in self.folds],
            "aggregate": self.aggregate(),
            "dataset_digest": self.dataset_digest,
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def write(self, path) -> None:
        write_json(path, self.to_dict())


def kfold_cv(
    X,
    y,
    k: int = 5,
    kind: ClassifierKind | str = ClassifierKind.LOGISTIC_REGRESSION,
    seed: int = 0,
    model_seed: int | None = None,
    hyper: Mapping | None = None,
    threshold: float = 0.5,
    dataset_digest: str = "",
) -> MetricsReport:
    """
    Args:
        seed: fold assignment seed.
        model_seed: seed of the classifier; fold f fits with a seed split off
            it. Defaults to a split of `seed`.
    """
    kind = ClassifierKind(kind)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).ravel()
    model_seed = derive_seed(seed, kind.value) if model_seed is None else model_seed
    folds = stratified_folds(y, k, seed)

    scores = np.zeros(y.size)
    fold_of = np.zeros(y.size, dtype=np.int64)
    results = []
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(y.size), test)
        model = fit(kind, X[train], y[train], derive_seed(model_seed, f"fold{f}"), hyper)
        s = model.predict_proba(X[test])
        pred = np.where(s >= threshold, 1, -1)
        cm = confusion(y[test], pred)
        results.append(FoldResult(f, cm, classification_metrics(cm), _safe_auc(y[test], s)))
        scores[test] = s
        fold_of[test] = f
    report = MetricsReport(kind.value, model_seed, results, dataset_digest, scores, fold_of)
    agg = report.aggregate()
    logger.info(
        "{} {}-fold: accuracy={:.5f} precision={:.5f} recall={:.5f} f1={:.5f} auc={:.5f}",
        kind.value,
        k,
        agg["accuracy"],
        agg["precision"],
        agg["recall"],
        agg["f1"],
        agg["auc"],
    )
    return report


def _kfold_job(job: tuple) -> MetricsReport:
    X, y, k, kind, seed, model_seed, hyper, threshold, digest = job
    return kfold_cv(X, y, k, kind, seed, model_seed, hyper, threshold, digest)


def kfold_many(
    X,
    y,
    kinds: Sequence[ClassifierKind | str],
    k: int,
    seed: int,
    model_seeds: Mapping[str, int],
    hypers: Mapping[str, Mapping] | None = None,
    threshold: float = 0.5,
    dataset_digest: str = "",
    num_processes: int = 1,
) -> list[MetricsReport]:
    """One report per kind, in `kinds` order, over the same folds."""
    hypers = hypers or {}
    jobs = []
    for kind in kinds:
        kind = ClassifierKind(kind)
        jobs.append(
            (X, y, k, kind, seed, model_seeds[kind.value], hypers.get(kind.value), threshold, dataset_digest)
        )
    return parallel_map(_kfold_job, jobs, num_processes)


@dataclass
class HoldoutReport:
    classifier: str
    seed: int
    confusion: ConfusionMatrix
    metrics: ClassificationMetrics
    auc: float
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self) -> dict:
        return {
            "classifier": self.classifier,
            "seed": self.seed,
            **self.confusion.to_dict(),
            **self.metrics.to_dict(),
            "auc": self.auc,
        }


def holdout_eval(
    X_train,
    y_train,
    X_val,
    y_val,
    kind: ClassifierKind | str,
    seed: int,
    hyper: Mapping | None = None,
    threshold: float = 0.5,
) -> HoldoutReport:
    """Fit on one split, score the other."""
    kind = ClassifierKind(kind)
    model = fit(kind, X_train, y_train, seed, hyper)
    scores = model.predict_proba(X_val)
    cm = confusion(y_val, np.where(scores >= threshold, 1, -1))
    return HoldoutReport(kind.value, seed, cm, classification_metrics(cm), _safe_auc(y_val, scores), scores)
