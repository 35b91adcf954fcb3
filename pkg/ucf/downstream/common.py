from abc import ABC, abstractmethod
from collections.abc import Mapping, Sequence
from enum import Enum
from typing import ClassVar

import numpy as np
import numpy.typing as npt
from loguru import logger
from pydantic import BaseModel, ConfigDict

from ucf.errors import ShapeError, UnfittableError
from ucf.utils import parallel_map, validate_config

Scores = npt.NDArray[np.float64]


class ClassifierKind(str, Enum):
    LOGISTIC_REGRESSION = "logistic-regression"
    LINEAR_SVM = "linear-svm"
    KNN = "knn"
    GAUSSIAN_NB = "gaussian-nb"
    DECISION_TREE = "decision-tree"
    RANDOM_FOREST = "random-forest"
    GRADIENT_BOOSTING = "gradient-boosting"


ALL_KINDS: tuple[ClassifierKind, ...] = tuple(ClassifierKind)


class Hyper(BaseModel):
    """Base for per-classifier hyperparameters; unknown keys are rejected."""

    model_config = ConfigDict(frozen=True, extra="forbid")


class Classifier(ABC):
    kind: ClassVar[ClassifierKind]
    hyper_model: ClassVar[type[Hyper]]
    # LR, SVM and GB need both classes to define their objective
    needs_both_classes: ClassVar[bool] = False

    def __init__(self, hyper: Hyper, seed: int = 0):
        self.hyper = hyper
        self.seed = seed
        self.n_features: int | None = None

    @abstractmethod
    def _fit(self, X: npt.NDArray[np.float64], y: npt.NDArray[np.float64]) -> None:
        """y is 1.0 for the positive class and 0.0 otherwise."""
        raise NotImplementedError("abstract base class")

    @abstractmethod
    def _scores(self, X: npt.NDArray[np.float64]) -> Scores:
        raise NotImplementedError("abstract base class")

    def fit(self, X, y) -> "Classifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ShapeError(f"{self.kind.value}: X {X.shape} and y {y.shape} do not align")
        if X.shape[0] < 2:
            raise UnfittableError(f"{self.kind.value} needs at least 2 samples, got {X.shape[0]}")
        if not np.isin(y, (-1, 1)).all():
            raise ShapeError(f"{self.kind.value}: labels must be -1 or +1")
        if self.needs_both_classes and np.unique(y).size < 2:
            raise UnfittableError(
                f"{self.kind.value} cannot be fit on a single class", kind=self.kind.value
            )
        self.n_features = X.shape[1]
        self._fit(X, (y == 1).astype(np.float64))
        return self

    def predict_proba(self, X) -> Scores:
        if self.n_features is None:
            raise UnfittableError(f"{self.kind.value} has not been fit")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(
                f"{self.kind.value} was fit on {self.n_features} features, got input {X.shape}"
            )
        return np.clip(self._scores(X), 0.0, 1.0)

    def predict(self, X, threshold: float = 0.5) -> npt.NDArray[np.int64]:
        return np.where(self.predict_proba(X) >= threshold, 1, -1).astype(np.int64)

    def metadata(self) -> dict:
        return {"kind": self.kind.value, "seed": self.seed, "hyper": self.hyper.model_dump()}


CLASSIFIER_HUB: dict[ClassifierKind, type[Classifier]] = {}


def register_classifier(cls: type[Classifier]) -> None:
    CLASSIFIER_HUB[cls.kind] = cls


def get_classifier_class(kind: ClassifierKind | str) -> type[Classifier]:
    if not CLASSIFIER_HUB:
        from ucf.downstream.register import register_all_classifiers

        register_all_classifiers()
    return CLASSIFIER_HUB[ClassifierKind(kind)]


def make_classifier(
    kind: ClassifierKind | str, hyper: Mapping | None = None, seed: int = 0
) -> Classifier:
    cls = get_classifier_class(kind)
    return cls(validate_config(cls.hyper_model, hyper or {}), seed)


def fit(
    kind: ClassifierKind | str, X, y, seed: int = 0, hyper: Mapping | None = None
) -> Classifier:
    model = make_classifier(kind, hyper, seed).fit(X, y)
    logger.debug("fit {} on {} samples", model.metadata(), len(y))
    return model


def predict_proba(model: Classifier, X) -> Scores:
    return model.predict_proba(X)


def predict(model: Classifier, X, threshold: float = 0.5) -> npt.NDArray[np.int64]:
    return model.predict(X, threshold)


def _fit_job(job: tuple) -> Classifier:
    kind, X, y, seed, hyper = job
    return fit(kind, X, y, seed, hyper)


def fit_many(
    kinds: Sequence[ClassifierKind | str],
    X,
    y,
    seeds: Mapping[str, int],
    hypers: Mapping[str, Mapping] | None = None,
    num_processes: int = 1,
) -> list[Classifier]:
    """Fit several kinds on the same data; results come back in `kinds` order."""
    hypers = hypers or {}
    jobs = []
    for kind in kinds:
        kind = ClassifierKind(kind)
        jobs.append((kind, X, y, seeds[kind.value], hypers.get(kind.value)))
    return parallel_map(_fit_job, jobs, num_processes)
