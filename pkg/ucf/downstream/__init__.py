from ucf.downstream.common import (
    ALL_KINDS,
    CLASSIFIER_HUB,
    Classifier,
    ClassifierKind,
    fit,
    fit_many,
    make_classifier,
    predict,
    predict_proba,
)
from ucf.downstream.register import register_all_classifiers

__all__ = [
    "ALL_KINDS",
    "CLASSIFIER_HUB",
    "Classifier",
    "ClassifierKind",
    "fit",
    "fit_many",
    "make_classifier",
    "predict",
    "predict_proba",
    "register_all_classifiers",
]
