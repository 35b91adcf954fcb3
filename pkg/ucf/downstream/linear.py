import numpy as np
from pydantic import Field
from scipy.special import expit

from ucf import numcore as nc
from ucf.downstream.common import Classifier, ClassifierKind, Hyper, Scores

MARGIN_SCALE_EPS = 1e-12


class LogisticHyper(Hyper):
    l2: float = Field(1e-4, ge=0)
    iterations: int = Field(500, ge=1)
    lr: float = Field(0.1, gt=0)


class LogisticRegression(Classifier):
    """Full-batch gradient descent on the L2-regularised mean log-loss."""

    kind = ClassifierKind.LOGISTIC_REGRESSION
    hyper_model = LogisticHyper
    needs_both_classes = True

    def _fit(self, X, y):
        n, d = X.shape
        self.w = np.zeros(d)
        self.b = 0.0
        for _ in range(self.hyper.iterations):
            err = expit(X @ self.w + self.b) - y
            self.w -= self.hyper.lr * (X.T @ err / n + self.hyper.l2 * self.w)
            self.b -= self.hyper.lr * float(err.mean())

    def decision_function(self, X) -> np.ndarray:
        return X @ self.w + self.b

    def _scores(self, X) -> Scores:
        return expit(self.decision_function(X))


class SvmHyper(Hyper):
    l2: float = Field(1e-4, gt=0)
    epochs: int = Field(20, ge=1)


class LinearSvm(Classifier):
    """
    Pegasos SGD on the hinge loss with the bias folded in as a constant
    feature. Scores are expit(margin / s), s the mean absolute training
    margin: rank preserving, not calibrated.
    """

    kind = ClassifierKind.LINEAR_SVM
    hyper_model = SvmHyper
    needs_both_classes = True

    def _fit(self, X, y):
        lam = self.hyper.l2
        Xa = np.hstack([X, np.ones((X.shape[0], 1))])
        signs = np.where(y > 0, 1.0, -1.0)
        rng = nc.make_rng(self.seed)
        w = np.zeros(Xa.shape[1])
        radius = 1.0 / np.sqrt(lam)
        t = 0
        for _ in range(self.hyper.epochs):
            for i in rng.permutation(Xa.shape[0]):
                t += 1
                eta = 1.0 / (lam * t)
                violated = signs[i] * (Xa[i] @ w) < 1.0
                w *= 1.0 - eta * lam
                if violated:
                    w += eta * signs[i] * Xa[i]
                norm = np.linalg.norm(w)
                if norm > radius:
                    w *= radius / norm
        self.w, self.b = w[:-1], float(w[-1])
        scale = float(np.abs(self.decision_function(X)).mean())
        self.margin_scale = scale if scale > MARGIN_SCALE_EPS else 1.0

    def decision_function(self, X) -> np.ndarray:
        return X @ self.w + self.b

    def _scores(self, X) -> Scores:
        return expit(self.decision_function(X) / self.margin_scale)
