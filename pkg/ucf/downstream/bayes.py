import numpy as np
from pydantic import Field
from scipy.special import expit

from ucf.downstream.common import Classifier, ClassifierKind, Hyper, Scores


class NaiveBayesHyper(Hyper):
    var_smoothing: float = Field(1e-9, ge=0)


class GaussianNaiveBayes(Classifier):
    """
    Axis-aligned Gaussian per class. Every variance is increased by
    var_smoothing times the largest feature variance of the training data.
    """

    kind = ClassifierKind.GAUSSIAN_NB
    hyper_model = NaiveBayesHyper

    def _fit(self, X, y):
        self.present = [c for c in (0.0, 1.0) if np.any(y == c)]
        epsilon = self.hyper.var_smoothing * float(X.var(axis=0).max())
        self.means, self.vars, self.log_priors = {}, {}, {}
        for c in self.present:
            rows = X[y == c]
            self.means[c] = rows.mean(axis=0)
            self.vars[c] = rows.var(axis=0) + epsilon
            self.log_priors[c] = float(np.log(rows.shape[0] / X.shape[0]))

    def _joint_log_likelihood(self, X, c: float) -> np.ndarray:
        var = self.vars[c]
        # a zero-variance feature with zero smoothing only matches its mean exactly
        var = np.where(var > 0, var, np.finfo(np.float64).tiny)
        log_pdf = -0.5 * (np.log(2.0 * np.pi * var) + (X - self.means[c]) ** 2 / var)
        return self.log_priors[c] + log_pdf.sum(axis=1)

    def _scores(self, X) -> Scores:
        if len(self.present) == 1:
            return np.full(X.shape[0], self.present[0])
        return expit(self._joint_log_likelihood(X, 1.0) - self._joint_log_likelihood(X, 0.0))
