import numpy as np
from pydantic import Field

from ucf.downstream.common import Classifier, ClassifierKind, Hyper, Scores
from ucf.errors import UnfittableError

QUERY_CHUNK = 64


class KnnHyper(Hyper):
    k: int = Field(5, ge=1)


class KNearestNeighbors(Classifier):
    """
    Fraction of positives among the k nearest training points (Euclidean).
    Equal distances go to the lower training index.
    """

    kind = ClassifierKind.KNN
    hyper_model = KnnHyper

    def _fit(self, X, y):
        if X.shape[0] < self.hyper.k:
            raise UnfittableError(f"knn with k={self.hyper.k} needs at least k training samples, got {X.shape[0]}")
        self.X = X.copy()
        self.y = y.copy()

    def neighbors(self, X) -> np.ndarray:
        out = []
        for start in range(0, X.shape[0], QUERY_CHUNK):
            q = X[start : start + QUERY_CHUNK]
            dist = ((q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
            out.append(np.argsort(dist, axis=1, kind="stable")[:, : self.hyper.k])
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.hyper.k), dtype=np.int64)

    def _scores(self, X) -> Scores:
        return self.y[self.neighbors(X)].mean(axis=1)
