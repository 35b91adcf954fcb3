import math

import numpy as np
from pydantic import Field
from scipy.special import expit

from ucf import numcore as nc
from ucf.downstream.common import Classifier, ClassifierKind, Hyper, Scores
from ucf.downstream.trees import Tree, build_tree
from ucf.utils import derive_seed

NEWTON_EPS = 1e-12


class ForestHyper(Hyper):
    n_trees: int = Field(100, ge=1)
    max_depth: int = Field(16, ge=0)
    min_leaf: int = Field(1, ge=1)
    # None means ceil(sqrt(n_features))
    max_features: int | None = Field(None, ge=1)
    bootstrap: bool = True


class RandomForest(Classifier):
    kind = ClassifierKind.RANDOM_FOREST
    hyper_model = ForestHyper

    def _fit(self, X, y):
        n, d = X.shape
        max_features = self.hyper.max_features or math.ceil(math.sqrt(d))
        self.trees: list[Tree] = []
        for t in range(self.hyper.n_trees):
            rng = nc.make_rng(derive_seed(self.seed, f"tree{t}"))
            rows = rng.integers(0, n, size=n) if self.hyper.bootstrap else None
            self.trees.append(
                build_tree(
                    X,
                    y,
                    self.hyper.max_depth,
                    self.hyper.min_leaf,
                    rng=rng,
                    max_features=min(max_features, d),
                    rows=rows,
                )
            )

    def _scores(self, X) -> Scores:
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)


class BoostingHyper(Hyper):
    n_trees: int = Field(100, ge=0)
    max_depth: int = Field(3, ge=0)
    min_leaf: int = Field(1, ge=1)
    shrinkage: float = Field(0.1, gt=0)


class GradientBoosting(Classifier):
    """
    Log-loss boosting. Each round fits a regression tree to the residuals
    y - p and sets every leaf to one Newton step sum(r) / sum(p (1 - p)).
    """

    kind = ClassifierKind.GRADIENT_BOOSTING
    hyper_model = BoostingHyper
    needs_both_classes = True

    def _fit(self, X, y):
        prior = float(y.mean())
        self.base_score = math.log(prior / (1.0 - prior))
        self.trees: list[Tree] = []
        F = np.full(X.shape[0], self.base_score)
        for _ in range(self.hyper.n_trees):
            p = expit(F)
            residual = y - p
            hessian = p * (1.0 - p)

            def newton(idx, residual=residual, hessian=hessian):
                h = hessian[idx].sum()
                return float(residual[idx].sum() / h) if h > NEWTON_EPS else 0.0

            tree = build_tree(X, residual, self.hyper.max_depth, self.hyper.min_leaf, leaf_fn=newton)
            self.trees.append(tree)
            F = F + self.hyper.shrinkage * tree.predict(X)

    def decision_function(self, X) -> np.ndarray:
        F = np.full(np.asarray(X).shape[0], self.base_score)
        for tree in self.trees:
            F = F + self.hyper.shrinkage * tree.predict(X)
        return F

    def _scores(self, X) -> Scores:
        return expit(self.decision_function(X))
