"""
CART on a sum-of-squares criterion.

For 0/1 targets the within-node sum of squares is n * p * (1 - p), i.e. half
the Gini impurity times n, so the same search grows classification trees and
the regression trees used by boosting. A split sends `x <= threshold` left;
the threshold is the lower of the two adjacent distinct sorted values, so
trees only ever compare against observed training values.
"""

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from pydantic import Field

from ucf.downstream.common import Classifier, ClassifierKind, Hyper, Scores

LeafFn = Callable[[npt.NDArray[np.int64]], float]

IMPROVEMENT_EPS = 1e-12


@dataclass
class Tree:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.value)

    @property
    def depth(self) -> int:
        depths = [0] * self.n_nodes
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[self.right[node]] = depths[node] + 1
        return max(depths)

    def predict(self, X) -> npt.NDArray[np.float64]:
        X = np.asarray(X, dtype=np.float64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            at = node[rows]
            go_left = X[rows, feature[at]] <= threshold[at]
            node[rows] = np.where(go_left, left[at], right[at])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]


def best_split(
    X: npt.NDArray[np.float64],
    target: npt.NDArray[np.float64],
    idx: npt.NDArray[np.int64],
    features: npt.NDArray[np.int64],
    min_leaf: int,
) -> tuple[int, float, float] | None:
    """
    Lowest (left SSE + right SSE) split of the rows `idx`.

    Features are scanned in ascending order and only a strictly better cost
    replaces the incumbent, so ties go to the lower feature index and, within
    a feature, to the lower threshold.

    Returns:
        (feature, threshold, cost) or None if no split leaves `min_leaf`
        rows on both sides.
    """
    n = idx.size
    if n < 2 * min_leaf:
        return None
    t = target[idx]
    total, total_sq = t.sum(), (t * t).sum()
    left_n = np.arange(1, n)
    best: tuple[int, float, float] | None = None
    for f in np.sort(features):
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs, ts = xs[order], t[order]
        csum = np.cumsum(ts)[:-1]
        csq = np.cumsum(ts * ts)[:-1]
        cost = (csq - csum * csum / left_n) + (
            (total_sq - csq) - (total - csum) ** 2 / (n - left_n)
        )
        valid = (xs[:-1] < xs[1:]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not valid.any():
            continue
        cost = np.where(valid, cost, np.inf)
        pos = int(np.argmin(cost))
        if best is None or cost[pos] < best[2]:
            best = (int(f), float(xs[pos]), float(cost[pos]))
    return best


def build_tree(
    X,
    target,
    max_depth: int,
    min_leaf: int,
    rng: np.random.Generator | None = None,
    max_features: int | None = None,
    leaf_fn: LeafFn | None = None,
    rows: npt.NDArray[np.int64] | None = None,
) -> Tree:
    """
    Grow a tree depth-first.

    Args:
        rng: feature sampler, used only when `max_features` is below the feature count.
        leaf_fn: value of a leaf from its row indices; defaults to the target mean.
        rows: training rows (a bootstrap sample may repeat rows); defaults to all.
    """
    X = np.asarray(X, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n_features = X.shape[1]
    if leaf_fn is None:
        leaf_fn = lambda idx: float(target[idx].mean())  # noqa: E731
    rows = np.arange(X.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)

    tree = Tree()
    root = tree.add_leaf(leaf_fn(rows))
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth:
            continue
        t = target[idx]
        node_sse = float(((t - t.mean()) ** 2).sum())
        if node_sse <= IMPROVEMENT_EPS:
            continue
        if max_features is not None and max_features < n_features:
            features = rng.choice(n_features, size=max_features, replace=False)
        else:
            features = np.arange(n_features)
        split = best_split(X, target, idx, features, min_leaf)
        if split is None or split[2] >= node_sse - IMPROVEMENT_EPS:
            continue
        f, threshold, _ = split
        go_left = X[idx, f] <= threshold
        left_idx, right_idx = idx[go_left], idx[~go_left]
        left = tree.add_leaf(leaf_fn(left_idx))
        right = tree.add_leaf(leaf_fn(right_idx))
        tree.feature[node], tree.threshold[node] = f, threshold
        tree.left[node], tree.right[node] = left, right
        # right pushed first so the left subtree is numbered first
        stack.append((right, right_idx, depth + 1))
        stack.append((left, left_idx, depth + 1))
    return tree


class TreeHyper(Hyper):
    max_depth: int = Field(8, ge=0)
    min_leaf: int = Field(5, ge=1)


class DecisionTree(Classifier):
    kind = ClassifierKind.DECISION_TREE
    hyper_model = TreeHyper

    def _fit(self, X, y):
        self.tree = build_tree(X, y, self.hyper.max_depth, self.hyper.min_leaf)

    def _scores(self, X) -> Scores:
        return self.tree.predict(X)
