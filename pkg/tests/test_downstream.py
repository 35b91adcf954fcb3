import numpy as np
import pytest
from scipy.stats import norm

from ucf import numcore as nc
from ucf.downstream import ALL_KINDS, CLASSIFIER_HUB, ClassifierKind, fit, fit_many, make_classifier, predict
from ucf.downstream.trees import best_split, build_tree
from ucf.errors import ConfigError, ShapeError, UnfittableError

STOCHASTIC = ["random-forest", "gradient-boosting", "linear-svm"]
TREE_KINDS = ["decision-tree", "random-forest", "gradient-boosting"]


def two_clusters(n: int, delta: float, seed: int, d: int = 2, scale: float = 1.0):
    rng = nc.make_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1, -1)
    direction = np.ones(d) / np.sqrt(d)
    X = rng.normal(scale=scale, size=(n, d)) + np.outer(y * delta / 2, direction)
    return X, y


def fast_hyper(kind: str) -> dict:
    if kind in ("random-forest", "gradient-boosting"):
        return {"n_trees": 10}
    return {}


def test_every_kind_registered():
    assert set(CLASSIFIER_HUB) == set(ALL_KINDS)
    assert len(ALL_KINDS) == 7


class TestFit:
    def test_unknown_hyper_key(self):
        with pytest.raises(ConfigError):
            make_classifier("knn", {"neighbours": 3})

    def test_separable_logistic_regression(self):
        X, y = two_clusters(100, delta=6.0, seed=0, scale=0.3)
        model = fit("logistic-regression", X, y)
        assert np.all(predict(model, X) == y)

    def test_one_nearest_neighbour_memorises(self):
        X, y = two_clusters(60, delta=0.5, seed=1)
        model = fit("knn", X, y, hyper={"k": 1})
        assert np.array_equal(model.predict(X), y)

    def test_naive_bayes_reaches_bayes_rate(self):
        rng = nc.make_rng(2)

        def draw(n):
            y = np.where(rng.random(n) < 0.5, 1, -1)
            X = rng.normal(size=(n, 2)) + np.outer(y, [1.0, 0.0])
            return X, y

        X, y = draw(10_000)
        X_test, y_test = draw(10_000)
        model = fit("gaussian-nb", X, y)
        accuracy = float(np.mean(model.predict(X_test) == y_test))
        assert abs(accuracy - norm.cdf(1.0)) < 0.02

    @pytest.mark.parametrize("kind", ["logistic-regression", "linear-svm", "gradient-boosting"])
    def test_single_class_is_unfittable(self, kind):
        X = nc.make_rng(3).normal(size=(10, 2))
        with pytest.raises(UnfittableError):
            fit(kind, X, np.ones(10, dtype=int))

    def test_knn_needs_k_samples(self):
        with pytest.raises(UnfittableError):
            fit("knn", np.zeros((4, 2)) + np.arange(4)[:, None], [1, -1, 1, -1])

    def test_labels_must_be_signed(self):
        with pytest.raises(ShapeError):
            fit("gaussian-nb", np.eye(3), [0, 1, 1])

    def test_fit_many_keeps_order(self):
        X, y = two_clusters(40, delta=3.0, seed=4)
        kinds = ["knn", "gaussian-nb", "decision-tree"]
        models = fit_many(kinds, X, y, seeds={k: 0 for k in kinds})
        assert [m.kind.value for m in models] == kinds


class TestPredictProba:
    @pytest.mark.parametrize("kind", [k.value for k in ClassifierKind])
    def test_scores_in_unit_interval(self, kind):
        X, y = two_clusters(80, delta=1.5, seed=5, d=3)
        model = fit(kind, X, y, seed=1, hyper=fast_hyper(kind))
        scores = model.predict_proba(nc.make_rng(6).normal(scale=3.0, size=(50, 3)))
        assert scores.shape == (50,)
        assert np.all((scores >= 0.0) & (scores <= 1.0))
        np.testing.assert_allclose(scores + (1.0 - scores), 1.0, atol=1e-12)

    @pytest.mark.parametrize("kind", [k.value for k in ClassifierKind])
    def test_dimension_mismatch(self, kind):
        X, y = two_clusters(40, delta=2.0, seed=7)
        model = fit(kind, X, y, hyper=fast_hyper(kind))
        with pytest.raises(ShapeError):
            model.predict_proba(np.zeros((3, 5)))

    def test_naive_bayes_symmetric_midpoint(self):
        model = fit("gaussian-nb", [[-1.0], [-3.0], [1.0], [3.0]], [-1, -1, 1, 1])
        assert model.predict_proba([[0.0]])[0] == 0.5
        # ties go positive
        assert model.predict([[0.0]])[0] == 1

    def test_naive_bayes_single_class(self):
        model = fit("gaussian-nb", [[0.0], [1.0]], [-1, -1])
        assert np.all(model.predict_proba([[0.5], [9.0]]) == 0.0)

    def test_knn_counts_neighbours(self):
        X = [[0.1], [0.2], [-0.1], [-0.2], [0.3], [5.0], [6.0], [7.0]]
        y = [1, 1, 1, 1, -1, -1, -1, -1]
        model = fit("knn", X, y)
        assert model.predict_proba([[0.0]])[0] == pytest.approx(0.8)

    def test_knn_distance_ties_prefer_lower_index(self):
        model = fit("knn", [[1.0], [-1.0], [3.0]], [1, -1, -1], hyper={"k": 1})
        assert model.neighbors(np.array([[0.0]]))[0, 0] == 0

    def test_forest_of_identical_trees(self):
        X, y = two_clusters(60, delta=1.0, seed=8, d=3)
        forest = fit(
            "random-forest",
            X,
            y,
            hyper={"n_trees": 4, "max_depth": 8, "min_leaf": 5, "max_features": 3, "bootstrap": False},
        )
        tree = fit("decision-tree", X, y)
        X_test = nc.make_rng(9).normal(size=(30, 3))
        np.testing.assert_allclose(forest.predict_proba(X_test), tree.predict_proba(X_test), atol=1e-12)

    def test_boosting_without_trees_predicts_prior(self):
        X = nc.make_rng(10).normal(size=(4, 2))
        model = fit("gradient-boosting", X, [1, 1, 1, -1], hyper={"n_trees": 0})
        np.testing.assert_allclose(model.predict_proba(nc.make_rng(11).normal(size=(5, 2))), 0.75)


class TestPredict:
    def test_threshold_brackets(self):
        X, y = two_clusters(40, delta=2.0, seed=12)
        model = fit("logistic-regression", X, y)
        assert np.all(model.predict(X, threshold=0.0) == 1)
        assert np.all(model.predict(X, threshold=1.01) == -1)

    def test_certain_scores(self):
        model = fit("knn", [[0.0], [0.1], [0.2], [0.3], [0.4]], [1, 1, 1, 1, 1])
        assert np.all(model.predict([[0.05], [9.0]]) == 1)


class TestInvariants:
    @pytest.mark.parametrize("kind", STOCHASTIC)
    def test_seed_determinism(self, kind):
        X, y = two_clusters(80, delta=1.0, seed=13, d=3)
        X_test = nc.make_rng(14).normal(size=(20, 3))
        a = fit(kind, X, y, seed=21, hyper=fast_hyper(kind)).predict_proba(X_test)
        b = fit(kind, X, y, seed=21, hyper=fast_hyper(kind)).predict_proba(X_test)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind", TREE_KINDS)
    def test_monotone_transform_invariance(self, kind):
        X, y = two_clusters(80, delta=1.0, seed=15, d=3)
        X_test = nc.make_rng(16).normal(size=(30, 3))
        plain = fit(kind, X, y, seed=2, hyper=fast_hyper(kind)).predict_proba(X_test)
        warped = fit(kind, np.exp(X), y, seed=2, hyper=fast_hyper(kind)).predict_proba(np.exp(X_test))
        assert np.array_equal(plain, warped)

    def test_knn_duplicates_of_predicted_class(self):
        X, y = two_clusters(40, delta=1.0, seed=17)
        queries = nc.make_rng(18).normal(size=(10, 2))
        base = fit("knn", X, y).predict(queries)
        for q, label in zip(queries, base):
            extra = X[y == label]
            grown = fit("knn", np.vstack([X, extra]), np.concatenate([y, np.full(len(extra), label)]))
            assert grown.predict(q[None, :])[0] == label


class TestTrees:
    def test_split_ties_prefer_lower_feature_and_threshold(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        split = best_split(X, np.array([0.0, 0.0, 1.0, 1.0]), np.arange(4), np.array([1, 0]), min_leaf=1)
        assert split[:2] == (0, 1.0)
        assert split[2] == 0.0

    def test_no_split_below_min_leaf(self):
        X = np.arange(6, dtype=float)[:, None]
        assert best_split(X, np.array([0, 0, 0, 1, 1, 1.0]), np.arange(6), np.array([0]), min_leaf=4) is None

    def test_depth_and_leaf_size(self):
        X, y = two_clusters(200, delta=0.5, seed=19, d=3)
        tree = build_tree(X, (y == 1).astype(float), max_depth=4, min_leaf=5)
        assert tree.depth <= 4
        leaves = tree.predict(X)
        assert np.all((leaves >= 0) & (leaves <= 1))

    def test_pure_node_is_leaf(self):
        tree = build_tree(np.arange(10.0)[:, None], np.ones(10), max_depth=5, min_leaf=1)
        assert tree.n_nodes == 1
