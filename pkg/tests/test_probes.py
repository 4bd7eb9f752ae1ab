import numpy as np
import pytest

from csmspec.errors import DivergenceError
from csmspec.probes import (
    GiniTreeClassifier,
    PolyLogisticClassifier,
    degree2_feature_names,
    expand_degree2,
    logistic_loss_and_grad,
    stratified_split,
    train_polylogistic,
    train_tree,
)


def exhaustive_root_split_oracle(X, y):
    """Independent loop implementation of the best Gini split at the root."""
    n = len(y)
    classes = np.unique(y)

    def gini(labels):
        if labels.size == 0:
            return 0.0
        p = np.array([(labels == c).mean() for c in classes])
        return 1.0 - np.sum(p**2)

    parent = gini(y)
    best = (0.0, None, None)
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = 0.5 * (lo + hi)
            mask = X[:, f] <= thr
            gain = parent - mask.mean() * gini(y[mask]) - (~mask).mean() * gini(y[~mask])
            if gain > best[0] + 1e-12:
                best = (gain, f, thr)
    return best


class TestGiniTree:
    def test_one_dimensional_indicator_is_learned_exactly(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (120, 1))
        y = (X[:, 0] > 0).astype(int)
        for depth in (1, 2):
            model = GiniTreeClassifier(max_depth=depth).fit(X, y)
            assert np.mean(model.predict(X) == y) == 1.0

    def test_xor_sample_root_split_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-1, 1, (200, 2))
        y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
        model = GiniTreeClassifier(max_depth=2).fit(X, y)
        _, feat, thr = exhaustive_root_split_oracle(X, y)
        assert model.tree_.feature == feat
        assert model.tree_.threshold == pytest.approx(thr, abs=1e-12)
        acc = np.mean(model.predict(X) == y)
        assert 0.5 < acc < 1.0  # axis splits cannot solve XOR exactly at this sample

    def test_depth_limit_is_respected(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, (100, 3))
        y = rng.integers(0, 3, 100)
        model = GiniTreeClassifier(max_depth=2).fit(X, y)

        def depth(node):
            if node.is_leaf():
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        assert depth(model.tree_) <= 2

    def test_describe_lists_splits(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        model = GiniTreeClassifier(max_depth=1).fit(X, y)
        text = model.describe()
        assert "x0 <= 1.5" in text
        assert "leaf" in text


class TestPolyLogistic:
    def test_expansion_includes_bias_linear_and_cross_terms(self):
        X = np.array([[2.0, 3.0]])
        Phi = expand_degree2(X)
        assert Phi.shape == (1, 6)
        assert np.allclose(Phi[0], [1.0, 2.0, 3.0, 4.0, 6.0, 9.0])
        assert degree2_feature_names(2) == ["1", "x0", "x1", "x0*x0", "x0*x1", "x1*x1"]

    def test_separable_blobs_match_nearest_center_oracle(self):
        rng = np.random.default_rng(3)
        centers = np.array([[0.0, 0.0], [5.0, 5.0]])
        X = np.vstack([c + 0.2 * rng.standard_normal((60, 2)) for c in centers])
        y = np.repeat([0, 1], 60)
        dists = np.linalg.norm(X[:, None, :] - centers[None], axis=2)
        oracle_acc = np.mean(np.argmin(dists, axis=1) == y)  # ~1.0 by construction
        model = PolyLogisticClassifier(max_iter=200).fit(X, y)
        acc = np.mean(model.predict(X) == y)
        assert acc >= oracle_acc - 0.01
        assert acc >= 0.99

    def test_concentric_circles_become_separable(self):
        rng = np.random.default_rng(4)
        n = 150
        theta = rng.uniform(0, 2 * np.pi, 2 * n)
        radius = np.concatenate([rng.uniform(0.0, 0.8, n), rng.uniform(1.4, 2.0, n)])
        X = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        y = np.repeat([0, 1], n)
        # radius-threshold oracle is exact by construction
        assert np.mean((radius > 1.1).astype(int) == y) == 1.0
        model = PolyLogisticClassifier(max_iter=400).fit(X, y)
        assert np.mean(model.predict(X) == y) >= 0.95

    def test_zero_iterations_predicts_majority_class(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((90, 2))
        y = np.array([0] * 60 + [1] * 30)
        model = PolyLogisticClassifier(max_iter=0).fit(X, y)
        assert np.all(model.predict(X) == 0)
        assert np.mean(model.predict(X) == y) == pytest.approx(60 / 90)

    def test_divergence_guard(self):
        rng = np.random.default_rng(6)
        X = 5.0 * rng.standard_normal((60, 2))
        y = rng.integers(0, 2, 60)
        with pytest.raises(DivergenceError, match="learning rate too high"):
            PolyLogisticClassifier(learning_rate=2000.0, max_iter=200).fit(X, y)

    def test_gradient_matches_central_differences(self):
        # 20 random parameter points, relative error <= 1e-5.
        rng = np.random.default_rng(7)
        n, f, c = 25, 6, 3
        Phi = rng.standard_normal((n, f))
        y_idx = rng.integers(0, c, n)
        h = 1e-6
        for _ in range(20):
            W = rng.standard_normal((f, c))
            _, grad = logistic_loss_and_grad(W, Phi, y_idx, l2=0.01)
            i, j = rng.integers(0, f), rng.integers(0, c)
            Wp, Wm = W.copy(), W.copy()
            Wp[i, j] += h
            Wm[i, j] -= h
            lp, _ = logistic_loss_and_grad(Wp, Phi, y_idx, l2=0.01)
            lm, _ = logistic_loss_and_grad(Wm, Phi, y_idx, l2=0.01)
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(grad[i, j]), 1e-12)
            assert abs(grad[i, j] - fd) / denom <= 1e-5

    def test_determinism(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((80, 3))
        y = rng.integers(0, 3, 80)
        a = PolyLogisticClassifier(max_iter=50).fit(X, y)
        b = PolyLogisticClassifier(max_iter=50).fit(X, y)
        assert np.array_equal(a.coef_, b.coef_)


class TestTrainWrappers:
    def test_stratified_split_partitions_and_respects_fraction(self):
        y = np.array([0] * 50 + [1] * 30 + [2] * 20)
        tr, te = stratified_split(y, 0.7, seed=0)
        assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(100))
        for c, total in ((0, 50), (1, 30), (2, 20)):
            in_train = np.sum(y[tr] == c)
            assert in_train == round(0.7 * total)

    def test_train_tree_report(self):
        rng = np.random.default_rng(9)
        X = rng.uniform(-1, 1, (200, 1))
        y = (X[:, 0] > 0).astype(int)
        report = train_tree(X, y, seed=1)
        assert report.kind == "tree-depth2"
        assert report.train_accuracy == 1.0
        assert report.holdout_accuracy == 1.0
        assert not report.degenerate

    def test_single_class_degenerate(self):
        X = np.zeros((10, 2))
        y = np.zeros(10, dtype=int)
        for fn in (train_tree, train_polylogistic):
            report = fn(X, y, seed=0)
            assert report.degenerate
            assert report.holdout_accuracy == 1.0

    def test_all_singleton_classes_report_train_side(self):
        # every class has one sample: the split keeps them all for training
        X = np.arange(8, dtype=float).reshape(4, 2)
        y = np.arange(4)
        report = train_tree(X, y, seed=0)
        assert np.isfinite(report.holdout_accuracy)

    def test_train_polylogistic_on_separated_mixture(self):
        rng = np.random.default_rng(10)
        centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
        X = np.vstack([c + 0.15 * rng.standard_normal((50, 2)) for c in centers])
        y = np.repeat([0, 1, 2], 50)
        report = train_polylogistic(X, y, seed=2)
        assert report.holdout_accuracy >= 0.95
        assert "classes" in report.description
