"""Logical-tameness probes: a depth-2 Gini tree and a degree-2 polynomial
logistic regression, both written here rather than imported. High held-out
accuracy from these low-capacity models is the working proxy for definable
basin boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import DivergenceError
from .seeding import STAGE_SPLIT, child_rng
from .validation import as_labels, as_points

MIN_GAIN = 1e-12


@dataclass
class ClassifierReport:
    kind: str
    train_accuracy: float
    holdout_accuracy: float
    description: str
    degenerate: bool = False


# ---------------------------------------------------------------------------
# Depth-limited CART with Gini impurity


@dataclass
class _Node:
    prediction: int
    n_samples: int
    impurity: float
    feature: int | None = None
    threshold: float | None = None
    left: "_Node | None" = None
    right: "_Node | None" = None

    def is_leaf(self) -> bool:
        return self.feature is None


def _gini_from_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p**2))


def _best_split(X: np.ndarray, y_idx: np.ndarray, n_classes: int):
    """Exhaustive search over midpoints of sorted unique feature values.

    Returns (gain, feature, threshold) with deterministic ties: features are
    scanned in ascending index order and thresholds in ascending value order,
    and only strictly larger gains replace the incumbent.
    """
    n = X.shape[0]
    total = np.bincount(y_idx, minlength=n_classes).astype(float)
    parent = _gini_from_counts(total)
    best = (0.0, None, None)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y_idx[order]
        change = np.flatnonzero(xs[:-1] != xs[1:])
        if change.size == 0:
            continue
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        cum = np.cumsum(onehot, axis=0)
        left_counts = cum[change]
        right_counts = total - left_counts
        n_left = (change + 1).astype(float)
        n_right = n - n_left
        gini_left = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
        gains = parent - (n_left / n) * gini_left - (n_right / n) * gini_right
        pos = int(np.argmax(gains))
        if gains[pos] > best[0] + MIN_GAIN or (best[1] is None and gains[pos] > MIN_GAIN):
            thr = 0.5 * (xs[change[pos]] + xs[change[pos] + 1])
            best = (float(gains[pos]), f, float(thr))
    return best


class GiniTreeClassifier(BaseEstimator, ClassifierMixin):
    """Greedy binary CART, Gini impurity, depth capped at ``max_depth``.

    Splits search every midpoint of sorted unique feature values; leaves
    predict the majority class (smallest class index on ties). Deterministic
    given the data.
    """

    def __init__(self, max_depth: int = 2):
        self.max_depth = max_depth

    def fit(self, X, y):
        X = as_points(X, "features")
        y = as_labels(y, n=X.shape[0])
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        self.tree_ = self._grow(X, y_idx, depth=0)
        return self

    def _grow(self, X, y_idx, depth) -> _Node:
        counts = np.bincount(y_idx, minlength=self.classes_.size).astype(float)
        node = _Node(
            prediction=int(np.argmax(counts)),
            n_samples=X.shape[0],
            impurity=_gini_from_counts(counts),
        )
        if depth >= self.max_depth or np.unique(y_idx).size <= 1:
            return node
        gain, feature, threshold = _best_split(X, y_idx, self.classes_.size)
        if feature is None or gain <= MIN_GAIN:
            return node
        mask = X[:, feature] <= threshold
        node.feature = feature
        node.threshold = threshold
        node.left = self._grow(X[mask], y_idx[mask], depth + 1)
        node.right = self._grow(X[~mask], y_idx[~mask], depth + 1)
        return node

    def predict(self, X):
        X = as_points(X, "features")
        out = np.empty(X.shape[0], dtype=int)
        for i, row in enumerate(X):
            node = self.tree_
            while not node.is_leaf():
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.prediction
        return self.classes_[out]

    def describe(self) -> str:
        lines: list = []

        def walk(node: _Node, indent: int):
            pad = "  " * indent
            if node.is_leaf():
                lines.append(
                    f"{pad}leaf -> class {self.classes_[node.prediction]} "
                    f"(n={node.n_samples}, gini={node.impurity:.4f})"
                )
            else:
                lines.append(f"{pad}x{node.feature} <= {node.threshold:.6g}")
                walk(node.left, indent + 1)
                walk(node.right, indent + 1)

        walk(self.tree_, 0)
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Degree-2 polynomial multinomial logistic regression


def expand_degree2(X: np.ndarray) -> np.ndarray:
    """All monomials of total degree <= 2: bias, x_i, x_i x_j (i <= j)."""
    X = as_points(X, "features")
    n, d = X.shape
    cols = [np.ones((n, 1)), X]
    cols += [(X[:, i] * X[:, j])[:, None] for i in range(d) for j in range(i, d)]
    return np.hstack(cols)


def degree2_feature_names(d: int) -> list:
    names = ["1"] + [f"x{i}" for i in range(d)]
    names += [f"x{i}*x{j}" for i in range(d) for j in range(i, d)]
    return names


def logistic_loss_and_grad(W: np.ndarray, Phi: np.ndarray, y_idx: np.ndarray, l2: float):
    """Mean cross-entropy with L2 on the non-bias rows, and its gradient.

    W is (features, classes); row 0 multiplies the bias column and is not
    penalized.
    """
    n = Phi.shape[0]
    Z = Phi @ W
    Z = Z - Z.max(axis=1, keepdims=True)
    expz = np.exp(Z)
    p = expz / expz.sum(axis=1, keepdims=True)
    nll = -np.mean(np.log(p[np.arange(n), y_idx] + 1e-300))
    penalty_mask = np.ones_like(W)
    penalty_mask[0] = 0.0
    loss = nll + 0.5 * l2 * np.sum((penalty_mask * W) ** 2)
    Y = np.zeros_like(p)
    Y[np.arange(n), y_idx] = 1.0
    grad = Phi.T @ (p - Y) / n + l2 * penalty_mask * W
    return loss, grad


class PolyLogisticClassifier(BaseEstimator, ClassifierMixin):
    """Multinomial logistic regression on degree-2 polynomial features.

    Features are expanded to all monomials of total degree <= 2, columns
    standardized (bias excluded), and the weights trained by full-batch
    gradient descent with an L2 penalty. The bias row starts at the log
    class priors, so the untrained model predicts the majority class.
    Raises DivergenceError after 10 consecutive loss increases.
    """

    def __init__(
        self,
        degree: int = 2,
        l2: float = 1e-3,
        learning_rate: float = 0.5,
        max_iter: int = 300,
    ):
        self.degree = degree
        self.l2 = l2
        self.learning_rate = learning_rate
        self.max_iter = max_iter

    def _features(self, X: np.ndarray) -> np.ndarray:
        if self.degree == 2:
            return expand_degree2(X)
        if self.degree == 1:
            return np.hstack([np.ones((X.shape[0], 1)), X])
        raise ValueError("degree must be 1 or 2")

    def fit(self, X, y):
        X = as_points(X, "features")
        y = as_labels(y, n=X.shape[0])
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        Phi = self._features(X)
        self.mean_ = Phi.mean(axis=0)
        self.scale_ = Phi.std(axis=0)
        self.mean_[0] = 0.0
        self.scale_[0] = 1.0
        self.scale_[self.scale_ == 0] = 1.0
        Phi = (Phi - self.mean_) / self.scale_

        n_classes = self.classes_.size
        priors = np.bincount(y_idx, minlength=n_classes) / y_idx.size
        W = np.zeros((Phi.shape[1], n_classes))
        W[0] = np.log(priors + 1e-300)

        losses = []
        rising = 0
        for _ in range(self.max_iter):
            loss, grad = logistic_loss_and_grad(W, Phi, y_idx, self.l2)
            if losses and loss > losses[-1]:
                rising += 1
                if rising >= 10:
                    raise DivergenceError("learning rate too high: loss rose 10 steps in a row")
            else:
                rising = 0
            losses.append(loss)
            W = W - self.learning_rate * grad
        self.coef_ = W
        self.loss_curve_ = np.array(losses)
        return self

    def predict_proba(self, X):
        Phi = (self._features(as_points(X, "features")) - self.mean_) / self.scale_
        Z = Phi @ self.coef_
        Z = Z - Z.max(axis=1, keepdims=True)
        expz = np.exp(Z)
        return expz / expz.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


# ---------------------------------------------------------------------------
# Train/report wrappers with the shared stratified split


def stratified_split(y: np.ndarray, train_fraction: float, seed: int):
    """Per-class shuffled split; singleton classes stay in the training side."""
    rng = child_rng(seed, STAGE_SPLIT)
    train_idx, test_idx = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        n_train = max(1, int(round(train_fraction * idx.size)))
        if n_train == idx.size and idx.size > 1:
            n_train -= 1
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def _accuracy(model, X, y) -> float:
    return float(np.mean(model.predict(X) == y))


def _holdout_accuracy(model, X, y, test_idx, train_acc: float) -> float:
    # every class a singleton leaves no holdout rows; report the train side
    if test_idx.size == 0:
        return train_acc
    return _accuracy(model, X[test_idx], y[test_idx])


def _degenerate_report(kind: str, y: np.ndarray) -> ClassifierReport:
    only = int(np.unique(y)[0])
    return ClassifierReport(
        kind=kind,
        train_accuracy=1.0,
        holdout_accuracy=1.0,
        description=f"degenerate: single class {only}",
        degenerate=True,
    )


def train_tree(
    features,
    labels,
    max_depth: int = 2,
    split_fraction: float = 0.7,
    seed: int = 0,
) -> ClassifierReport:
    """Fit the depth-limited Gini tree on a stratified split and report.

    ``labels`` may be a BasinLabeling or a plain integer array.
    """
    X = as_points(features, "features")
    y = as_labels(getattr(labels, "labels", labels), n=X.shape[0])
    if np.unique(y).size < 2:
        return _degenerate_report("tree-depth2", y)
    tr, te = stratified_split(y, split_fraction, seed)
    model = GiniTreeClassifier(max_depth=max_depth).fit(X[tr], y[tr])
    train_acc = _accuracy(model, X[tr], y[tr])
    return ClassifierReport(
        kind="tree-depth2",
        train_accuracy=train_acc,
        holdout_accuracy=_holdout_accuracy(model, X, y, te, train_acc),
        description=model.describe(),
    )


def train_polylogistic(
    features,
    labels,
    degree: int = 2,
    l2: float = 1e-3,
    iters: int = 300,
    lr: float = 0.5,
    split_fraction: float = 0.7,
    seed: int = 0,
) -> ClassifierReport:
    """Fit the polynomial logistic probe on a stratified split and report."""
    X = as_points(features, "features")
    y = as_labels(getattr(labels, "labels", labels), n=X.shape[0])
    if np.unique(y).size < 2:
        return _degenerate_report("polylogistic-deg2", y)
    tr, te = stratified_split(y, split_fraction, seed)
    model = PolyLogisticClassifier(
        degree=degree, l2=l2, learning_rate=lr, max_iter=iters
    ).fit(X[tr], y[tr])
    description = (
        f"{len(degree2_feature_names(X.shape[1])) if degree == 2 else X.shape[1] + 1} features, "
        f"{model.classes_.size} classes, final loss {model.loss_curve_[-1]:.6f}"
    )
    train_acc = _accuracy(model, X[tr], y[tr])
    return ClassifierReport(
        kind="polylogistic-deg2",
        train_accuracy=train_acc,
        holdout_accuracy=_holdout_accuracy(model, X, y, te, train_acc),
        description=description,
    )
