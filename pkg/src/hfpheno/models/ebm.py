"""Cyclic per-feature boosting of binned shape functions (an additive,
glass-box classifier).

Each micro-step fits a depth-1 regression stump on one feature's histogram
bins to the current log-odds gradient and adds it scaled by the learning
rate; features are visited round-robin.  Predictions are
logistic(intercept + sum of per-feature shape contributions).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .._validation import check_array, check_binary_target, check_is_fitted
from .linear import logistic


def equal_frequency_edges(values: np.ndarray, bins: int) -> np.ndarray:
    """Interior cut points from quantiles; duplicates collapse so constant
    or low-cardinality features get fewer bins."""
    quantiles = np.quantile(values, np.linspace(0, 1, bins + 1)[1:-1])
    return np.unique(quantiles)


def bin_indices(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, values, side="left")


class CyclicGamClassifier(BaseEstimator, ClassifierMixin):
    """Additive model of per-feature step functions trained by cyclic boosting.

    After fitting, every shape function has (weighted) mean zero over the
    training data, with the removed means folded into the intercept.
    """

    def __init__(self, learning_rate: float = 5e-2, rounds: int = 5000, bins: int = 64,
                 seed: int = 0):
        self.learning_rate = learning_rate
        self.rounds = rounds
        self.bins = bins
        self.seed = seed
        self.intercept_: float | None = None
        self.edges_: list[np.ndarray] | None = None
        self.shapes_: list[np.ndarray] | None = None
        self.train_loss_per_cycle_: list[float] | None = None

    def fit(self, X, y) -> "CyclicGamClassifier":
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        X = check_array(X)
        y = check_binary_target(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have mismatched lengths")
        n, d = X.shape
        base = float(np.mean(y))
        intercept = float(np.log(base / (1 - base)))
        edges = [equal_frequency_edges(X[:, j], self.bins) for j in range(d)]
        assignments = [bin_indices(X[:, j], edges[j]) for j in range(d)]
        shapes = [np.zeros(len(edges[j]) + 1) for j in range(d)]
        scores = np.full(n, intercept)

        losses: list[float] = []

        def log_loss() -> float:
            p = logistic(scores)
            eps = 1e-15
            return -float(np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))

        losses.append(log_loss())
        for step in range(self.rounds):
            j = step % d
            residual = y - logistic(scores)
            bins_j = assignments[j]
            n_bins = shapes[j].shape[0]
            sums = np.bincount(bins_j, weights=residual, minlength=n_bins)
            counts = np.bincount(bins_j, minlength=n_bins)
            stump = np.zeros(n_bins)
            occupied = counts > 0
            stump[occupied] = sums[occupied] / counts[occupied]
            shapes[j] += self.learning_rate * stump
            scores += self.learning_rate * stump[bins_j]
            if (step + 1) % d == 0:
                losses.append(log_loss())

        # Center each shape over the training data; predictions unchanged.
        for j in range(d):
            counts = np.bincount(assignments[j], minlength=shapes[j].shape[0])
            mean = float(shapes[j] @ counts) / n
            shapes[j] -= mean
            intercept += mean

        self.intercept_ = intercept
        self.edges_ = edges
        self.shapes_ = shapes
        self.train_loss_per_cycle_ = losses
        return self

    def _contributions(self, X: np.ndarray) -> np.ndarray:
        contribs = np.zeros_like(X)
        for j in range(X.shape[1]):
            contribs[:, j] = self.shapes_[j][bin_indices(X[:, j], self.edges_[j])]
        return contribs

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "shapes_")
        X = check_array(X)
        if X.shape[1] != len(self.shapes_):
            raise ValueError("feature count differs from fit")
        return self.intercept_ + self._contributions(X).sum(axis=1)

    def feature_contribution(self, j: int, values: np.ndarray) -> np.ndarray:
        """Shape-function output for feature j at the given raw values."""
        check_is_fitted(self, "shapes_")
        values = np.asarray(values, dtype=np.float64)
        return self.shapes_[j][bin_indices(values, self.edges_[j])]

    def predict_proba(self, X) -> np.ndarray:
        return logistic(self.decision_function(X))

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)
