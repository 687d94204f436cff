"""Input validation helpers shared by the estimators and metric functions."""

from __future__ import annotations

import numpy as np


def check_array(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-d float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_binary_target(y, name: str = "y") -> np.ndarray:
    """Coerce to a 0/1 vector and require both classes to be present."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0, 1))):
        raise ValueError(f"{name} must contain only 0 and 1, got {classes}")
    if classes.size < 2:
        raise ValueError(f"{name} contains a single class; need both 0 and 1")
    return y.astype(np.float64)


def check_is_fitted(estimator, attribute: str) -> None:
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


def check_scores_labels(scores, labels):
    """Validate paired score/label vectors for ranking metrics."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    labels = check_binary_target(labels, "labels")
    return scores, labels
