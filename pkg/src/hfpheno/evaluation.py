"""Classification metrics, Youden thresholding, stratified CV, grid search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ._validation import check_scores_labels


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative, with
    ties counted one half (the rank-statistic formulation)."""
    scores, labels = check_scores_labels(scores, labels)
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores)
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive distinct scores, with sentinels below
    and above everything."""
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def youden_threshold(scores, labels) -> float:
    """Threshold maximizing sensitivity + specificity - 1.

    Prediction is positive when score > threshold.  Ties on the index
    break toward the lower threshold.
    """
    scores, labels = check_scores_labels(scores, labels)
    positives = labels == 1
    n_pos = positives.sum()
    n_neg = labels.size - n_pos
    best_threshold = -np.inf
    best_j = -np.inf
    for t in candidate_thresholds(scores):
        predicted = scores > t
        sens = float((predicted & positives).sum()) / n_pos
        spec = float((~predicted & ~positives).sum()) / n_neg
        j = sens + spec - 1.0
        if j > best_j:
            best_j = j
            best_threshold = float(t)
    return best_threshold


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    precision: float
    recall: float
    f1: float
    threshold: float
    per_class: dict[str, dict[str, float]]


def _prf(predicted: np.ndarray, actual: np.ndarray) -> tuple[float, float, float]:
    tp = float((predicted & actual).sum())
    fp = float((predicted & ~actual).sum())
    fn = float((~predicted & actual).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def classification_report(scores, labels, threshold: Optional[float] = None) -> MetricsReport:
    """AUC plus precision/recall/F1 at the Youden threshold (or a given one),
    with a per-class breakdown."""
    scores, labels = check_scores_labels(scores, labels)
    if threshold is None:
        threshold = youden_threshold(scores, labels)
    positives = labels == 1
    predicted = scores > threshold
    precision, recall, f1 = _prf(predicted, positives)
    neg_p, neg_r, neg_f1 = _prf(~predicted, ~positives)
    return MetricsReport(
        auc=roc_auc(scores, labels),
        precision=precision,
        recall=recall,
        f1=f1,
        threshold=float(threshold),
        per_class={
            "positive": {"precision": precision, "recall": recall, "f1": f1},
            "negative": {"precision": neg_p, "recall": neg_r, "f1": neg_f1},
        },
    )


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict[str, int]
    seed: int

    def indices(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.assignments[i] for i in ids])


def stratified_folds(labels, k: int, seed: int, ids: Optional[Sequence[str]] = None) -> FoldPlan:
    """Deal each class round-robin into k folds after a seeded shuffle, so
    per-fold class proportions stay within one case of the global ones."""
    labels = np.asarray(labels)
    if ids is None:
        ids = [str(i) for i in range(labels.size)]
    if len(ids) != labels.size:
        raise ValueError("ids and labels have mismatched lengths")
    rng = np.random.default_rng(seed)
    assignments: dict[str, int] = {}
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise ValueError(
                f"class {cls!r} has {members.size} cases, fewer than k={k} folds"
            )
        order = rng.permutation(members)
        for position, index in enumerate(order):
            assignments[ids[index]] = position % k
    return FoldPlan(k=k, assignments=assignments, seed=seed)


@dataclass
class GridPoint:
    params: dict
    mean: Optional[float]
    std: Optional[float]
    fold_scores: list[float] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None


@dataclass
class GridSearchResult:
    best_params: dict
    best_mean: float
    points: list[GridPoint]

    def as_table(self) -> str:
        keys = sorted({k for p in self.points for k in p.params})
        lines = ["\t".join(keys + ["mean", "std", "status"])]
        for point in self.points:
            row = [repr(point.params.get(k)) for k in keys]
            if point.failed:
                row += ["-", "-", f"failed: {point.error}"]
            else:
                row += [f"{point.mean:.6f}", f"{point.std:.6f}", "ok"]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def expand_grid(grid: Mapping[str, Sequence]) -> list[dict]:
    """All lattice points, in the declaration order of keys and values."""
    keys = list(grid)
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        points.append(dict(zip(keys, combo)))
    return points


def grid_search(
    fit_and_score: Callable[[dict, np.ndarray, np.ndarray], float],
    grid: Mapping[str, Sequence],
    fold_plan: FoldPlan,
    ids: Sequence[str],
) -> GridSearchResult:
    """Evaluate every lattice point by k-fold CV of fit_and_score.

    fit_and_score(params, train_indices, test_indices) returns the
    selection metric on the held-out fold.  Failing points are recorded and
    excluded from the argmax; ties break to the earlier lattice point.
    """
    if not grid or any(len(values) == 0 for values in grid.values()):
        raise ValueError("grid is empty")
    points_params = expand_grid(grid)
    fold_of = fold_plan.indices(ids)
    points: list[GridPoint] = []
    for params in points_params:
        fold_scores: list[float] = []
        error: Optional[str] = None
        for fold in range(fold_plan.k):
            train_idx = np.flatnonzero(fold_of != fold)
            test_idx = np.flatnonzero(fold_of == fold)
            try:
                fold_scores.append(float(fit_and_score(params, train_idx, test_idx)))
            except Exception as exc:  # noqa: BLE001 - surfaced in the report
                error = f"fold {fold}: {exc}"
                break
        if error is not None:
            points.append(GridPoint(params=params, mean=None, std=None, failed=True, error=error))
        else:
            arr = np.array(fold_scores)
            std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            points.append(
                GridPoint(params=params, mean=float(arr.mean()), std=std, fold_scores=fold_scores)
            )
    viable = [p for p in points if not p.failed]
    if not viable:
        raise RuntimeError("every grid point failed")
    best = max(viable, key=lambda p: p.mean)  # max() keeps the first of ties
    return GridSearchResult(best_params=best.params, best_mean=best.mean, points=points)
