import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfpheno.evaluation import (
    candidate_thresholds,
    classification_report,
    expand_grid,
    grid_search,
    roc_auc,
    stratified_folds,
    youden_threshold,
)


def auc_pair_count(scores, labels):
    positives = [s for s, label in zip(scores, labels) if label == 1]
    negatives = [s for s, label in zip(scores, labels) if label == 0]
    total = 0.0
    for p in positives:
        for n in negatives:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(positives) * len(negatives))


def youden_bruteforce(scores, labels):
    best_t, best_j = None, -np.inf
    positives = np.asarray(labels) == 1
    for t in candidate_thresholds(np.asarray(scores, dtype=float)):
        predicted = np.asarray(scores) > t
        sens = (predicted & positives).sum() / positives.sum()
        spec = (~predicted & ~positives).sum() / (~positives).sum()
        if sens + spec - 1 > best_j:
            best_j = sens + spec - 1
            best_t = t
    return best_t, best_j


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties_half(self):
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_six_point_mixed_case(self):
        scores = [0.1, 0.4, 0.35, 0.8, 0.35, 0.9]
        labels = [0, 0, 1, 1, 0, 1]
        assert roc_auc(scores, labels) == pytest.approx(
            auc_pair_count(scores, labels), abs=1e-12
        )

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])

    @settings(max_examples=60)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=25))
    def test_monotone_transform_invariance(self, scores):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, size=len(scores))
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = roc_auc(scores, labels)
        # Scaling by a power of two is exact in floats, so the transform is
        # strictly monotone even for near-equal scores.
        transformed = roc_auc(8.0 * np.asarray(scores), labels)
        assert transformed == pytest.approx(base, abs=1e-12)

    def test_exp_transform_invariance_on_coarse_grid(self):
        rng = np.random.default_rng(5)
        scores = rng.integers(-8, 9, size=30) / 4.0
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        assert roc_auc(np.exp(scores), labels) == pytest.approx(
            roc_auc(scores, labels), abs=1e-12
        )


class TestYouden:
    def test_separated_classes_gap_midpoint(self):
        threshold = youden_threshold([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1])
        assert threshold == 2.5

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_bruteforce_scan(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=30)
        labels = rng.integers(0, 2, size=30)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        ours = youden_threshold(scores, labels)
        reference_t, reference_j = youden_bruteforce(scores, labels)
        assert ours == reference_t
        predicted = scores > ours
        positives = labels == 1
        j = ((predicted & positives).sum() / positives.sum()
             + (~predicted & ~positives).sum() / (~positives).sum() - 1)
        assert j == pytest.approx(reference_j, abs=1e-12)

    def test_label_flip_preserves_optimal_j(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1

        def best_j(s, y):
            t = youden_threshold(s, y)
            predicted = np.asarray(s) > t
            positives = np.asarray(y) == 1
            return ((predicted & positives).sum() / positives.sum()
                    + (~predicted & ~positives).sum() / (~positives).sum() - 1)

        assert best_j(scores, labels) == pytest.approx(
            best_j(-scores, 1 - labels), abs=1e-12
        )

    def test_tie_breaks_to_lower_threshold(self):
        # Two thresholds achieve J = 0.5; the scan keeps the lower.
        scores = [1.0, 2.0, 3.0, 4.0]
        labels = [0, 1, 0, 1]
        assert youden_threshold(scores, labels) == 1.5


class TestReport:
    def test_f1_is_harmonic_mean(self):
        rng = np.random.default_rng(2)
        scores = rng.random(50)
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        report = classification_report(scores, labels)
        if report.precision + report.recall > 0:
            harmonic = (2 * report.precision * report.recall
                        / (report.precision + report.recall))
            assert report.f1 == pytest.approx(harmonic, abs=1e-12)

    def test_counts_match_confusion_recount(self):
        scores = np.array([0.2, 0.4, 0.6, 0.7, 0.3, 0.9])
        labels = np.array([0, 0, 1, 1, 1, 1])
        report = classification_report(scores, labels)
        predicted = scores > report.threshold
        tp = int((predicted & (labels == 1)).sum())
        fp = int((predicted & (labels == 0)).sum())
        fn = int((~predicted & (labels == 1)).sum())
        assert report.precision == pytest.approx(tp / (tp + fp))
        assert report.recall == pytest.approx(tp / (tp + fn))


class TestStratifiedFolds:
    def test_exact_divisibility(self):
        labels = np.array([1] * 10 + [0] * 10)
        plan = stratified_folds(labels, 10, seed=0)
        folds = plan.indices([str(i) for i in range(20)])
        for fold in range(10):
            members = np.flatnonzero(folds == fold)
            assert members.size == 2
            assert labels[members].sum() == 1

    def test_deterministic(self):
        labels = np.array([1, 0] * 15)
        a = stratified_folds(labels, 5, seed=42)
        b = stratified_folds(labels, 5, seed=42)
        assert a.assignments == b.assignments

    def test_partition(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, size=57)
        labels[:6] = [0, 1] * 3
        plan = stratified_folds(labels, 5, seed=1)
        assert set(plan.assignments) == {str(i) for i in range(57)}
        assert set(plan.assignments.values()) == set(range(5))

    def test_proportions_within_one_case(self):
        rng = np.random.default_rng(4)
        labels = (rng.random(83) < 0.3).astype(int)
        plan = stratified_folds(labels, 7, seed=9)
        folds = plan.indices([str(i) for i in range(83)])
        global_rate = labels.mean()
        for fold in range(7):
            members = np.flatnonzero(folds == fold)
            positives = labels[members].sum()
            expected = global_rate * members.size
            assert abs(positives - expected) <= 1.0

    def test_small_class_rejected(self):
        with pytest.raises(ValueError, match="fewer"):
            stratified_folds(np.array([1, 0, 0, 0]), 2, seed=0)


class TestGridSearch:
    def plan_and_ids(self, n=40, k=4, seed=0):
        labels = np.array([1, 0] * (n // 2))
        ids = [str(i) for i in range(n)]
        return stratified_folds(labels, k, seed, ids=ids), ids, labels

    def test_singleton_grid(self):
        plan, ids, labels = self.plan_and_ids()
        result = grid_search(lambda p, tr, te: 0.75, {"c": [1.0]}, plan, ids)
        assert result.best_params == {"c": 1.0}
        assert result.best_mean == pytest.approx(0.75)
        assert result.points[0].std == 0.0

    def test_dominant_point_selected(self):
        plan, ids, labels = self.plan_and_ids()

        def fit_and_score(params, train_idx, test_idx):
            return 0.9 if params["c"] == 2.0 else 0.6

        result = grid_search(fit_and_score, {"c": [1.0, 2.0, 3.0]}, plan, ids)
        assert result.best_params == {"c": 2.0}

    def test_one_row_per_lattice_point(self):
        plan, ids, _ = self.plan_and_ids()
        grid = {"a": [1, 2], "b": ["x", "y", "z"]}
        result = grid_search(lambda p, tr, te: 0.5, grid, plan, ids)
        assert len(result.points) == 6
        assert expand_grid(grid)[0] == {"a": 1, "b": "x"}

    def test_failed_point_excluded_and_surfaced(self):
        plan, ids, _ = self.plan_and_ids()

        def fit_and_score(params, train_idx, test_idx):
            if params["c"] == 1.0:
                raise RuntimeError("diverged")
            return 0.7

        result = grid_search(fit_and_score, {"c": [1.0, 2.0]}, plan, ids)
        assert result.best_params == {"c": 2.0}
        failed = [p for p in result.points if p.failed]
        assert len(failed) == 1 and "diverged" in failed[0].error

    def test_tie_break_by_lattice_order(self):
        plan, ids, _ = self.plan_and_ids()
        result = grid_search(lambda p, tr, te: 0.5, {"c": [3.0, 1.0]}, plan, ids)
        assert result.best_params == {"c": 3.0}

    def test_empty_grid_rejected(self):
        plan, ids, _ = self.plan_and_ids()
        with pytest.raises(ValueError):
            grid_search(lambda p, tr, te: 0.5, {}, plan, ids)
        with pytest.raises(ValueError):
            grid_search(lambda p, tr, te: 0.5, {"c": []}, plan, ids)
