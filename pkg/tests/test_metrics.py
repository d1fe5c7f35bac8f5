# tests/test_metrics.py
import math

import numpy as np
import pytest

from ipa.errors import DimensionError, UndefinedMetricError
from ipa.linalg import SeededRng
from ipa.metrics import ScoredBatch, auc, logloss, rmse, sigmoid, tied_rank


def brute_force_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestAuc:
    def test_hand_example(self):
        assert auc(ScoredBatch([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])) == 0.75

    def test_separated_and_tied(self):
        assert auc(ScoredBatch([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])) == 1.0
        assert auc(ScoredBatch([0.3] * 6, [0, 1, 0, 1, 1, 0])) == 0.5

    def test_single_class_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auc(ScoredBatch([0.1, 0.2], [1, 1]))

    def test_matches_pair_counting(self):
        for i in range(500):
            rng = SeededRng(i)
            n = int(rng.integers(2, 201))
            scores = np.round(rng.uniform(size=n), 1)  # coarse grid forces ties
            labels = (rng.uniform(size=n) < 0.4).astype(np.float64)
            labels[0], labels[1] = 0.0, 1.0
            # Exact up to float summation order
            assert auc(ScoredBatch(scores, labels)) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)

    def test_monotone_invariance_and_reversal(self):
        rng = SeededRng(3)
        scores = rng.normal(size=150)
        labels = (rng.uniform(size=150) < 0.5).astype(np.float64)
        base = auc(ScoredBatch(scores, labels))
        assert auc(ScoredBatch(np.exp(scores), labels)) == base
        assert auc(ScoredBatch(3.0 * scores + 1.0, labels)) == base
        assert base + auc(ScoredBatch(-scores, labels)) == pytest.approx(1.0, abs=1e-12)

    def test_tied_rank(self):
        assert np.array_equal(tied_rank([3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0])


class TestLogloss:
    def test_cases(self):
        assert logloss(ScoredBatch([0.5, 0.5], [0, 1])) == pytest.approx(math.log(2), abs=1e-12)
        assert logloss(ScoredBatch([1.0, 0.0], [1, 0])) <= 1e-11
        assert logloss(ScoredBatch([0.9, 0.1], [1, 0])) == pytest.approx(-math.log(0.9), abs=1e-12)
        assert logloss(ScoredBatch([0.9, 0.1], [1, 0])) == pytest.approx(0.10536, abs=1e-5)

    def test_saturated_predictions_stay_finite(self):
        assert np.isfinite(logloss(ScoredBatch([0.0, 1.0], [1, 0])))


class TestRmse:
    def test_cases(self):
        assert rmse(ScoredBatch([1.0, 2.0], [1.0, 2.0])) == 0.0
        assert rmse(ScoredBatch([0.0, 0.0], [3.0, 4.0])) == pytest.approx(math.sqrt(12.5), abs=1e-12)
        labels = np.array([0.3, -2.0, 5.0])
        assert rmse(ScoredBatch(labels - 0.25, labels)) == pytest.approx(0.25, abs=1e-12)


def test_scored_batch_shapes():
    with pytest.raises(DimensionError):
        ScoredBatch([0.1, 0.2], [1])
    with pytest.raises(DimensionError):
        ScoredBatch([], [])


def test_sigmoid_is_stable():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(800.0) == 1.0 and sigmoid(-800.0) == 0.0
