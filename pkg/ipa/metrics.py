# ipa/metrics.py - AUC, Logloss and RMSE
import logging
from dataclasses import dataclass

import numpy as np

from ipa.errors import DimensionError, UndefinedMetricError

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-12


@dataclass
class ScoredBatch:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if self.scores.shape != self.labels.shape or self.scores.size == 0:
            raise DimensionError(f"scores ({self.scores.size}) and labels ({self.labels.size}) must be equal and non-empty")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def tied_rank(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing their average rank"""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    return (starts + 0.5 * (counts + 1))[inverse.reshape(-1)]


def auc(batch: ScoredBatch) -> float:
    """Mann-Whitney AUC from average ranks"""
    positive = batch.labels == 1
    n_pos = int(positive.sum())
    n_neg = batch.labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = tied_rank(batch.scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(batch: ScoredBatch) -> float:
    """Mean negative log-likelihood; scores are probabilities"""
    p = np.clip(batch.scores, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    y = batch.labels
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def rmse(batch: ScoredBatch) -> float:
    return float(np.sqrt(np.mean((batch.scores - batch.labels) ** 2)))
