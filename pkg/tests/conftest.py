# tests/conftest.py - Shared fixtures and finite-difference helpers
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ipa.codes import Task  # noqa: E402
from ipa.data import FieldSpec, TabularDataset  # noqa: E402
from ipa.linalg import SeededRng  # noqa: E402

FD_STEP = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-8


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar f() with respect to x, perturbed in place"""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        plus = f()
        flat[i] = saved - h
        minus = f()
        flat[i] = saved
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol: float = FD_RTOL, atol: float = FD_ATOL, label: str = ""):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape, f"{label}: shape {analytic.shape} != {numeric.shape}"
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = np.abs(analytic - numeric) > atol + rtol * scale
    assert not bad.any(), (f"{label}: gradient mismatch at {np.argwhere(bad)[:5].tolist()}, "
                           f"analytic {analytic[bad][:5]}, numeric {numeric[bad][:5]}")


def orthogonal_matrix(rng: SeededRng, k: int) -> np.ndarray:
    """Random orthogonal K x K matrix (QR of a Gaussian matrix, signs fixed)"""
    q, r = np.linalg.qr(rng.normal(0.0, 1.0, size=(k, k)))
    return q * np.sign(np.diag(r))


def random_categorical(vocab_sizes, rows: int, seed: int = 0, labels=None, task: Task = Task.CLASSIFICATION):
    """One-hot categorical dataset with uniformly drawn ids"""
    rng = SeededRng(seed, 99)
    m = len(vocab_sizes)
    ids = np.stack([rng.integers(0, v, size=rows) for v in vocab_sizes], axis=1)[:, :, None]
    if labels is None:
        labels = (rng.uniform(size=rows) < 0.5).astype(np.float64)
    fields = [FieldSpec(f"c{i + 1}", "categorical", v) for i, v in enumerate(vocab_sizes)]
    return TabularDataset(fields, ids, np.ones((rows, m, 1)), labels, task)


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture
def tiny_dataset():
    return random_categorical([2, 2, 2], rows=5, seed=3)
