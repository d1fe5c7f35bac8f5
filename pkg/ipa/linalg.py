# ipa/linalg.py - Dense vector/matrix helpers, seeded randomness and small spectral routines
import logging
import math
from typing import Tuple, Union

import numpy as np

from ipa.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

# Vectors and matrices are plain float64 numpy arrays
Vector = np.ndarray
Matrix = np.ndarray

MAX_SPECTRAL_DIM = 64
SYMMETRY_TOLERANCE = 1e-9
OFF_DIAGONAL_TOLERANCE = 1e-12
MAX_JACOBI_SWEEPS = 100


class SeededRng:
    """Counter-based random stream addressed by (seed, stream).

    Backed by numpy's Philox generator, so a given (seed, stream) always
    produces the same sequence regardless of which thread draws from it.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(sequence))

    def derive(self, stream: int) -> "SeededRng":
        """Independent stream for a sub-task (row block, variant, epoch...)"""
        return SeededRng(self.seed, self.stream * 1_000_003 + int(stream) + 1)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> Union[float, np.ndarray]:
        draws = self._gen.random(size)
        return low + (high - low) * draws

    def normal(self, mu: float = 0.0, sigma: float = 1.0, size=None) -> Union[float, np.ndarray]:
        """Box-Muller deviates built from two uniform draws each"""
        if sigma < 0:
            raise ContractError(f"sigma must be >= 0, got {sigma}")
        u1 = 1.0 - self._gen.random(size)  # (0, 1], keeps log finite
        u2 = self._gen.random(size)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        if size is None:
            return mu + sigma * float(z)
        return mu + sigma * z

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def gauss(rng: SeededRng, mu: float, sigma: float) -> float:
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return float(mu)
    return float(rng.normal(mu, sigma))


def hadamard(a: Vector, b: Vector) -> Vector:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def vec_mat(v: Vector, m: Matrix) -> Vector:
    """Row vector times matrix, v^T M"""
    v = np.asarray(v, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or v.shape[0] != m.shape[0]:
        raise DimensionError(f"vec_mat: vector of length {v.shape} against matrix {m.shape}")
    return v @ m


def frobenius_norm(m: Matrix) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def _off_diagonal_mass(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(a * a) - np.sum(np.diag(a) ** 2)))


def sym_eigen(s: Matrix, tolerance: float = OFF_DIAGONAL_TOLERANCE,
              max_sweeps: int = MAX_JACOBI_SWEEPS) -> Tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvalues sorted descending and
    the matching eigenvectors stored as columns.
    """
    a = np.array(s, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"sym_eigen needs a square matrix, got {a.shape}")
    k = a.shape[0]
    if k == 0 or k > MAX_SPECTRAL_DIM:
        raise ContractError(f"sym_eigen supports 1 <= K <= {MAX_SPECTRAL_DIM}, got {k}")
    if not np.all(np.isfinite(a)):
        raise ContractError("sym_eigen input has non-finite entries")
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOLERANCE:
        raise ContractError("sym_eigen input is not symmetric")

    a = 0.5 * (a + a.T)
    v = np.eye(k)
    for sweep in range(max_sweeps):
        off = _off_diagonal_mass(a)
        if off < tolerance:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - sn * vec_q
                v[:, q] = sn * vec_p + c * vec_q
    else:
        logger.warning(f"Jacobi stopped after {max_sweeps} sweeps, off-diagonal mass {_off_diagonal_mass(a):.3e}")

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order]


def gram(e: Matrix) -> Matrix:
    e = np.asarray(e, dtype=np.float64)
    return e.T @ e


def singular_values(e: Matrix) -> np.ndarray:
    """Singular values of an N x K matrix through its K x K Gram matrix"""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim == 1:
        e = e[None, :]
    if e.ndim != 2 or e.shape[0] == 0 or e.shape[1] == 0:
        raise DimensionError(f"singular_values needs a non-empty N x K matrix, got {e.shape}")
    eigenvalues, _ = sym_eigen(gram(e))
    return np.sqrt(np.clip(eigenvalues, 0.0, None))

