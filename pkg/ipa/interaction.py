# ipa/interaction.py - The four Interaction Function families, forward and backward
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from ipa.errors import ContractError, DimensionError
from ipa.linalg import SeededRng, hadamard, vec_mat

logger = logging.getLogger(__name__)

PROJECTED_INIT_NOISE = 0.01


class InteractionKind(Enum):
    NAIVE = "N"
    WEIGHTED = "W"
    DIAGONAL = "D"
    PROJECTED = "P"

    @classmethod
    def from_letter(cls, letter: str) -> "InteractionKind":
        return cls(letter.upper())


def param_size(kind: InteractionKind, k: int) -> int:
    if k < 1:
        raise ContractError(f"embedding size must be >= 1, got {k}")
    return {
        InteractionKind.NAIVE: 0,
        InteractionKind.WEIGHTED: 1,
        InteractionKind.DIAGONAL: k,
        InteractionKind.PROJECTED: k * k,
    }[kind]


def value_shape(kind: InteractionKind, k: int) -> Tuple[int, ...]:
    """Shape of one pair's weight when stored inside a layer tensor"""
    return {
        InteractionKind.NAIVE: (0,),
        InteractionKind.WEIGHTED: (),
        InteractionKind.DIAGONAL: (k,),
        InteractionKind.PROJECTED: (k, k),
    }[kind]


def init_values(kind: InteractionKind, k: int, count: int, rng: Optional[SeededRng] = None) -> np.ndarray:
    """Weights for `count` pairs, every kind starting close to the Naive product"""
    shape = (count,) + value_shape(kind, k)
    if kind is InteractionKind.NAIVE:
        return np.zeros((count, 0))
    if kind is InteractionKind.PROJECTED:
        eye = np.broadcast_to(np.eye(k), shape).copy()
        if rng is None:
            return eye
        return eye + rng.normal(0.0, PROJECTED_INIT_NOISE, size=shape)
    return np.ones(shape)


@dataclass
class PairWeight:
    """Weight of a single (t_i, t_j) interaction"""
    kind: InteractionKind
    k: int
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        expected = param_size(self.kind, self.k)
        if self.values is None:
            self.values = init_values(self.kind, self.k, 1)[0].reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.shape[0] != expected:
            raise DimensionError(f"{self.kind.name} weight for K={self.k} needs {expected} values, got {self.values.shape[0]}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("pair weight has non-finite values")

    def matrix(self) -> np.ndarray:
        """The K x K interaction matrix this weight stands for"""
        if self.kind is InteractionKind.NAIVE:
            return np.eye(self.k)
        if self.kind is InteractionKind.WEIGHTED:
            return self.values[0] * np.eye(self.k)
        if self.kind is InteractionKind.DIAGONAL:
            return np.diag(self.values)
        return self.values.reshape(self.k, self.k)


def _check(t_i: np.ndarray, t_j: np.ndarray, w: PairWeight):
    if t_i.shape != (w.k,) or t_j.shape != (w.k,):
        raise DimensionError(f"interaction expects two vectors of length {w.k}, got {t_i.shape} and {t_j.shape}")


def interact(t_i, t_j, w: PairWeight) -> np.ndarray:
    """f(t_i, t_j, W) = (t_i^T W) * t_j"""
    t_i = np.asarray(t_i, dtype=np.float64)
    t_j = np.asarray(t_j, dtype=np.float64)
    _check(t_i, t_j, w)
    if w.kind is InteractionKind.NAIVE:
        return hadamard(t_i, t_j)
    if w.kind is InteractionKind.WEIGHTED:
        return w.values[0] * hadamard(t_i, t_j)
    if w.kind is InteractionKind.DIAGONAL:
        return hadamard(hadamard(t_i, w.values), t_j)
    return hadamard(vec_mat(t_i, w.values.reshape(w.k, w.k)), t_j)


def interact_backward(t_i, t_j, w: PairWeight, upstream) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partial derivatives of interact() contracted with `upstream`"""
    t_i = np.asarray(t_i, dtype=np.float64)
    t_j = np.asarray(t_j, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    _check(t_i, t_j, w)
    if upstream.shape != (w.k,):
        raise DimensionError(f"upstream must have length {w.k}, got {upstream.shape}")

    if w.kind is InteractionKind.NAIVE:
        return upstream * t_j, upstream * t_i, np.zeros(0)
    if w.kind is InteractionKind.WEIGHTED:
        s = w.values[0]
        return s * upstream * t_j, s * upstream * t_i, np.array([np.sum(upstream * t_i * t_j)])
    if w.kind is InteractionKind.DIAGONAL:
        d = w.values
        return upstream * d * t_j, upstream * t_i * d, upstream * t_i * t_j

    matrix = w.values.reshape(w.k, w.k)
    gated = upstream * t_j
    return matrix @ gated, upstream * (t_i @ matrix), np.outer(t_i, gated).reshape(-1)
