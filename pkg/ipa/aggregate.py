# ipa/aggregate.py - Layer Aggregators: combine h_1..h_L into the representation r
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from ipa.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)


class AggregatorKind(Enum):
    DIRECT = "D"
    LAYER = "L"
    TERM = "T"
    ELEMENT = "E"


class CombineMode(Enum):
    SUM = "sum"
    CONCAT = "concat"


@dataclass
class AggSpec:
    kind: AggregatorKind
    mode: CombineMode
    widths: Sequence[int]
    k: int
    term_scalar_pool: bool = False

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if not self.widths:
            raise ConfigError("aggregator needs at least one layer")
        if self.mode is CombineMode.SUM and len(set(self.widths)) > 1:
            raise ConfigError(f"Sum combine needs equal layer widths, got {self.widths}")
        if self.term_scalar_pool and self.kind is AggregatorKind.ELEMENT:
            raise ConfigError("Element aggregation has nothing to weight after scalar pooling")

    def term_size(self) -> int:
        return 1 if self.term_scalar_pool else self.k

    def output_size(self) -> int:
        if self.mode is CombineMode.SUM:
            return self.widths[0] * self.term_size()
        return sum(self.widths) * self.term_size()

    def weight_shapes(self) -> List[Tuple[int, ...]]:
        if self.kind is AggregatorKind.DIRECT:
            return []
        if self.kind is AggregatorKind.LAYER:
            return [() for _ in self.widths]
        if self.kind is AggregatorKind.TERM:
            return [(w,) for w in self.widths]
        return [(w, self.k) for w in self.widths]

    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for shape in self.weight_shapes())


@dataclass
class AggWeights:
    values: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def build(cls, spec: AggSpec) -> "AggWeights":
        return cls([np.ones(shape) for shape in spec.weight_shapes()])

    def layer_alphas(self) -> List[float]:
        """alpha_l when every layer has a single weight, else the mean weight per layer"""
        return [float(np.mean(v)) for v in self.values]


def _pool(spec: AggSpec, terms: np.ndarray) -> np.ndarray:
    return terms.sum(axis=-1) if spec.term_scalar_pool else terms


def _alpha(spec: AggSpec, alpha: np.ndarray, pooled_ndim: int) -> np.ndarray:
    if spec.kind is AggregatorKind.TERM and pooled_ndim == 3:
        return alpha[:, None]
    return alpha


def _check_layers(spec: AggSpec, layers: Sequence[np.ndarray]):
    if len(layers) != len(spec.widths):
        raise DimensionError(f"aggregator expects {len(spec.widths)} layers, got {len(layers)}")
    for h, w in zip(layers, spec.widths):
        if h.ndim != 3 or h.shape[1] != w or h.shape[2] != spec.k:
            raise DimensionError(f"layer of shape {h.shape} does not match width {w} and K={spec.k}")


def weighted_layer(h: np.ndarray, spec: AggSpec, weights: AggWeights, index: int) -> np.ndarray:
    """One layer's contribution to r, flattened to (B, width * term_size)"""
    pooled = _pool(spec, h)
    if spec.kind is not AggregatorKind.DIRECT:
        pooled = _alpha(spec, weights.values[index], pooled.ndim) * pooled
    return pooled.reshape(h.shape[0], -1)


def aggregate(layers: Sequence[np.ndarray], spec: AggSpec, weights: AggWeights) -> np.ndarray:
    """r of shape (B, output_size)"""
    _check_layers(spec, layers)
    pieces = [weighted_layer(h, spec, weights, l) for l, h in enumerate(layers)]
    if spec.mode is CombineMode.SUM:
        return np.sum(pieces, axis=0)
    return np.concatenate(pieces, axis=1)


def aggregate_backward(layers: Sequence[np.ndarray], spec: AggSpec, weights: AggWeights,
                       upstream: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """(dLoss/dh_l per layer, dLoss/dalpha per weight array)"""
    _check_layers(spec, layers)
    batch = layers[0].shape[0]
    if upstream.shape != (batch, spec.output_size()):
        raise DimensionError(f"upstream shape {upstream.shape} != {(batch, spec.output_size())}")

    layer_grads = []
    weight_grads = []
    offset = 0
    for l, h in enumerate(layers):
        pooled = _pool(spec, h)
        size = pooled[0].size
        if spec.mode is CombineMode.SUM:
            piece = upstream
        else:
            piece = upstream[:, offset:offset + size]
            offset += size
        piece = piece.reshape(pooled.shape)

        if spec.kind is AggregatorKind.DIRECT:
            grad_pooled = piece
        else:
            alpha = weights.values[l]
            grad_pooled = _alpha(spec, alpha, pooled.ndim) * piece
            contrib = piece * pooled
            if spec.kind is AggregatorKind.LAYER:
                weight_grads.append(np.asarray(contrib.sum()))
            elif spec.kind is AggregatorKind.TERM:
                weight_grads.append(contrib.sum(axis=(0, 2)) if contrib.ndim == 3 else contrib.sum(axis=0))
            else:
                weight_grads.append(contrib.sum(axis=0))

        if spec.term_scalar_pool:
            grad_pooled = np.broadcast_to(grad_pooled[..., None], h.shape).copy()
        layer_grads.append(grad_pooled)
    return layer_grads, weight_grads
