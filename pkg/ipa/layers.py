# ipa/layers.py - First layer construction and Field / Global layer pooling
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ipa.errors import ConfigError, DimensionError, FeatureLookupError
from ipa.interaction import InteractionKind, init_values
from ipa.linalg import SeededRng

logger = logging.getLogger(__name__)

DEFAULT_GLOBAL_WIDTH = 10

# Trilinear kernels: dense weight, first-layer terms T, previous-layer terms P -> output
FIELD_KERNELS = {
    InteractionKind.WEIGHTED: "nm,bnk,bmk->bnk",
    InteractionKind.DIAGONAL: "nmk,bnk,bmk->bnk",
    InteractionKind.PROJECTED: "nmkj,bnk,bmj->bnj",
}
GLOBAL_KERNELS = {
    InteractionKind.WEIGHTED: "nim,bmk,bik->bnk",
    InteractionKind.DIAGONAL: "nimk,bmk,bik->bnk",
    InteractionKind.PROJECTED: "nimkj,bmk,bij->bnj",
}


class PoolingKind(Enum):
    FIELD = "F"
    GLOBAL = "G"


@dataclass
class PoolingSpec:
    kind: PoolingKind
    depth: int
    num_fields: int
    residual: bool = False
    global_width: Sequence[int] = ()
    include_self: bool = False
    symmetric_share: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth L must be >= 1, got {self.depth}")
        if self.num_fields < 1:
            raise ConfigError(f"need at least one field, got M={self.num_fields}")
        if self.residual and self.kind is not PoolingKind.FIELD:
            raise ConfigError("residual pooling requires Field pooling")
        if self.kind is PoolingKind.GLOBAL:
            if self.symmetric_share:
                raise ConfigError("symmetric sharing is only defined for Field pooling")
            widths = list(self.global_width) or [DEFAULT_GLOBAL_WIDTH]
            if len(widths) == 1:
                widths = widths * max(self.depth - 1, 1)
            if len(widths) != max(self.depth - 1, 1) or min(widths) < 1:
                raise ConfigError(f"global widths {widths} do not fit depth L={self.depth}")
            self.global_width = tuple(int(w) for w in widths)
        if self.symmetric_share and self.include_self:
            raise ConfigError("symmetric sharing requires include_self=false")

    def widths(self) -> List[int]:
        """Number of terms in h_1..h_L"""
        if self.kind is PoolingKind.FIELD:
            return [self.num_fields] * self.depth
        return [self.num_fields] + list(self.global_width[: self.depth - 1])


class LayerWeight:
    """All pair weights of one interaction layer.

    Field layers index pairs as (n, m); Global layers as (n, n', m) with n'
    running over the previous layer's terms. `index` maps every grid cell to
    its storage slot (-1 when the pair is absent), `transposed` marks cells
    that read their shared slot as W^T.
    """

    def __init__(self, pooling: PoolingKind, kind: InteractionKind, k: int, grid_shape: Tuple[int, ...],
                 index: np.ndarray, transposed: np.ndarray, values: np.ndarray, scale: float = 1.0):
        self.pooling = pooling
        self.kind = kind
        self.k = k
        self.grid_shape = tuple(grid_shape)
        self.index = index
        self.transposed = transposed
        self.values = values
        self.scale = scale
        self.present = index >= 0

    @classmethod
    def build(cls, spec: PoolingSpec, kind: InteractionKind, k: int, width_out: int, width_prev: int,
              rng: Optional[SeededRng] = None) -> "LayerWeight":
        m = spec.num_fields
        if spec.kind is PoolingKind.FIELD:
            grid = (m, m)
            index = np.full(grid, -1, dtype=np.int64)
            transposed = np.zeros(grid, dtype=bool)
            slot = 0
            for n in range(m):
                for j in range(m):
                    if n == j and not spec.include_self:
                        continue
                    if spec.symmetric_share and j < n:
                        index[n, j] = index[j, n]
                        transposed[n, j] = True
                        continue
                    index[n, j] = slot
                    slot += 1
            scale = 0.5 if spec.symmetric_share else 1.0
        else:
            grid = (width_out, width_prev, m)
            slot = width_out * width_prev * m
            index = np.arange(slot, dtype=np.int64).reshape(grid)
            transposed = np.zeros(grid, dtype=bool)
            scale = 1.0
        values = init_values(kind, k, slot, rng)
        return cls(spec.kind, kind, k, grid, index, transposed, values, scale)

    @property
    def n_params(self) -> int:
        return int(self.values.size)

    def dense(self) -> np.ndarray:
        """Per-cell weights (scaled, absent cells zero); None for the Naive product"""
        if self.kind is InteractionKind.NAIVE:
            return None
        padded = np.concatenate([self.values, np.zeros((1,) + self.values.shape[1:])], axis=0)
        dense = padded[self.index]
        if self.kind is InteractionKind.PROJECTED and self.transposed.any():
            dense[self.transposed] = np.swapaxes(dense[self.transposed], -1, -2)
        return self.scale * dense

    def fold_grad(self, grad_dense: np.ndarray) -> np.ndarray:
        """Pull a gradient over dense cells back onto the stored slots"""
        grad = np.zeros_like(self.values)
        if self.kind is InteractionKind.NAIVE:
            return grad
        grad_dense = self.scale * grad_dense
        if self.kind is InteractionKind.PROJECTED and self.transposed.any():
            grad_dense = grad_dense.copy()
            grad_dense[self.transposed] = np.swapaxes(grad_dense[self.transposed], -1, -2)
        np.add.at(grad, self.index[self.present], grad_dense[self.present])
        return grad

    def frobenius(self) -> float:
        """Frobenius norm of every present cell's implied K x K matrix, stacked"""
        count = int(self.present.sum())
        if self.kind is InteractionKind.NAIVE:
            return float(np.sqrt(self.scale ** 2 * self.k * count))
        dense = self.dense()[self.present]
        if self.kind is InteractionKind.WEIGHTED:
            return float(np.sqrt(self.k * np.sum(dense ** 2)))
        return float(np.sqrt(np.sum(dense ** 2)))


@dataclass
class LayerParams:
    layers: List[LayerWeight] = field(default_factory=list)

    @classmethod
    def build(cls, spec: PoolingSpec, kind: InteractionKind, k: int, rng: Optional[SeededRng] = None) -> "LayerParams":
        widths = spec.widths()
        layers = []
        for l in range(1, spec.depth):
            layers.append(LayerWeight.build(spec, kind, k, widths[l], widths[l - 1],
                                            rng.derive(l) if rng is not None else None))
        return cls(layers)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)


@dataclass
class LayerStack:
    """h_1..h_L for one batch, plus what the backward pass needs"""
    terms: List[np.ndarray]
    dense: List[Optional[np.ndarray]]
    spec: PoolingSpec


def build_first_layer(ids: np.ndarray, weights: np.ndarray, table: np.ndarray, offsets: np.ndarray,
                      vocab_sizes: np.ndarray) -> np.ndarray:
    """Pool active-feature embeddings into one term per field.

    ids, weights: (B, M, S) slot arrays; a slot with weight 0 is inactive.
    Multi-hot fields carry weights 1/count so the pool is a mean; numeric
    fields carry their value so the term is x * v.
    """
    ids = np.asarray(ids)
    if ids.ndim != 3 or weights.shape != ids.shape:
        raise DimensionError(f"ids and weights must both be (B, M, S), got {ids.shape} and {weights.shape}")
    if ids.shape[1] != len(offsets):
        raise DimensionError(f"batch has {ids.shape[1]} fields, table has {len(offsets)}")
    active = weights != 0
    if np.any(active & ((ids < 0) | (ids >= vocab_sizes[None, :, None]))):
        raise FeatureLookupError("feature id outside its field vocabulary")
    rows = offsets[None, :, None] + np.where(active, ids, 0)
    return np.einsum("bms,bmsk->bmk", weights, table[rows])


def first_layer_backward(ids: np.ndarray, weights: np.ndarray, offsets: np.ndarray, grad_h1: np.ndarray,
                         table_shape: Tuple[int, int]) -> np.ndarray:
    active = weights != 0
    rows = offsets[None, :, None] + np.where(active, ids, 0)
    contrib = weights[..., None] * grad_h1[:, :, None, :]
    grad = np.zeros(table_shape)
    np.add.at(grad, rows[active], contrib[active])
    return grad


def _batched(terms) -> Tuple[np.ndarray, bool]:
    terms = np.asarray(terms, dtype=np.float64)
    if terms.ndim == 2:
        return terms[None], True
    if terms.ndim != 3:
        raise DimensionError(f"terms must be (width, K) or (B, width, K), got {terms.shape}")
    return terms, False


def _naive_field(h1: np.ndarray, h_prev: np.ndarray, weight: LayerWeight) -> np.ndarray:
    pooled = h_prev.sum(axis=1, keepdims=True)
    if not weight.present[0, 0]:
        pooled = pooled - h_prev
    return weight.scale * pooled


def field_pool(h_prev, h_1, weight: LayerWeight, residual: bool = False) -> np.ndarray:
    """Term n = sum over m of f(t_n, t_{l-1,m}, W_{n,m}), optionally plus t_{l-1,n}"""
    h_prev, single = _batched(h_prev)
    h_1, _ = _batched(h_1)
    out, _ = _field_forward(h_prev, h_1, weight, weight.dense())
    if residual:
        out = out + h_prev
    return out[0] if single else out


def _field_forward(h_prev, h_1, weight: LayerWeight, dense):
    if h_1.shape != h_prev.shape or h_1.shape[1] != weight.grid_shape[0]:
        raise DimensionError(f"field pooling needs matching (B, M, K) layers, got {h_prev.shape} and {h_1.shape}")
    if weight.kind is InteractionKind.NAIVE:
        pooled = _naive_field(h_1, h_prev, weight)
        return h_1 * pooled, pooled
    return np.einsum(FIELD_KERNELS[weight.kind], dense, h_1, h_prev, optimize=True), None


def global_pool(h_prev, h_1, weight: LayerWeight) -> np.ndarray:
    """Term n = sum over fields m and previous terms n' of f(t_m, t_{l-1,n'}, W_{n,n',m})"""
    h_prev, single = _batched(h_prev)
    h_1, _ = _batched(h_1)
    out, _ = _global_forward(h_prev, h_1, weight, weight.dense())
    return out[0] if single else out


def _global_forward(h_prev, h_1, weight: LayerWeight, dense):
    width_out, width_prev, m = weight.grid_shape
    if h_prev.shape[1] != width_prev or h_1.shape[1] != m or h_prev.shape[2] != h_1.shape[2]:
        raise DimensionError(f"global pooling expects {width_prev} previous terms and {m} fields, "
                             f"got {h_prev.shape} and {h_1.shape}")
    if weight.kind is InteractionKind.NAIVE:
        field_sum = h_1.sum(axis=1)
        prev_sum = h_prev.sum(axis=1)
        term = (field_sum * prev_sum)[:, None, :]
        return np.repeat(term, width_out, axis=1), (field_sum, prev_sum)
    return np.einsum(GLOBAL_KERNELS[weight.kind], dense, h_1, h_prev, optimize=True), None


def _trilinear_grads(subscripts: str, dense, t, p, upstream):
    inputs, out = subscripts.split("->")
    w_sub, t_sub, p_sub = inputs.split(",")
    grad_dense = np.einsum(f"{out},{t_sub},{p_sub}->{w_sub}", upstream, t, p, optimize=True)
    grad_t = np.einsum(f"{w_sub},{out},{p_sub}->{t_sub}", dense, upstream, p, optimize=True)
    grad_p = np.einsum(f"{w_sub},{t_sub},{out}->{p_sub}", dense, t, upstream, optimize=True)
    return grad_dense, grad_t, grad_p


def stack_forward(h_1: np.ndarray, spec: PoolingSpec, params: LayerParams) -> LayerStack:
    h_1, _ = _batched(h_1)
    if len(params.layers) != spec.depth - 1:
        raise DimensionError(f"spec depth {spec.depth} needs {spec.depth - 1} weight layers, got {len(params.layers)}")
    terms = [h_1]
    dense = [None]
    for weight in params.layers:
        w = weight.dense()
        if spec.kind is PoolingKind.FIELD:
            out, _ = _field_forward(terms[-1], h_1, weight, w)
            if spec.residual:
                out = out + terms[-1]
        else:
            out, _ = _global_forward(terms[-1], h_1, weight, w)
        terms.append(out)
        dense.append(w)
    return LayerStack(terms, dense, spec)


def stack_backward(stack: LayerStack, params: LayerParams,
                   upstream: Sequence[Optional[np.ndarray]]) -> Tuple[List[np.ndarray], np.ndarray]:
    """Gradients for every layer's stored weights and for h_1.

    `upstream[l]` is dLoss/dh_{l+1} coming from outside the stack (the
    aggregator), or None when that layer feeds nothing directly.
    """
    spec = stack.spec
    h_1 = stack.terms[0]
    n_layers = len(stack.terms)
    if len(upstream) != n_layers:
        raise DimensionError(f"need one upstream gradient per layer ({n_layers}), got {len(upstream)}")
    grads = [np.zeros_like(terms) if up is None else np.asarray(up, dtype=np.float64)
             for terms, up in zip(stack.terms, upstream)]
    grad_h1 = np.zeros_like(h_1)
    weight_grads: List[np.ndarray] = [None] * (n_layers - 1)

    for l in range(n_layers - 1, 0, -1):
        weight = params.layers[l - 1]
        h_prev = stack.terms[l - 1]
        g = grads[l]
        if spec.kind is PoolingKind.FIELD:
            if weight.kind is InteractionKind.NAIVE:
                pooled = _naive_field(h_1, h_prev, weight)
                grad_t = g * pooled
                gq = g * h_1
                grad_p = np.broadcast_to(gq.sum(axis=1, keepdims=True), gq.shape).copy()
                if not weight.present[0, 0]:
                    grad_p = grad_p - gq
                grad_p *= weight.scale
                weight_grads[l - 1] = weight.fold_grad(None)
            else:
                gd, grad_t, grad_p = _trilinear_grads(FIELD_KERNELS[weight.kind], stack.dense[l], h_1, h_prev, g)
                weight_grads[l - 1] = weight.fold_grad(gd)
            if spec.residual:
                grad_p = grad_p + g
        else:
            if weight.kind is InteractionKind.NAIVE:
                field_sum = h_1.sum(axis=1)
                prev_sum = h_prev.sum(axis=1)
                g_term = g.sum(axis=1)
                grad_t = np.broadcast_to((g_term * prev_sum)[:, None, :], h_1.shape).copy()
                grad_p = np.broadcast_to((g_term * field_sum)[:, None, :], h_prev.shape).copy()
                weight_grads[l - 1] = weight.fold_grad(None)
            else:
                gd, grad_t, grad_p = _trilinear_grads(GLOBAL_KERNELS[weight.kind], stack.dense[l], h_1, h_prev, g)
                weight_grads[l - 1] = weight.fold_grad(gd)
        grad_h1 += grad_t
        grads[l - 1] = grads[l - 1] + grad_p

    grad_h1 += grads[0]
    return weight_grads, grad_h1
