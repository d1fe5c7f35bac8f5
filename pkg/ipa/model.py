# ipa/model.py - IPA model assembly: forward pass, backward pass and parameter bookkeeping
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ipa.aggregate import AggregatorKind, AggWeights, aggregate, aggregate_backward
from ipa.codes import ModelConfig, Task, count_params
from ipa.errors import ConfigError, ContractError, DimensionError
from ipa.layers import (LayerParams, LayerStack, build_first_layer, first_layer_backward,
                        stack_backward, stack_forward)
from ipa.linalg import SeededRng

logger = logging.getLogger(__name__)

EMBEDDING_INIT_STD = 0.01

# RNG stream ids used when building a model
STREAM_EMBEDDING = 1
STREAM_LAYERS = 2
STREAM_CLASSIFIER = 3


@dataclass
class ForwardCache:
    ids: np.ndarray
    weights: np.ndarray
    stack: LayerStack
    r: np.ndarray
    dropout_mask: Optional[np.ndarray]
    hidden: List[np.ndarray]


class IpaModel:
    """One trainable model assembled from an (interaction, pooling, aggregator) triplet.

    All trainable arrays live in `self.params`; the layer, aggregator and
    classifier objects hold references to those same arrays, so optimizers
    must update them in place.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        if not config.vocab_sizes:
            raise ConfigError("model config must be bound to a dataset schema before building a model")
        self.config = config
        self.seed = seed
        self.vocab_sizes = np.array(config.vocab_sizes, dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.vocab_sizes)[:-1]]).astype(np.int64)
        self.pooling_spec = config.pooling_spec()
        self.agg_spec = config.agg_spec()
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()

        rng = SeededRng(seed)
        vocab = int(self.vocab_sizes.sum())
        self.params["embedding"] = rng.derive(STREAM_EMBEDDING).normal(0.0, EMBEDDING_INIT_STD, size=(vocab, config.k))
        if config.first_order:
            self.params["first_order"] = np.zeros(vocab)

        self.layer_params = LayerParams.build(self.pooling_spec, config.code.interaction, config.k,
                                              rng.derive(STREAM_LAYERS))
        for l, weight in enumerate(self.layer_params.layers, start=2):
            if weight.n_params:
                self.params[f"layer.{l}"] = weight.values

        self.agg_weights = AggWeights.build(self.agg_spec)
        first = self.first_aggregated_layer()
        for l, values in enumerate(self.agg_weights.values, start=first):
            self.params[f"agg.{l}"] = values

        self._build_classifier(rng.derive(STREAM_CLASSIFIER))
        if config.bias:
            self.params["bias"] = np.zeros(())
        if self.n_params() != self.expected_params():
            raise ContractError(f"{config.code} stores {self.n_params()} parameters, "
                                f"accounting expects {self.expected_params()}")
        logger.debug(f"Built {config.code} model with {self.n_params()} parameters")

    def _build_classifier(self, rng: SeededRng):
        spec = self.config.classifier
        r = self.agg_spec.output_size()
        if spec.kind == "linear":
            self.params["clf.w"] = np.zeros(r)
        elif spec.kind == "mlp":
            fan_in = r
            for i, width in enumerate(spec.hidden):
                self.params[f"clf.hidden.{i}.w"] = rng.derive(i).normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
                self.params[f"clf.hidden.{i}.b"] = np.zeros(width)
                fan_in = width
            self.params["clf.w"] = np.zeros(fan_in)

    # Bookkeeping

    def n_params(self) -> int:
        """Reflected count of every stored trainable scalar"""
        return int(sum(p.size for p in self.params.values()))

    def expected_params(self) -> int:
        return count_params(self.config)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.params.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]):
        for name, p in self.params.items():
            np.copyto(p, snapshot[name])

    def init_bias(self, labels: np.ndarray):
        """Log-odds of the positive rate for classification, label mean for regression"""
        if "bias" not in self.params or len(labels) == 0:
            return
        if self.config.task is Task.CLASSIFICATION:
            rate = float(np.clip(np.mean(labels), 1e-6, 1 - 1e-6))
            self.params["bias"][...] = np.log(rate / (1.0 - rate))
        else:
            self.params["bias"][...] = float(np.mean(labels))

    def field_embeddings(self, field: int) -> np.ndarray:
        start = self.offsets[field]
        return self.params["embedding"][start:start + self.vocab_sizes[field]]

    def weight_norms(self) -> List[float]:
        """||W||_F of each interaction layer, in build order (layer 2 first)"""
        return [weight.frobenius() for weight in self.layer_params.layers]

    def layer_alphas(self) -> List[float]:
        if self.config.code.aggregator is AggregatorKind.DIRECT:
            return [1.0] * len(self.agg_spec.widths)
        return self.agg_weights.layer_alphas()

    def alpha_weight_products(self) -> Dict[int, float]:
        """alpha_l * ||W_{l-1}||_F with W indexed by interaction layer (W_1 builds h_2)"""
        alphas = self.layer_alphas()
        first = self.first_aggregated_layer()
        norms = self.weight_norms()
        products = {}
        for i, alpha in enumerate(alphas):
            l = first + i
            if l >= 2:
                products[l] = abs(alpha) * norms[l - 2]
        return products

    # Forward / backward

    def _check_batch(self, ids: np.ndarray, weights: np.ndarray):
        if ids.ndim != 3 or ids.shape[1] != len(self.vocab_sizes):
            raise DimensionError(f"batch must be (B, {len(self.vocab_sizes)}, S), got {ids.shape}")

    def first_aggregated_layer(self) -> int:
        return 1 if self.config.include_first_layer else 2

    def layer_terms(self, ids: np.ndarray, weights: np.ndarray):
        """The stack for a batch and the layers the aggregator sees"""
        self._check_batch(ids, weights)
        h1 = build_first_layer(ids, weights, self.params["embedding"], self.offsets, self.vocab_sizes)
        stack = stack_forward(h1, self.pooling_spec, self.layer_params)
        return stack, stack.terms[self.first_aggregated_layer() - 1:]

    def forward(self, ids: np.ndarray, weights: np.ndarray, train: bool = False,
                rng: Optional[SeededRng] = None):
        """Raw scores (logits for classification) and the cache backward() needs"""
        stack, layers = self.layer_terms(ids, weights)
        r = aggregate(layers, self.agg_spec, self.agg_weights)

        mask = None
        rate = self.config.dropout
        if train and rate > 0:
            if rng is None:
                raise ConfigError("training forward with dropout needs an rng")
            mask = (rng.uniform(size=r.shape) >= rate) / (1.0 - rate)
            r_in = r * mask
        else:
            r_in = r

        hidden = []
        x = r_in
        spec = self.config.classifier
        if spec.kind == "mlp":
            for i in range(len(spec.hidden)):
                x = np.maximum(x @ self.params[f"clf.hidden.{i}.w"] + self.params[f"clf.hidden.{i}.b"], 0.0)
                hidden.append(x)
        if spec.kind == "sum":
            scores = x.sum(axis=1)
        else:
            scores = x @ self.params["clf.w"]

        if "bias" in self.params:
            scores = scores + self.params["bias"]
        if "first_order" in self.params:
            active = weights != 0
            rows = self.offsets[None, :, None] + np.where(active, ids, 0)
            scores = scores + np.einsum("bms,bms->b", weights, self.params["first_order"][rows])
        cache = ForwardCache(ids, weights, stack, r_in, mask, hidden)
        return scores, cache

    def predict(self, ids: np.ndarray, weights: np.ndarray) -> np.ndarray:
        scores, _ = self.forward(ids, weights)
        return scores

    def backward(self, cache: ForwardCache, grad_scores: np.ndarray) -> Dict[str, np.ndarray]:
        """Gradients of sum(grad_scores * scores) for every parameter"""
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}
        g = np.asarray(grad_scores, dtype=np.float64)
        ids, weights = cache.ids, cache.weights

        if "bias" in grads:
            grads["bias"][...] = g.sum()
        if "first_order" in grads:
            active = weights != 0
            rows = self.offsets[None, :, None] + np.where(active, ids, 0)
            np.add.at(grads["first_order"], rows[active], (g[:, None, None] * weights)[active])

        spec = self.config.classifier
        if spec.kind == "sum":
            grad_x = np.broadcast_to(g[:, None], cache.r.shape).copy()
        else:
            last = cache.hidden[-1] if cache.hidden else cache.r
            grads["clf.w"] = last.T @ g
            grad_x = np.outer(g, self.params["clf.w"])
            for i in range(len(spec.hidden) - 1, -1, -1):
                out = cache.hidden[i]
                grad_pre = grad_x * (out > 0)
                x_in = cache.hidden[i - 1] if i > 0 else cache.r
                grads[f"clf.hidden.{i}.w"] = x_in.T @ grad_pre
                grads[f"clf.hidden.{i}.b"] = grad_pre.sum(axis=0)
                grad_x = grad_pre @ self.params[f"clf.hidden.{i}.w"].T

        grad_r = grad_x * cache.dropout_mask if cache.dropout_mask is not None else grad_x

        stack = cache.stack
        layers = stack.terms[self.first_aggregated_layer() - 1:]
        layer_grads, agg_grads = aggregate_backward(layers, self.agg_spec, self.agg_weights, grad_r)
        first = self.first_aggregated_layer()
        for l, grad in enumerate(agg_grads, start=first):
            grads[f"agg.{l}"] = np.asarray(grad).reshape(self.params[f"agg.{l}"].shape)

        upstream = layer_grads if self.config.include_first_layer else [None] + layer_grads
        weight_grads, grad_h1 = stack_backward(stack, self.layer_params, upstream)
        for l, grad in enumerate(weight_grads, start=2):
            if f"layer.{l}" in grads:
                grads[f"layer.{l}"] = grad

        grads["embedding"] = first_layer_backward(ids, weights, self.offsets, grad_h1,
                                                  self.params["embedding"].shape)
        return grads
