# ipa/training.py - Loss, Adam, early stopping and the mini-batch training loop
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from ipa.codes import Task
from ipa.data import TabularDataset
from ipa.errors import ContractError, DataError, DimensionError, UndefinedMetricError
from ipa.linalg import SeededRng
from ipa.metrics import ScoredBatch, auc, logloss, rmse, sigmoid
from ipa.model import IpaModel

logger = logging.getLogger(__name__)

DEFAULT_LR = 1e-3
DEFAULT_BATCH_SIZE = 2048
DEFAULT_PATIENCE = 3
DEFAULT_EPOCHS = 20

STREAM_SHUFFLE = 21
STREAM_DROPOUT = 22

HISTORY_KEYS = ("epoch", "train_loss", "val_loss", "val_auc", "val_rmse", "alpha", "weight_norms", "alpha_weight")


# Loss

def _check_labels(labels: np.ndarray, task: Task):
    if task is Task.CLASSIFICATION and not np.all((labels == 0) | (labels == 1)):
        raise ContractError("classification labels must be 0 or 1")
    if not np.all(np.isfinite(labels)):
        raise ContractError("labels must be finite")


def loss(score, label, task: Task):
    """Per-sample loss: stable BCE on the logit, or squared error"""
    s = np.asarray(score, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    _check_labels(np.atleast_1d(y), task)
    if task is Task.CLASSIFICATION:
        value = np.maximum(s, 0.0) - y * s + np.log1p(np.exp(-np.abs(s)))
    else:
        value = (s - y) ** 2
    return float(value) if value.ndim == 0 else value


def loss_and_grad(scores: np.ndarray, labels: np.ndarray, task: Task):
    """Mean loss over a batch and its gradient w.r.t. the scores"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = scores.shape[0]
    if task is Task.CLASSIFICATION:
        grad = (sigmoid(scores) - labels) / n
    else:
        grad = 2.0 * (scores - labels) / n
    return float(np.mean(loss(scores, labels, task))), grad


# Adam

@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied in place"""
    for name, p in params.items():
        g = grads.get(name)
        if g is None or np.shape(g) != p.shape:
            raise DimensionError(f"gradient for '{name}' has shape {np.shape(g)}, parameter has {p.shape}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        np.subtract(p, update, out=p)


# History

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: Optional[float]
    val_rmse: Optional[float]
    alpha: List[float]
    weight_norms: List[float]
    alpha_weight: Dict[str, float]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False, separators=(", ", ": "))


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("inf")
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(record.to_json() + "\n" for record in self.records)

    def best(self) -> Optional[EpochRecord]:
        for record in self.records:
            if record.epoch == self.best_epoch:
                return record
        return None


class EarlyStopping:
    """Tracks the best validation metric; stops once `patience` epochs pass without improvement"""

    def __init__(self, patience: int = DEFAULT_PATIENCE):
        if patience < 0:
            raise ContractError(f"patience must be >= 0, got {patience}")
        self.patience = patience
        self.best_metric = float("inf")
        self.best_epoch = 0
        self.best_params: Optional[Dict[str, np.ndarray]] = None
        self.wait = 0

    def __call__(self, model: IpaModel, epoch: int, metric: float) -> bool:
        """True when training should stop"""
        if metric < self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            self.best_params = model.snapshot()
            self.wait = 0
            return False
        self.wait += 1
        return self.wait > self.patience


# Evaluation

def iter_batches(n: int, batch_size: int, order: Optional[np.ndarray] = None) -> Iterable[np.ndarray]:
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def score_dataset(model: IpaModel, dataset: TabularDataset, batch_size: int = DEFAULT_BATCH_SIZE) -> np.ndarray:
    """Raw scores (logits for classification) for every row"""
    if len(dataset) == 0:
        return np.zeros(0)
    pieces = [model.predict(dataset.ids[idx], dataset.weights[idx]) for idx in iter_batches(len(dataset), batch_size)]
    return np.concatenate(pieces)


def evaluate(model: IpaModel, dataset: TabularDataset, batch_size: int = DEFAULT_BATCH_SIZE) -> Dict[str, Optional[float]]:
    scores = score_dataset(model, dataset, batch_size)
    result: Dict[str, Optional[float]] = {"loss": float(np.mean(loss(scores, dataset.labels, dataset.task)))}
    if dataset.task is Task.CLASSIFICATION:
        batch = ScoredBatch(sigmoid(scores), dataset.labels)
        result["logloss"] = logloss(batch)
        try:
            result["auc"] = auc(batch)
        except UndefinedMetricError as e:
            logger.warning(f"AUC undefined: {e}")
            result["auc"] = None
        result["rmse"] = None
    else:
        result["rmse"] = rmse(ScoredBatch(scores, dataset.labels))
        result["auc"] = None
        result["logloss"] = None
    return result


def stopping_metric(task: Task, metrics: Dict[str, Optional[float]]) -> float:
    """Val Logloss for classification, val RMSE for regression (lower is better)"""
    return metrics["logloss"] if task is Task.CLASSIFICATION else metrics["rmse"]


# Training loop

def train(model: IpaModel, train_set: TabularDataset, val_set: TabularDataset, epochs: int = DEFAULT_EPOCHS,
          batch_size: int = DEFAULT_BATCH_SIZE, patience: int = DEFAULT_PATIENCE, seed: int = 0,
          lr: float = DEFAULT_LR, state: Optional[AdamState] = None) -> TrainHistory:
    """Mini-batch Adam with seeded shuffling and early stopping; restores the best epoch's parameters"""
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    if epochs < 1 or batch_size < 1:
        raise ContractError(f"epochs and batch_size must be >= 1, got {epochs} and {batch_size}")
    if train_set.task is not model.config.task:
        raise ContractError(f"dataset task {train_set.task.value} does not match model task {model.config.task.value}")

    state = state or AdamState(lr=lr)
    shuffle = SeededRng(seed, STREAM_SHUFFLE)
    dropout = SeededRng(seed, STREAM_DROPOUT)
    stopper = EarlyStopping(patience)
    history = TrainHistory()
    task = model.config.task
    model.init_bias(train_set.labels)
    n = len(train_set)

    for epoch in range(1, epochs + 1):
        order = shuffle.derive(epoch).permutation(n)
        epoch_rng = dropout.derive(epoch)
        total = 0.0
        for idx in iter_batches(n, batch_size, order):
            scores, cache = model.forward(train_set.ids[idx], train_set.weights[idx], train=True, rng=epoch_rng)
            batch_loss, grad = loss_and_grad(scores, train_set.labels[idx], task)
            grads = model.backward(cache, grad)
            adam_step(model.params, grads, state)
            total += batch_loss * len(idx)
            logger.debug(f"epoch {epoch} batch loss {batch_loss:.6f}")

        metrics = evaluate(model, val_set, batch_size)
        record = EpochRecord(
            epoch=epoch,
            train_loss=total / n,
            val_loss=metrics["loss"],
            val_auc=metrics["auc"],
            val_rmse=metrics["rmse"],
            alpha=model.layer_alphas(),
            weight_norms=model.weight_norms(),
            alpha_weight={str(l): v for l, v in model.alpha_weight_products().items()},
        )
        history.records.append(record)
        metric = stopping_metric(task, metrics)
        summary = f"val AUC {record.val_auc:.5f}" if record.val_auc is not None else \
            f"val RMSE {record.val_rmse:.5f}" if record.val_rmse is not None else "val AUC n/a"
        logger.info(f"Epoch {epoch}: train loss {record.train_loss:.5f}, val loss {record.val_loss:.5f}, {summary}")

        if stopper(model, epoch, metric):
            history.stopped_early = True
            logger.info(f"Early stopping after epoch {epoch}; best epoch {stopper.best_epoch}")
            break

    if stopper.best_params is not None:
        model.restore(stopper.best_params)
    history.best_epoch = stopper.best_epoch
    history.best_metric = stopper.best_metric
    return history
