# utils/experiment.py - Shared pipeline behind train, evaluate and sweep: load, split, build, train, persist
import logging
import threading
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from ipa.codes import Task
from ipa.data import TabularDataset, load_dataset, split_indices
from ipa.errors import DataError
from ipa.model import IpaModel
from ipa.training import TrainHistory, evaluate, train
from utils.config import ExperimentConfig
from utils.storage import RunStore

logger = logging.getLogger(__name__)


@dataclass
class PreparedData:
    dataset: TabularDataset
    partitions: List[np.ndarray]
    task: Task

    @property
    def train(self) -> TabularDataset:
        return self.dataset.subset(self.partitions[0])

    @property
    def val(self) -> TabularDataset:
        return self.dataset.subset(self.partitions[1])

    @property
    def test(self) -> TabularDataset:
        return self.dataset.subset(self.partitions[2])


@dataclass
class RunResult:
    run_dir: str
    model: IpaModel
    history: TrainHistory
    val: Dict[str, Optional[float]]
    test: Dict[str, Optional[float]]
    wall_time: float

    @property
    def n_params(self) -> int:
        return self.model.n_params()

    def headline(self, metrics: Dict[str, Optional[float]]) -> Optional[float]:
        """AUC for classification, RMSE for regression"""
        return metrics["auc"] if self.model.config.task is Task.CLASSIFICATION else metrics["rmse"]


def prepare_data(config: ExperimentConfig) -> PreparedData:
    dataset = load_dataset(config.resolve_path(config.data), config.data_format, hash_buckets=config.hash_buckets,
                           numeric_buckets=config.numeric_buckets, max_rows=config.max_rows, seed=config.seed)
    task = dataset.task if config.task == "auto" else Task(config.task)
    if task is not dataset.task:
        if task is Task.CLASSIFICATION and not np.all((dataset.labels == 0) | (dataset.labels == 1)):
            raise DataError("task=classification needs 0/1 labels")
        dataset = TabularDataset(dataset.fields, dataset.ids, dataset.weights, dataset.labels, task, dataset.meta)
    partitions = split_indices(len(dataset), config.split, config.seed)
    logger.info(f"Split {len(dataset)} rows into {[len(p) for p in partitions]} ({task.value})")
    return PreparedData(dataset, partitions, task)


def build_model(config: ExperimentConfig, prepared: PreparedData) -> IpaModel:
    model_config = config.model_config(prepared.dataset.vocab_sizes(), prepared.task)
    return IpaModel(model_config, seed=config.seed)


def run_experiment(config: ExperimentConfig, run_dir: str, prepared: Optional[PreparedData] = None) -> RunResult:
    """Train one model and write history.jsonl, model.ckpt, resolved.cfg and the split manifest into run_dir"""
    store = RunStore(run_dir)
    store.attach_log(thread=threading.get_ident())
    try:
        started = time.perf_counter()
        prepared = prepared or prepare_data(config)
        model = build_model(config, prepared)
        logger.info(f"Training {model.config.code} (L={model.config.depth}, K={model.config.k}) "
                    f"with {model.n_params()} parameters")
        history = train(model, prepared.train, prepared.val, epochs=config.epochs, batch_size=config.batch_size,
                        patience=config.patience, seed=config.seed, lr=config.lr)
        val_metrics = evaluate(model, prepared.val, config.batch_size)
        test_metrics = evaluate(model, prepared.test, config.batch_size)
        wall_time = time.perf_counter() - started

        store.write_history(history)
        store.save_checkpoint(model)
        store.write_config(config.to_text(model.config))
        store.write_split_manifest(prepared.partitions)
        return RunResult(run_dir, model, history, val_metrics, test_metrics, wall_time)
    finally:
        store.detach_log()
