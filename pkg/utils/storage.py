# utils/storage.py - Run directory persistence: checkpoints, history, configs, manifests and tables
import json
import logging
import os
import zipfile
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ipa.codes import ModelConfig
from ipa.errors import CheckpointError, ConfigError
from ipa.model import IpaModel
from ipa.training import TrainHistory
from utils.config import (CHECKPOINT_FILE, CHECKPOINT_VERSION, HISTORY_FILE, LOG_FORMAT, RESOLVED_CONFIG_FILE,
                          RUN_LOG_FILE, SPLIT_MANIFEST_FILE)

logger = logging.getLogger(__name__)

PARAM_PREFIX = "param/"
PARTITION_NAMES = ("train", "val", "test")


class RunStore:
    """Owns one run directory; nothing is written outside it"""

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        self._log_handler: Optional[logging.Handler] = None
        self.init_run_dir()

    def init_run_dir(self):
        os.makedirs(self.run_dir, exist_ok=True)
        logger.debug(f"Run directory ready: {self.run_dir}")

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    # Logging
    def attach_log(self, thread: Optional[int] = None) -> logging.Handler:
        """Mirror root logging into run.log for the lifetime of the run.

        With `thread` set only records emitted by that thread are kept, so
        concurrent sweep variants each get their own log.
        """
        handler = logging.FileHandler(self.path(RUN_LOG_FILE), encoding="utf-8")
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        if thread is not None:
            handler.addFilter(lambda record: record.thread == thread)
        logging.getLogger().addHandler(handler)
        self._log_handler = handler
        return handler

    def detach_log(self):
        if self._log_handler is not None:
            logging.getLogger().removeHandler(self._log_handler)
            self._log_handler.close()
            self._log_handler = None

    # Checkpoints
    def save_checkpoint(self, model: IpaModel, name: str = CHECKPOINT_FILE) -> str:
        path = self.path(name)
        save_checkpoint(model, path)
        logger.info(f"Saved checkpoint with {model.n_params()} parameters to {path}")
        return path

    # History
    def write_history(self, history: TrainHistory, name: str = HISTORY_FILE) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(history.to_jsonl())
        return path

    def read_history(self, name: str = HISTORY_FILE) -> List[Dict]:
        with open(self.path(name), "r", encoding="utf-8") as handle:
            return [json.loads(line) for line in handle if line.strip()]

    # Resolved config
    def write_config(self, text: str, name: str = RESOLVED_CONFIG_FILE) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        return path

    # Split manifest
    def write_split_manifest(self, partitions: Sequence[np.ndarray], name: str = SPLIT_MANIFEST_FILE) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for label, indices in zip(PARTITION_NAMES, partitions):
                handle.write(f"{label}\t" + " ".join(str(int(i)) for i in indices) + "\n")
        return path

    def read_split_manifest(self, name: str = SPLIT_MANIFEST_FILE) -> Dict[str, np.ndarray]:
        manifest = {}
        with open(self.path(name), "r", encoding="utf-8") as handle:
            for line in handle:
                label, _, indices = line.rstrip("\n").partition("\t")
                manifest[label] = np.array([int(i) for i in indices.split()], dtype=np.int64)
        return manifest

    # Tables
    def write_table(self, frame: pd.DataFrame, name: str) -> str:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path

    def write_json(self, payload: Dict, name: str) -> str:
        path = self.path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps(payload) + "\n")
        return path


def save_checkpoint(model: IpaModel, path: str):
    arrays = {f"{PARAM_PREFIX}{name}": value for name, value in model.params.items()}
    arrays["format_version"] = np.array(CHECKPOINT_VERSION, dtype=np.int64)
    arrays["config"] = np.array(json.dumps(model.config.to_dict(), sort_keys=True))
    arrays["seed"] = np.array(model.seed, dtype=np.int64)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)


def load_checkpoint(path: str) -> IpaModel:
    """Rebuild a model from its config header and copy every stored array back bit for bit"""
    try:
        with np.load(path, allow_pickle=False) as archive:
            stored = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    for key in ("format_version", "config", "seed"):
        if key not in stored:
            raise CheckpointError(f"checkpoint {path} has no '{key}' entry")
    version = int(stored["format_version"])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format version {version}, expected {CHECKPOINT_VERSION}")
    try:
        config = ModelConfig.from_dict(json.loads(str(stored["config"])))
    except (ValueError, KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f"checkpoint {path} has an unreadable config header: {e}") from e

    model = IpaModel(config, seed=int(stored["seed"]))
    names = {key[len(PARAM_PREFIX):] for key in stored if key.startswith(PARAM_PREFIX)}
    if names != set(model.params):
        raise CheckpointError(f"checkpoint {path} parameters {sorted(names)} do not match the model's {sorted(model.params)}")
    for name, param in model.params.items():
        value = stored[PARAM_PREFIX + name]
        if value.shape != param.shape:
            raise CheckpointError(f"parameter '{name}' has shape {value.shape} in {path}, model expects {param.shape}")
        np.copyto(param, value)
    logger.debug(f"Loaded {config.code} checkpoint from {path}")
    return model
