# commands/sweep.py - Run config variants on a worker pool and collect results.csv
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import pandas as pd
import psutil

from ipa.codes import Task
from ipa.errors import ConfigError
from utils.config import CONFIG_KEYS, RESULTS_FILE, ExperimentConfig, load_config
from utils.experiment import PreparedData, prepare_data, run_experiment
from utils.storage import RunStore

logger = logging.getLogger(__name__)

# Keys whose change alters the loaded data or its split
DATA_KEYS = {"data", "data_format", "task", "seed", "split", "max_rows", "hash_buckets", "numeric_buckets"}
RANGE_PATTERN = re.compile(r"^\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*$")


def parse_vary(text: str) -> Tuple[str, List[str]]:
    """'L=3..8' (inclusive integer range) or 'model=PFL,PF'D,WGT'"""
    key, sep, values = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"--vary expects KEY=VALUES, got '{text}'")
    if key not in CONFIG_KEYS:
        raise ConfigError(f"cannot vary unknown key '{key}'")
    match = RANGE_PATTERN.match(values)
    if match:
        low, high = int(match.group(1)), int(match.group(2))
        variants = [str(v) for v in range(low, high + 1)]
    else:
        variants = [v.strip() for v in values.split(",") if v.strip()]
    if not variants:
        raise ConfigError(f"--vary {text} yields an empty sweep")
    return key, variants


def variant_id(key: str, value: str) -> str:
    return f"{key}-" + re.sub(r"[^A-Za-z0-9.]+", "_", value)


def worker_count(variants: int) -> int:
    threads = os.getenv("IPA_THREADS")
    if threads:
        try:
            limit = int(threads)
        except ValueError:
            raise ConfigError(f"IPA_THREADS must be an integer, got '{threads}'") from None
    else:
        limit = psutil.cpu_count(logical=False) or 1
    return max(1, min(limit, variants))


class SweepCommand:
    """Train one model per variant of a single config key"""

    name = "sweep"

    def __init__(self, app):
        self.app = app

    def register(self, subparsers):
        parser = subparsers.add_parser(
            self.name,
            help="train config variants and collect results.csv",
            description="Each variant trains in its own run directory under --out; results.csv lists variants "
                        "in order with best val metric, test metric, parameter count and wall time. "
                        "IPA_THREADS caps the worker pool.",
        )
        parser.add_argument("config", help="base experiment config file")
        parser.add_argument("--vary", required=True, help="KEY=LOW..HIGH or KEY=V1,V2,...")
        parser.add_argument("--out", default=None, help="sweep directory (overrides the config's 'out')")

    def run(self, args):
        base = load_config(args.config)
        key, values = parse_vary(args.vary)
        variants = [(variant_id(key, value), value, base.override(key, value)) for value in values]
        out_dir = args.out or base.resolve_path(base.out)
        store = RunStore(out_dir)

        shared = None if key in DATA_KEYS else prepare_data(base)
        workers = worker_count(len(variants))
        logger.info(f"Sweeping {key} over {values} with {workers} worker(s)")

        def run_variant(item: Tuple[str, str, ExperimentConfig]):
            name, value, config = item
            prepared: PreparedData = shared or prepare_data(config)
            result = run_experiment(config, store.path(name), prepared)
            task = result.model.config.task
            return {
                "variant": name,
                "key": key,
                "value": value,
                "model": str(result.model.config.code),
                "metric": "logloss" if task is Task.CLASSIFICATION else "rmse",
                "best_val_metric": result.history.best_metric,
                "val_auc": result.val["auc"],
                "test_metric": result.headline(result.test),
                "test_metric_name": "auc" if task is Task.CLASSIFICATION else "rmse",
                "test_logloss": result.test["logloss"],
                "params": result.n_params,
                "epochs": len(result.history),
                "wall_time": result.wall_time,
            }

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_variant, item) for item in variants]
            rows = [future.result() for future in futures]

        frame = pd.DataFrame(rows)
        path = store.write_table(frame, RESULTS_FILE)
        logger.info(f"Wrote {len(rows)} sweep rows to {path}")
        print(frame.to_string(index=False))


def setup(app):
    app.add_command(SweepCommand(app))
