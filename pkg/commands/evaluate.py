# commands/evaluate.py - Test-set evaluation of a trained run
import json
import logging
import os

from ipa.collapse import layer_strength
from ipa.errors import DataError
from ipa.training import evaluate
from utils.config import (CHECKPOINT_FILE, LAYER_STRENGTH_FILE, RESOLVED_CONFIG_FILE, SPLIT_MANIFEST_FILE,
                          load_config)
from utils.experiment import prepare_data
from utils.storage import RunStore, load_checkpoint

logger = logging.getLogger(__name__)

EVALUATION_FILE = "evaluation.json"


class EvaluateCommand:
    """Reload a run's checkpoint and data split, then score the test partition"""

    name = "evaluate"

    def __init__(self, app):
        self.app = app

    def register(self, subparsers):
        parser = subparsers.add_parser(
            self.name,
            help="evaluate a trained run on its test split",
            description="Reads model.ckpt, resolved.cfg and split.txt from RUN_DIR, prints test AUC/Logloss or "
                        "RMSE as one JSON line and writes evaluation.json and layer_strength.csv there.",
        )
        parser.add_argument("run_dir", help="directory written by 'train'")
        parser.add_argument("--partition", choices=("train", "val", "test"), default="test")

    def run(self, args):
        store = RunStore(args.run_dir)
        model = load_checkpoint(store.path(CHECKPOINT_FILE))
        config = load_config(store.path(RESOLVED_CONFIG_FILE))
        prepared = prepare_data(config)

        if os.path.exists(store.path(SPLIT_MANIFEST_FILE)):
            manifest = store.read_split_manifest()
            indices = manifest.get(args.partition)
            if indices is None or (len(indices) and indices.max() >= len(prepared.dataset)):
                raise DataError(f"split manifest in {args.run_dir} does not fit the dataset")
        else:
            indices = prepared.partitions[("train", "val", "test").index(args.partition)]
        dataset = prepared.dataset.subset(indices)
        if list(dataset.vocab_sizes()) != list(model.vocab_sizes):
            raise DataError("dataset schema does not match the checkpoint")

        metrics = evaluate(model, dataset, config.batch_size)
        payload = {"run_dir": args.run_dir, "partition": args.partition, "rows": len(dataset), **metrics}
        store.write_json(payload, EVALUATION_FILE)
        store.write_table(layer_strength(model, dataset, config.batch_size), LAYER_STRENGTH_FILE)
        logger.info(f"Evaluated {model.config.code} on {len(dataset)} {args.partition} rows")
        print(json.dumps(payload))


def setup(app):
    app.add_command(EvaluateCommand(app))
