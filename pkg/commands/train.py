# commands/train.py - Train one model from an experiment config
import json
import logging

from utils.config import HISTORY_HELP, load_config
from utils.experiment import run_experiment

logger = logging.getLogger(__name__)


class TrainCommand:
    """Train a model and write its run directory"""

    name = "train"

    def __init__(self, app):
        self.app = app

    def register(self, subparsers):
        parser = subparsers.add_parser(
            self.name,
            help="train one model from a key = value config",
            description="Writes history.jsonl, model.ckpt, resolved.cfg, split.txt and run.log into the run "
                        "directory and prints the final validation metrics as one JSON line.",
            epilog=HISTORY_HELP,
        )
        parser.add_argument("config", help="experiment config file")
        parser.add_argument("--out", default=None, help="run directory (overrides the config's 'out')")

    def run(self, args):
        config = load_config(args.config)
        run_dir = args.out or config.resolve_path(config.out)
        result = run_experiment(config, run_dir)

        summary = {
            "run_dir": run_dir,
            "model": str(result.model.config.code),
            "epochs": len(result.history),
            "best_epoch": result.history.best_epoch,
            "params": result.n_params,
            "val": result.val,
        }
        logger.info(f"Finished {summary['model']} after {summary['epochs']} epochs (best epoch {summary['best_epoch']})")
        print(json.dumps(summary))


def setup(app):
    app.add_command(TrainCommand(app))
