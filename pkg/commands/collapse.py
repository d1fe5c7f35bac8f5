# commands/collapse.py - Per-field embedding spectra of a trained checkpoint
import logging

from ipa.collapse import collapse_report
from ipa.data import load_dataset
from ipa.errors import DataError, DimensionError
from utils.config import COLLAPSE_FILE, DATA_FORMATS, HASH_BUCKETS, NUMERIC_BUCKETS
from utils.storage import RunStore, load_checkpoint

logger = logging.getLogger(__name__)


class CollapseCommand:
    """Write collapse.csv: one row per field with singular sum, abundance, p95 dimension and spectrum"""

    name = "collapse"

    def __init__(self, app):
        self.app = app

    def register(self, subparsers):
        parser = subparsers.add_parser(
            self.name,
            help="dimensional-collapse report of a checkpoint",
            description="Columns: field_id, cardinality, importance, singular_sum, information_abundance, "
                        "p95_dim, sigma_1..sigma_K. Spectra are weighted by feature frequency in --data.",
        )
        parser.add_argument("checkpoint", help="model.ckpt written by 'train'")
        parser.add_argument("--data", required=True, help="dataset whose feature frequencies weight the spectra")
        parser.add_argument("--data-format", choices=DATA_FORMATS, default="categorical_csv")
        parser.add_argument("--hash-buckets", type=int, default=HASH_BUCKETS)
        parser.add_argument("--numeric-buckets", type=int, default=NUMERIC_BUCKETS)
        parser.add_argument("--max-rows", type=int, default=None)
        parser.add_argument("--seed", type=int, default=0, help="hash seed used when the data was trained on")
        parser.add_argument("--importance-checkpoint", default=None,
                            help="Weighted Field (FwFM-style) checkpoint supplying field importance")
        parser.add_argument("--out", required=True, help="output directory")

    def run(self, args):
        model = load_checkpoint(args.checkpoint)
        importance_model = load_checkpoint(args.importance_checkpoint) if args.importance_checkpoint else None
        dataset = load_dataset(args.data, args.data_format, hash_buckets=args.hash_buckets,
                               numeric_buckets=args.numeric_buckets, max_rows=args.max_rows, seed=args.seed)
        try:
            report = collapse_report(model, dataset, importance_model)
        except DimensionError as e:
            raise DataError(f"checkpoint and dataset disagree: {e}") from e

        store = RunStore(args.out)
        path = store.write_table(report.to_frame(), COLLAPSE_FILE)
        logger.info(f"Wrote collapse report for {len(report.fields)} fields to {path}")
        logger.info(f"Fields by cardinality: {report.by_cardinality}; by importance: {report.by_importance}")


def setup(app):
    app.add_command(CollapseCommand(app))
