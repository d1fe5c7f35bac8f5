# commands/generate.py - Synthetic dataset generation
import logging
import os

from ipa.data import (SyntheticSpec, generate_categorical_synthetic, generate_synthetic, save_categorical_csv,
                      save_synthetic_csv)
from ipa.errors import ConfigError
from utils.config import SYNTHETIC_NOISE

logger = logging.getLogger(__name__)


def parse_cardinalities(text: str):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cardinalities must be comma-separated integers, got '{text}'") from None
    if not values or min(values) < 1:
        raise ConfigError(f"cardinalities must be positive, got '{text}'")
    return values


class GenerateCommand:
    """Write a synthetic dataset as CSV"""

    name = "generate"

    def __init__(self, app):
        self.app = app

    def register(self, subparsers):
        parser = subparsers.add_parser(
            self.name,
            help="generate a synthetic dataset",
            description="Cross-term regression data (y = sum of weighted monomials of order <= O plus noise), "
                        "or categorical click data from a planted second-order model.",
        )
        parser.add_argument("--kind", choices=("synthetic", "categorical"), default="synthetic")
        parser.add_argument("--order", type=int, default=3, help="data order O (synthetic)")
        parser.add_argument("--features", type=int, default=10, help="feature count n <= 16 (synthetic)")
        parser.add_argument("--samples", type=int, default=10_000)
        parser.add_argument("--noise", type=float, default=SYNTHETIC_NOISE, help="label noise sigma (synthetic)")
        parser.add_argument("--max-combinations", type=int, default=None,
                            help="sample at most this many combinations per order (off by default)")
        parser.add_argument("--cardinalities", default="1000,100,10,10", help="field cardinalities (categorical)")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--out", required=True, help="output CSV path")

    def run(self, args):
        if args.kind == "synthetic":
            spec = SyntheticSpec(n=args.features, order=args.order, samples=args.samples,
                                 noise_sigma=args.noise, seed=args.seed, max_combinations=args.max_combinations)
            dataset = generate_synthetic(spec)
            writer = save_synthetic_csv
        else:
            dataset = generate_categorical_synthetic(parse_cardinalities(args.cardinalities), args.samples,
                                                     seed=args.seed)
            writer = save_categorical_csv

        directory = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(directory, exist_ok=True)
        writer(dataset, args.out)
        logger.info(f"Wrote {len(dataset)} rows to {args.out}")


def setup(app):
    app.add_command(GenerateCommand(app))
