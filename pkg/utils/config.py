# utils/config.py - Configuration constants and the key = value experiment config
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

from ipa.aggregate import CombineMode
from ipa.codes import ClassifierSpec, ModelConfig, Task, resolve_model
from ipa.errors import ConfigError

logger = logging.getLogger(__name__)

# Model defaults
EMBEDDING_SIZE = 16
DROPOUT = 0.2

# Training defaults
LEARNING_RATE = 1e-3
BATCH_SIZE = 2048
EPOCHS = 20
PATIENCE = 3
SPLIT = (8.0, 1.0, 1.0)

# Data defaults
DATA_FORMATS = ("synthetic_csv", "criteo_tsv", "categorical_csv")
HASH_BUCKETS = 100_000
NUMERIC_BUCKETS = 256
SYNTHETIC_NOISE = 0.1

# Run directory layout
HISTORY_FILE = "history.jsonl"
CHECKPOINT_FILE = "model.ckpt"
RESOLVED_CONFIG_FILE = "resolved.cfg"
SPLIT_MANIFEST_FILE = "split.txt"
RUN_LOG_FILE = "run.log"
RESULTS_FILE = "results.csv"
COLLAPSE_FILE = "collapse.csv"
LAYER_STRENGTH_FILE = "layer_strength.csv"
CHECKPOINT_VERSION = 1

# Logging configuration
LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "bold_red",
}

# Process exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

HISTORY_HELP = (
    "history.jsonl holds one JSON object per epoch with keys: epoch, train_loss, val_loss, "
    "val_auc (null for regression), val_rmse (null for classification), alpha (per aggregated layer), "
    "weight_norms (||W||_F per interaction layer, layer 2 first), alpha_weight ({layer: |alpha_l| * ||W_(l-1)||_F})."
)

TRUE_WORDS = ("true", "yes", "1", "on")
FALSE_WORDS = ("false", "no", "0", "off")


def parse_bool(text: str) -> bool:
    word = text.strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"expected true/false, got '{text}'")


def parse_widths(text: str) -> Tuple[int, ...]:
    widths = tuple(int(w) for w in text.replace("/", ",").split(",") if w.strip())
    if not widths or min(widths) < 1:
        raise ValueError(f"widths must be positive integers, got '{text}'")
    return widths


def parse_split(text: str) -> Tuple[float, ...]:
    ratios = tuple(float(r) for r in text.split(":"))
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ValueError(f"split needs three positive ratios like 8:1:1, got '{text}'")
    return ratios


def parse_choice(*choices: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got '{text.strip()}'")
        return value
    return parse


def _optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none") else int(text)


def bounded(parse: Callable[[str], float], low: float, inclusive: bool = True) -> Callable[[str], float]:
    """Parser that rejects values below `low` (or equal to it when not inclusive)"""
    def check(text: str):
        value = parse(text)
        if not (value > low or (inclusive and value == low)):
            bound = ">=" if inclusive else ">"
            raise ValueError(f"must be {bound} {low}, got {value}")
        return value
    return check


# key -> (attribute, parser)
CONFIG_KEYS: Dict[str, Tuple[str, Callable[[str], object]]] = {
    "model": ("model", str.strip),
    "data": ("data", str.strip),
    "data_format": ("data_format", parse_choice(*DATA_FORMATS)),
    "task": ("task", parse_choice("auto", "classification", "regression")),
    "K": ("k", int),
    "L": ("depth", int),
    "H": ("global_width", parse_widths),
    "include_self": ("include_self", parse_bool),
    "symmetric_share": ("symmetric_share", parse_bool),
    "residual": ("residual", parse_bool),
    "classifier": ("classifier", str.strip),
    "first_order": ("first_order", parse_bool),
    "term_scalar_pool": ("term_scalar_pool", parse_bool),
    "combine_mode": ("combine_mode", parse_choice("auto", "sum", "concat")),
    "dropout": ("dropout", float),
    "lr": ("lr", bounded(float, 0.0, inclusive=False)),
    "batch_size": ("batch_size", bounded(int, 1)),
    "epochs": ("epochs", bounded(int, 1)),
    "patience": ("patience", bounded(int, 0)),
    "seed": ("seed", int),
    "split": ("split", parse_split),
    "max_rows": ("max_rows", _optional_int),
    "hash_buckets": ("hash_buckets", int),
    "numeric_buckets": ("numeric_buckets", int),
    "out": ("out", str.strip),
}


@dataclass
class ExperimentConfig:
    """One experiment. Model-shape keys left as None fall back to the preset or model defaults."""

    data: str = ""
    model: str = "PFL"
    data_format: str = "synthetic_csv"
    task: str = "auto"
    k: int = EMBEDDING_SIZE
    depth: Optional[int] = None
    global_width: Optional[Tuple[int, ...]] = None
    include_self: Optional[bool] = None
    symmetric_share: Optional[bool] = None
    residual: Optional[bool] = None
    classifier: Optional[str] = None
    first_order: Optional[bool] = None
    term_scalar_pool: Optional[bool] = None
    combine_mode: str = "auto"
    dropout: float = DROPOUT
    lr: float = LEARNING_RATE
    batch_size: int = BATCH_SIZE
    epochs: int = EPOCHS
    patience: int = PATIENCE
    seed: int = 0
    split: Tuple[float, ...] = SPLIT
    max_rows: Optional[int] = None
    hash_buckets: int = HASH_BUCKETS
    numeric_buckets: int = NUMERIC_BUCKETS
    out: str = "runs/latest"
    source: Optional[str] = field(default=None, compare=False)

    def override(self, key: str, raw: str) -> "ExperimentConfig":
        """Copy with one key replaced, parsed exactly as in a config file"""
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key '{key}' (known: {', '.join(config_keys())})")
        attribute, parser = CONFIG_KEYS[key]
        try:
            value = parser(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for '{key}': {e}") from None
        return replace(self, **{attribute: value})

    def resolve_path(self, path: str) -> str:
        if os.path.isabs(path) or self.source is None:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.source)), path)

    def model_config(self, vocab_sizes, task: Task) -> ModelConfig:
        overrides = {"k": self.k, "dropout": self.dropout}
        for attribute in ("depth", "include_self", "symmetric_share", "first_order", "term_scalar_pool"):
            value = getattr(self, attribute)
            if value is not None:
                overrides[attribute] = value
        if self.global_width is not None:
            overrides["global_width"] = self.global_width
        if self.classifier is not None:
            overrides["classifier"] = ClassifierSpec.parse(self.classifier)
        if self.combine_mode != "auto":
            overrides["combine_mode"] = CombineMode(self.combine_mode)
        config = resolve_model(self.model, **overrides).bind(vocab_sizes, task)
        if self.residual is not None and self.residual != config.residual:
            raise ConfigError(f"residual={str(self.residual).lower()} contradicts model code {config.code}")
        return config

    def to_text(self, model: Optional[ModelConfig] = None) -> str:
        """Flat key = value text; with a model config, every model key is written resolved"""
        values = {}
        for key, (attribute, _) in CONFIG_KEYS.items():
            values[key] = getattr(self, attribute)
        values["data"] = self.resolve_path(self.data)
        values["out"] = self.resolve_path(self.out)
        if model is not None:
            values.update({
                "K": model.k,
                "L": model.depth,
                "H": model.global_width,
                "include_self": model.include_self,
                "symmetric_share": model.symmetric_share,
                "residual": model.residual,
                "classifier": str(model.classifier),
                "first_order": model.first_order,
                "term_scalar_pool": model.term_scalar_pool,
                "combine_mode": model.combine_mode.value if model.combine_mode else "auto",
                "dropout": model.dropout,
                "task": model.task.value,
            })
        lines = []
        for key, value in values.items():
            if value is None:
                continue
            lines.append(f"{key} = {_format_value(value, key)}")
        return "\n".join(lines) + "\n"


def _format_value(value, key: str) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if key == "split":
        return ":".join(f"{r:g}" for r in value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, source: Optional[str] = None) -> ExperimentConfig:
    config = ExperimentConfig(source=source)
    seen: Dict[str, int] = {}
    where = source or "<config>"
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{where}:{number}: expected 'key = value', got '{raw_line.strip()}'")
        if key in seen:
            raise ConfigError(f"{where}:{number}: duplicate key '{key}' (first set on line {seen[key]})")
        seen[key] = number
        try:
            config = config.override(key, value)
        except ConfigError as e:
            raise ConfigError(f"{where}:{number}: {e}") from None
    if not config.data:
        raise ConfigError(f"{where}: the 'data' key is required")
    return config


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    logger.debug(f"Loaded experiment config from {path}")
    return parse_config(text, source=path)


def config_keys() -> List[str]:
    return list(CONFIG_KEYS)
