# ipa/codes.py - Three-letter model codes, model configuration, presets and parameter accounting
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from ipa.aggregate import AggregatorKind, AggSpec, CombineMode
from ipa.errors import CodeParseError, ConfigError
from ipa.interaction import InteractionKind, param_size
from ipa.layers import DEFAULT_GLOBAL_WIDTH, PoolingKind, PoolingSpec

logger = logging.getLogger(__name__)

RESIDUAL_SPELLINGS = ("F'", "F′", "R")


class Task(Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


@dataclass(frozen=True)
class ModelCode:
    interaction: InteractionKind
    pooling: PoolingKind
    residual: bool
    aggregator: AggregatorKind

    def __str__(self):
        pooling = "F'" if self.residual else self.pooling.value
        return f"{self.interaction.value}{pooling}{self.aggregator.value}"


def parse_code(text: str) -> ModelCode:
    """Parse codes such as PFL, WGT, PF'D (or PRD)"""
    raw = text.strip()
    upper = raw.upper()
    if not upper:
        raise CodeParseError(text, "", 0)

    letter = upper[0]
    try:
        interaction = InteractionKind(letter)
    except ValueError:
        raise CodeParseError(text, raw[0], 0) from None

    rest = upper[1:]
    residual = False
    for spelling in RESIDUAL_SPELLINGS:
        if rest.startswith(spelling):
            pooling, residual, rest = PoolingKind.FIELD, True, rest[len(spelling):]
            break
    else:
        if not rest:
            raise CodeParseError(text, "", 1)
        try:
            pooling = PoolingKind(rest[0])
        except ValueError:
            raise CodeParseError(text, rest[0], 1) from None
        rest = rest[1:]

    position = len(upper) - len(rest)
    if len(rest) != 1:
        raise CodeParseError(text, rest[1:2] if len(rest) > 1 else "", position + (1 if rest else 0))
    try:
        aggregator = AggregatorKind(rest)
    except ValueError:
        raise CodeParseError(text, raw[position], position) from None
    return ModelCode(interaction, pooling, residual, aggregator)


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str = "sum"  # sum | linear | mlp
    hidden: Tuple[int, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "ClassifierSpec":
        text = text.strip().lower()
        if text in ("sum", "sumpool", "linear"):
            return cls("linear" if text == "linear" else "sum")
        if text.startswith("mlp"):
            _, _, sizes = text.partition(":")
            try:
                hidden = tuple(int(s) for s in sizes.split(",") if s.strip())
            except ValueError:
                raise ConfigError(f"bad MLP hidden sizes in '{text}'") from None
            if not hidden or min(hidden) < 1:
                raise ConfigError(f"MLP classifier needs positive hidden sizes, got '{text}'")
            return cls("mlp", hidden)
        raise ConfigError(f"unknown classifier '{text}' (expected sum, linear or mlp:64,32)")

    def __str__(self):
        if self.kind == "mlp":
            return "mlp:" + ",".join(str(h) for h in self.hidden)
        return self.kind


@dataclass
class ModelConfig:
    code: ModelCode
    k: int = 16
    depth: int = 4
    global_width: Tuple[int, ...] = (DEFAULT_GLOBAL_WIDTH,)
    include_self: bool = False
    symmetric_share: bool = False
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    first_order: bool = False
    bias: bool = True
    dropout: float = 0.2
    task: Task = Task.CLASSIFICATION
    term_scalar_pool: bool = False
    combine_mode: Optional[CombineMode] = None
    include_first_layer: bool = True
    vocab_sizes: Tuple[int, ...] = ()

    def __post_init__(self):
        if isinstance(self.global_width, int):
            self.global_width = (self.global_width,)
        self.global_width = tuple(int(h) for h in self.global_width)
        self.vocab_sizes = tuple(int(v) for v in self.vocab_sizes)
        if self.k < 1:
            raise ConfigError(f"embedding size K must be >= 1, got {self.k}")
        if self.depth < 1:
            raise ConfigError(f"depth L must be >= 1, got {self.depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.depth == 1 and not self.include_first_layer:
            raise ConfigError("a single-layer model must aggregate its first layer")
        if any(v < 1 for v in self.vocab_sizes):
            raise ConfigError(f"every field needs a vocabulary of at least 1, got {self.vocab_sizes}")

    @property
    def residual(self) -> bool:
        return self.code.residual

    @property
    def num_fields(self) -> int:
        return len(self.vocab_sizes)

    def bind(self, vocab_sizes: Sequence[int], task: Optional[Task] = None) -> "ModelConfig":
        """Copy of this config attached to a dataset schema"""
        return replace(self, vocab_sizes=tuple(vocab_sizes), task=task or self.task)

    def resolved_combine_mode(self) -> CombineMode:
        if self.combine_mode is not None:
            return self.combine_mode
        return CombineMode.SUM if self.code.pooling is PoolingKind.FIELD else CombineMode.CONCAT

    def pooling_spec(self) -> PoolingSpec:
        if not self.vocab_sizes:
            raise ConfigError("model config is not bound to a dataset schema")
        return PoolingSpec(
            kind=self.code.pooling,
            depth=self.depth,
            num_fields=self.num_fields,
            residual=self.code.residual,
            global_width=self.global_width,
            include_self=self.include_self,
            symmetric_share=self.symmetric_share,
        )

    def agg_spec(self) -> AggSpec:
        widths = self.pooling_spec().widths()
        if not self.include_first_layer:
            widths = widths[1:]
        return AggSpec(
            kind=self.code.aggregator,
            mode=self.resolved_combine_mode(),
            widths=widths,
            k=self.k,
            term_scalar_pool=self.term_scalar_pool,
        )

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["code"] = str(self.code)
        data["classifier"] = str(self.classifier)
        data["task"] = self.task.value
        data["combine_mode"] = self.combine_mode.value if self.combine_mode else None
        data["global_width"] = list(self.global_width)
        data["vocab_sizes"] = list(self.vocab_sizes)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        data = dict(data)
        data["code"] = parse_code(data["code"])
        data["classifier"] = ClassifierSpec.parse(data["classifier"])
        data["task"] = Task(data["task"])
        data["combine_mode"] = CombineMode(data["combine_mode"]) if data.get("combine_mode") else None
        data["global_width"] = tuple(data.get("global_width", (DEFAULT_GLOBAL_WIDTH,)))
        data["vocab_sizes"] = tuple(data.get("vocab_sizes", ()))
        return cls(**data)


# Second-order baselines aggregate only their interaction layer, with sum pooling as classifier
_SECOND_ORDER = dict(depth=2, symmetric_share=True, first_order=True, include_first_layer=False)

PRESETS: Dict[str, Dict] = {
    "FM": dict(code="NFD", **_SECOND_ORDER),
    "FwFM": dict(code="WFD", **_SECOND_ORDER),
    "FvFM": dict(code="DFD", **_SECOND_ORDER),
    "FmFM": dict(code="PFD", **_SECOND_ORDER),
    "HOFM": dict(code="NFD", depth=4, symmetric_share=True, first_order=True, include_first_layer=False),
    "xDeepFM-CIN": dict(code="WGT", depth=4, term_scalar_pool=True),
    "DCNv2-CrossNet": dict(code="PF'D", depth=4),
    "PFL": dict(code="PFL", depth=4),
    "WFL": dict(code="WFL", depth=4),
    "DFL": dict(code="DFL", depth=4),
    "PFT": dict(code="PFT", depth=4),
    "PFE": dict(code="PFE", depth=4),
    "PFD": dict(code="PFD", depth=4),
}


def preset_names() -> List[str]:
    return list(PRESETS)


def preset(name: str, **overrides) -> ModelConfig:
    lookup = {key.lower(): key for key in PRESETS}
    key = lookup.get(name.strip().lower())
    if key is None:
        raise ConfigError(f"unknown preset '{name}' (known: {', '.join(preset_names())})")
    settings = dict(PRESETS[key])
    settings.update(overrides)
    settings["code"] = parse_code(settings["code"]) if isinstance(settings["code"], str) else settings["code"]
    return ModelConfig(**settings)


def resolve_model(name_or_code: str, **overrides) -> ModelConfig:
    """A preset name or a bare three-letter code"""
    lookup = {key.lower() for key in PRESETS}
    if name_or_code.strip().lower() in lookup:
        return preset(name_or_code, **overrides)
    return ModelConfig(code=parse_code(name_or_code), **overrides)


def interaction_param_count(config: ModelConfig) -> int:
    s = param_size(config.code.interaction, config.k)
    m = config.num_fields
    if config.code.pooling is PoolingKind.FIELD:
        if config.symmetric_share:
            pairs = m * (m - 1) // 2
        else:
            pairs = m * (m - (0 if config.include_self else 1))
        return (config.depth - 1) * pairs * s
    widths = config.pooling_spec().widths()
    return sum(widths[l] * widths[l - 1] * m * s for l in range(1, config.depth))


def classifier_param_count(config: ModelConfig) -> int:
    r = config.agg_spec().output_size()
    count = 1 if config.bias else 0
    if config.classifier.kind == "linear":
        count += r
    elif config.classifier.kind == "mlp":
        fan_in = r
        for width in config.classifier.hidden:
            count += fan_in * width + width
            fan_in = width
        count += fan_in
    return count


def count_params(config: ModelConfig) -> int:
    vocab = sum(config.vocab_sizes)
    total = vocab * config.k
    total += interaction_param_count(config)
    total += config.agg_spec().n_params()
    total += classifier_param_count(config)
    if config.first_order:
        total += vocab
    return total
