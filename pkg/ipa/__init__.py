# ipa/ - Interaction / Pooling / Aggregation CTR model library
from ipa.codes import ModelConfig, ModelCode, Task, count_params, parse_code, preset, resolve_model
from ipa.data import TabularDataset, generate_synthetic, split
from ipa.model import IpaModel
from ipa.training import train

__version__ = "1.0.0"

__all__ = [
    "IpaModel",
    "ModelCode",
    "ModelConfig",
    "TabularDataset",
    "Task",
    "count_params",
    "generate_synthetic",
    "parse_code",
    "preset",
    "resolve_model",
    "split",
    "train",
]
