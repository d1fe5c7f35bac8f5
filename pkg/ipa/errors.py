# ipa/errors.py - Exception hierarchy shared by the library and the CLI


class IpaError(Exception):
    """Base class for every error raised by the ipa package"""


class DimensionError(IpaError):
    """Array shapes do not line up"""


class ContractError(IpaError):
    """A documented precondition was violated"""


class ConfigError(IpaError):
    """Model or experiment configuration is invalid"""


class CodeParseError(ConfigError):
    """A three-letter model code could not be parsed"""

    def __init__(self, text: str, letter: str, position: int):
        self.text = text
        self.letter = letter
        self.position = position
        super().__init__(f"invalid letter '{letter}' at position {position + 1} in model code '{text}'")


class FeatureLookupError(IpaError):
    """A feature id falls outside its field's vocabulary"""


class DataError(IpaError):
    """Dataset could not be read, generated or split"""


class UndefinedMetricError(IpaError):
    """A metric is not defined for the given input"""


class CheckpointError(IpaError):
    """A checkpoint is unreadable or does not match the expected schema"""
