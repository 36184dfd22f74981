# modules/errors.py

from config.app_config import AppConfig


class SentenceSimError(Exception):
    """Base class for every failure the toolkit reports to its caller."""
    exit_code = AppConfig.EXIT_INPUT


class DimensionError(SentenceSimError):
    """Tensor shapes do not agree for the requested operation"""


class ContractError(SentenceSimError):
    """A function was called outside its documented preconditions"""


class ConfigurationError(SentenceSimError):
    """A configuration value violates its invariants"""


class InputError(SentenceSimError):
    """Model or tokenizer input is out of range"""


class DegenerateInputError(SentenceSimError):
    """Input is well-formed but carries no usable signal (all-masked row, zero norm)"""


class DataError(SentenceSimError):
    """A data record holds an invalid value"""


class DataFormatError(SentenceSimError):
    """A file does not follow the expected layout"""


class CorruptionError(SentenceSimError):
    """A checkpoint file is internally inconsistent"""


class NumericalError(SentenceSimError):
    """NaN or Inf appeared in a forward computation"""
    exit_code = AppConfig.EXIT_DIVERGENCE


class UndefinedCorrelationError(SentenceSimError):
    """Correlation requested over a constant vector"""
    exit_code = AppConfig.EXIT_UNDEFINED_METRIC
