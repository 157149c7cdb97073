"""
Exception types raised by driftlab.

Each error also derives the builtin it specializes, so callers can keep
catching ``ValueError`` / ``IndexError`` / ``RuntimeError`` as usual.
"""


class DriftLabError(Exception):
    """Base class for all driftlab errors."""


class ParameterError(DriftLabError, ValueError):
    """A numeric or structural parameter is outside its allowed range."""


class DimensionError(DriftLabError, ValueError):
    """Tensor shapes do not agree."""


class NumericError(DriftLabError, ArithmeticError):
    """NaN or infinite values where finite ones are required."""


class TargetIndexError(DriftLabError, IndexError):
    """A class index lies outside [0, V)."""


class ConceptIndexError(DriftLabError, IndexError):
    """A concept id lies outside the game's concept space."""


class VocabularyError(DriftLabError, ValueError):
    """A surface token does not belong to the expected language."""


class ContractError(DriftLabError, RuntimeError):
    """A caller broke a precondition of the API (wrong tape, unfrozen model...)."""


class DataError(DriftLabError, ValueError):
    """Empty or malformed data (corpora, metric files)."""


class UndefinedCosineError(DriftLabError, ArithmeticError):
    """Cosine similarity requested for a zero-norm vector."""


class CheckpointError(DriftLabError, ValueError):
    """A checkpoint file is truncated, corrupted or of an unknown version."""


class ConfigError(DriftLabError, ValueError):
    """An experiment configuration file cannot be used."""
