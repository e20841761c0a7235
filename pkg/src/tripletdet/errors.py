"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError and its
subclasses -> 3.
"""


class TripletDetError(Exception):
    """Base class for all package errors."""


class ConfigError(TripletDetError):
    """Invalid or inconsistent configuration."""


class DataError(TripletDetError):
    """Problem with input data files or in-memory datasets."""


class SchemaError(DataError):
    """A JSON file does not conform to its documented schema."""


class VocabularyError(DataError):
    """An id or label vector is inconsistent with the vocabulary."""


class EvaluationError(DataError):
    """Predictions and ground truth cannot be evaluated together."""


class NumericError(TripletDetError):
    """Non-finite values encountered in a forward pass."""
