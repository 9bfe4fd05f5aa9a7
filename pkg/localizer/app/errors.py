"""Exception hierarchy shared by the pipeline stages and the CLI."""

from __future__ import annotations


class LocalizerError(Exception):
    """Base exception for every pipeline failure surfaced to the CLI."""


class ConfigError(LocalizerError, ValueError):
    """Raised when a configuration value is invalid or inconsistent."""


class SchemaError(LocalizerError, ValueError):
    """Raised when a dataset file does not carry the manifest's columns."""


class ParseError(LocalizerError, ValueError):
    """Raised when a dataset cell cannot be read as a number."""

    def __init__(self, row_index: int, column: str, value: object):
        super().__init__(f"row {row_index}: column {column!r} is not numeric ({value!r})")
        self.row_index = row_index
        self.column = column


class DataValidationError(LocalizerError, ValueError):
    """Raised when a measurement or a label falls outside its valid range."""


class EmptyInputError(LocalizerError, ValueError):
    """Raised when an operation needs at least one record or sample."""


class ShapeError(LocalizerError, ValueError):
    """Raised when tensor shapes do not fit a layer."""


class StateError(LocalizerError):
    """Raised when a layer is used out of order (e.g. backward before forward)."""


class DivergenceError(LocalizerError):
    """Raised when a loss or a gradient stops being finite."""


class QuantizationError(LocalizerError, ValueError):
    """Raised when a weight tensor cannot be represented at the target precision."""


class ModelMismatchError(LocalizerError, ValueError):
    """Raised when a model, a grid and an input do not belong together."""
