"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError (and subclasses) -> 2, GuardError -> 3.
"""


class KgrbrError(Exception):
    """Base class for all package errors."""


class ConfigError(KgrbrError):
    """Invalid configuration: bad hyperparameters, missing inputs, bad flags."""


class DataError(KgrbrError):
    """Malformed or inconsistent data encountered while running."""


class ParseError(DataError):
    """A file could not be parsed. Carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(DataError):
    """A binary or structured file has the wrong format or version."""


class DimensionError(DataError):
    """Model dimensions do not match the graph they are used with."""


class GuardError(KgrbrError):
    """An internal guard fired (search truncation under --strict, oracle mismatch)."""


class InstanceTooLargeError(KgrbrError):
    """An exhaustive oracle exceeded its state budget."""
