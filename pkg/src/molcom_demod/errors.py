"""
Exception types shared across the toolkit.

The CLI maps them to exit codes:
    DomainError  -> 1 (usage)
    DataError    -> 2 (data error)
    NumericError -> 3 (numeric failure)
"""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DataError(ValueError):
    """Input data is malformed, inconsistent or has the wrong shape."""


class ConfigError(DataError):
    """A configuration document or value is invalid."""


class NumericError(RuntimeError):
    """A computation produced non-finite values or failed to converge."""


class FitError(NumericError):
    """Channel parameter fitting failed."""
