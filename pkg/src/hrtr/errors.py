"""Exception types shared across the package.

The CLI maps each class to a distinct exit code.
"""


class HRTRError(Exception):
    """Base class for all package errors."""


class ConfigError(HRTRError, ValueError):
    """Invalid configuration, hyperparameters, or shape wiring."""


class DataError(HRTRError, ValueError):
    """Malformed, missing, or inconsistent dataset files."""


class NumericFault(HRTRError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""
