"""Exception hierarchy shared by every module."""


class DigrapError(Exception):
    """Base class for all package errors."""


class ConfigError(DigrapError, ValueError):
    """Invalid configuration or argument value."""


class ShapeError(DigrapError, ValueError):
    """Mismatched lengths, shapes or parameter layouts."""


class NumericError(DigrapError, ArithmeticError):
    """Non-finite values or a failed factorization."""


class StateError(DigrapError, RuntimeError):
    """Operation called in the wrong lifecycle state."""
