"""Exception hierarchy. The CLI maps each family to an exit code."""


class EcplfError(Exception):
    """Base class for all package errors."""


class ConfigError(EcplfError, ValueError):
    """Invalid run configuration or arguments."""


class DataError(EcplfError, ValueError):
    """Malformed, missing or insufficient input data."""


class InsufficientHistoryError(DataError):
    """Not enough history to cover a requested lag."""

    def __init__(self, lag, message=None):
        self.lag = lag
        super().__init__(message or f"insufficient history for lag {lag}")


class NumericalError(EcplfError, ArithmeticError):
    """A numerical routine failed in a way that cannot be recovered."""
