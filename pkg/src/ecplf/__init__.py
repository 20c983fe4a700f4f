"""Probabilistic load forecasting with beta-kernel empirical copulas."""

from .exceptions import ConfigError, DataError, EcplfError, InsufficientHistoryError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "EcplfError",
    "ConfigError",
    "DataError",
    "InsufficientHistoryError",
    "NumericalError",
    "__version__",
]
