"""Exception hierarchy shared by all gembhash modules."""

from __future__ import annotations


class GembError(Exception):
    """Base class for every error raised by gembhash."""

    module = "gembhash"


class FormatError(GembError, ValueError):
    """A file does not follow the expected on-disk layout."""


class DataError(GembError, ValueError):
    """Input values violate a data invariant (non-finite, too few rows, ...)."""


class ConfigError(GembError, ValueError):
    """A parameter or configuration value is out of range."""


class ShapeError(GembError, ValueError):
    """Array dimensions do not match what the model expects."""


class NumericalError(GembError, ArithmeticError):
    """A factorization or decomposition failed."""
