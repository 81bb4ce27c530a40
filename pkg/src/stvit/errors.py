"""Exception taxonomy shared by every module."""


class StvitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StvitError):
    """Operands have inconsistent extents; the message names both shapes."""


class ConfigError(StvitError):
    """A configuration value is invalid or internally inconsistent."""


class NumericError(StvitError):
    """A numeric contract was violated (NaN input, overflow, empty softmax row)."""
