"""Exception types shared across the package."""


class MVInpaintError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MVInpaintError):
    """Invalid configuration value, flag combination, or malformed config file."""


class DataError(MVInpaintError):
    """Missing, corrupt, or inconsistent data encountered at runtime."""


class DimensionError(MVInpaintError):
    """Array shapes incompatible with the requested operation."""


class NumericError(MVInpaintError):
    """Non-finite values or a failed numeric validation."""
