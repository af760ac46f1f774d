"""Exception hierarchy shared across the library."""


class VitraError(Exception):
    """Base class for all library errors."""


class DimensionError(VitraError):
    """Shapes or axes are incompatible with the requested operation."""


class ConfigError(VitraError):
    """A model or run configuration is internally inconsistent."""


class UsageError(VitraError):
    """The API was called in an unsupported way (bad tape, bad label, ...)."""


class NumericError(VitraError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""


class DataError(VitraError):
    """A dataset on disk violates the expected layout or is unusable."""
