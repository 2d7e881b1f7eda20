"""Exception types shared across the toolkit."""


class DualaugError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(DualaugError):
    """Raster dimensions or channel counts do not match what an operation needs."""


class ConfigError(DualaugError):
    """A plan, spec, or CLI configuration is invalid."""


class DataError(DualaugError):
    """A dataset on disk or in memory violates the expected layout."""
