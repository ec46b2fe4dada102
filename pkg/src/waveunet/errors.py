"""Exception hierarchy shared across the package."""


class WaveUNetError(Exception):
    """Base class for all errors raised by this package."""


class SizeError(WaveUNetError):
    """A feature map is too small for an operation, or frame counts do not line up."""


class ShapeError(WaveUNetError):
    """Channel or rank mismatch between operands."""


class ConfigError(WaveUNetError):
    """A model or training configuration violates one of its invariants."""


class UsageError(WaveUNetError):
    """An API was called in a state where it is not allowed."""


class DecodeError(WaveUNetError):
    """A WAV or checkpoint file could not be parsed."""


class NumericalError(WaveUNetError):
    """Non-finite values appeared during optimisation."""


class EmptyStatsError(WaveUNetError):
    """Summary statistics were requested for a set with no scorable segments."""


class DataError(WaveUNetError):
    """A dataset directory is missing files or contains inconsistent tracks."""
