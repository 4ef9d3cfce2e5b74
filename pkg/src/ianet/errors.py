"""Exception types raised across the package."""


class IANetError(Exception):
    """Base class for all library errors."""


class DimensionError(IANetError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(IANetError, ValueError):
    """A configuration value is invalid or inconsistent."""


class UsageError(IANetError, RuntimeError):
    """An API was called in a state where it cannot work."""


class NumericError(IANetError, ArithmeticError):
    """A computation hit a numerically undefined case."""


class TrainingError(IANetError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EvaluationError(IANetError, ValueError):
    """Retrieval evaluation cannot be carried out on the given inputs."""
