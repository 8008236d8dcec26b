"""Exception types raised across the package."""


class NaimaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(NaimaError, ValueError):
    """Input violates a shape, divisibility or range precondition."""


class DegenerateRangeError(InvalidInputError):
    """Normalization range collapsed (depth_max == depth_min)."""


class ProviderInitError(NaimaError, RuntimeError):
    """Semantic token provider could not be initialized."""


class AttentionBudgetError(InvalidInputError):
    """Attention buffer for the requested input would exceed the configured cap."""


class NumericalError(NaimaError, FloatingPointError):
    """Non-finite values detected; ``level`` names the GTA level if known."""

    def __init__(self, message, level=None):
        if level is not None:
            message = f"level {level}: {message}"
        super().__init__(message)
        self.level = level


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch, sample_id, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, sample {sample_id!r}")
        self.epoch = epoch
        self.sample_id = sample_id


class CheckpointError(NaimaError, OSError):
    """Checkpoint file is corrupt or unreadable; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(NaimaError, ValueError):
    """Unknown key, bad value, or incompatible configuration."""
