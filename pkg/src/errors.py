"""Exception hierarchy shared by every subsystem."""


class FusedNmtError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FusedNmtError, ValueError):
    """An operation received operands whose shapes do not agree."""


class ConfigError(FusedNmtError, ValueError):
    """Invalid, unknown or contradictory configuration."""


class CheckpointError(FusedNmtError):
    """A checkpoint container is missing, corrupt or incompatible."""


class TrainingError(FusedNmtError):
    """Training cannot continue (NaN gradients, bad backward call, ...)."""


class DecodingError(FusedNmtError, ValueError):
    """Invalid decoding or scoring request."""
