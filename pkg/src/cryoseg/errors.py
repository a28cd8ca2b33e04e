class CryosegError(Exception):
    """Base class for package errors."""


class ValidationError(CryosegError, ValueError):
    """Bad argument, shape or configuration value."""


class DatasetIntegrityError(ValidationError):
    """Dataset folder does not match the expected image/mask layout."""


class CheckpointFormatError(CryosegError):
    """Checkpoint archive is unreadable or carries an unknown format tag."""


class TrainingDivergedError(CryosegError, RuntimeError):
    """Loss became non-finite during training."""
