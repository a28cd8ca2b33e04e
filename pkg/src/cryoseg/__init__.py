"""Nuclei instance segmentation for H&E cryosections with a Triple U-Net."""

from .errors import (
    CheckpointFormatError,
    CryosegError,
    DatasetIntegrityError,
    TrainingDivergedError,
    ValidationError,
)
from .kernels import BACKEND

__version__ = "0.1.0"
