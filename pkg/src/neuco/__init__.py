"""Neural-concatenative singing voice conversion at desk scale."""

from .errors import (
    CorruptionError,
    FormatError,
    NeucoError,
    TrainingError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "NeucoError", "ValidationError", "FormatError", "CorruptionError",
    "TrainingError", "__version__",
]
