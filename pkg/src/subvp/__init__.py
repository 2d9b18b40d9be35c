"""Subtitle-aware viewport prediction for 360-degree video."""

__version__ = "0.1.0"

from ._accel import HAVE_NUMBA, backend  # noqa: E402
from .errors import InvalidInputError, ParseError, ShapeError, TrainingError, ValidationError  # noqa: E402

__all__ = [
    "HAVE_NUMBA",
    "backend",
    "InvalidInputError",
    "ParseError",
    "ShapeError",
    "TrainingError",
    "ValidationError",
    "__version__",
]
