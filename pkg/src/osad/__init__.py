"""Open-set detection toolkit: global context block, localization-quality
proposals, prototype contrastive learning and open-set metrics."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .errors import (  # noqa: E402
    DegenerateInputError,
    InvalidArgumentError,
    InvalidStateError,
    OsadError,
    TrainingFailureError,
    UndefinedMetricError,
)
from .pcl import UNKNOWN  # noqa: E402

__all__ = [
    "BACKEND",
    "UNKNOWN",
    "DegenerateInputError",
    "InvalidArgumentError",
    "InvalidStateError",
    "OsadError",
    "TrainingFailureError",
    "UndefinedMetricError",
]
