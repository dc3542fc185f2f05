"""Facial action unit recognition with adaptive regions of interest.

The package pairs a small multi-level convolutional backbone with
landmark-anchored, learnable region crops and a relation-graph feature
embedding, and ships a synthetic benchmark plus a training/evaluation CLI
so every mechanism can be exercised end to end on a single CPU.
"""

__version__ = "0.1.0"

from augraph.errors import (
    AugraphError,
    CheckpointError,
    ConfigError,
    DataError,
    GenerationError,
    TrainingError,
    UsageError,
)

__all__ = [
    "AugraphError",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "GenerationError",
    "TrainingError",
    "UsageError",
    "__version__",
]
