"""Exception hierarchy shared across the package.

The CLI maps each class to a one-line machine-parsable category prefix, so
raising the right type here is part of the error contract.
"""


class AugraphError(Exception):
    """Base class for all package-specific failures."""

    category = "internal"


class ConfigError(AugraphError):
    """Invalid configuration: bad rule tables, option values, presets."""

    category = "config"


class DataError(AugraphError):
    """Invalid input data: malformed dataset files, shape mismatches."""

    category = "data"


class GenerationError(AugraphError):
    """Synthetic-benchmark generation cannot satisfy its targets."""

    category = "generation"


class CheckpointError(AugraphError):
    """Checkpoint file is malformed or inconsistent with the model."""

    category = "checkpoint"


class TrainingError(AugraphError):
    """Training aborted, e.g. the loss became non-finite."""

    category = "training"


class UsageError(AugraphError):
    """API misuse, e.g. an unknown gradient-check identifier."""

    category = "usage"
