"""Exception types shared across the pipeline."""


class PrefloopError(Exception):
    """Base class for all package errors."""


class DimensionError(PrefloopError):
    """Array shape does not match what an operation expects."""


class ConfigurationError(PrefloopError):
    """Invalid task id, config value, or component wiring."""


class TrainingError(PrefloopError):
    """Optimization produced non-finite values or diverged."""


class DataError(PrefloopError):
    """Dataset is empty, inconsistent, or references missing records."""


class StorageError(PrefloopError):
    """A persisted record is corrupt or has an unsupported version."""


class UsageError(PrefloopError):
    """An API was called out of its valid lifecycle."""


class PipelineError(PrefloopError):
    """A pipeline stage cannot proceed (for example no checkpoint passed the filter)."""
