"""Exception hierarchy.

Every error carries a stable ``category`` slug so the CLI can emit a
one-line machine-parseable failure (``<category>: <message>``).
"""


class CnnKitError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class ShapeError(CnnKitError):
    """Tensor dimensions do not match what an operation requires."""

    category = "shape-mismatch"


class NumericFaultError(CnnKitError):
    """A kernel produced, or was fed, non-finite values."""

    category = "numeric-fault"


class PreconditionError(CnnKitError):
    """An operation's documented precondition was violated."""

    category = "precondition"


class DegenerateStatisticsError(CnnKitError):
    """Batch statistics undefined (normalization axis has < 2 elements)."""

    category = "degenerate-statistics"


class ConfigError(CnnKitError):
    """Invalid configuration value."""

    category = "config"


class StateError(CnnKitError):
    """Operation invoked in the wrong order (e.g. backward before forward)."""

    category = "state"


class InternalConsistencyError(CnnKitError):
    """Cached state handed back to an operation is corrupt."""

    category = "internal-consistency"


class DatasetStructureError(CnnKitError):
    """Dataset directory layout violates the class-per-folder contract."""

    category = "dataset-structure"


class StratificationError(CnnKitError):
    """A class is too small to be split across train/val/test."""

    category = "stratification"


class DecodeError(CnnKitError):
    """An image file could not be decoded."""

    category = "decode"


class LabelingError(CnnKitError):
    """A class label is outside the valid index range."""

    category = "labeling"


class EvaluationError(CnnKitError):
    """Metrics requested from an empty accumulator."""

    category = "evaluation"


class CheckpointError(CnnKitError):
    """Checkpoint file is corrupt, truncated, or has a bad magic/version."""

    category = "corrupt-checkpoint"


class CompatibilityError(CnnKitError):
    """Checkpoint and dataset/manifest disagree (e.g. class sets differ)."""

    category = "compatibility"
