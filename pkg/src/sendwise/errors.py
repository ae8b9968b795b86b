"""Exception types shared across the package.

Every error raised on bad input derives from SendwiseError so the CLI can
catch one base class and exit nonzero with a single diagnostic line.
"""


class SendwiseError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(SendwiseError):
    """Operand or example dimensions are inconsistent."""


class NonFiniteInputError(SendwiseError):
    """External input contained NaN or Inf."""


class DegenerateInputError(SendwiseError):
    """Input is structurally valid but has no usable signal (e.g. all-zero CTR)."""


class NumericalFailureError(SendwiseError):
    """A numeric routine failed to converge within its iteration budget."""


class ClockRegressionError(SendwiseError):
    """A pacing decision was requested at a time earlier than the last one."""


class UndefinedMetricError(SendwiseError):
    """The requested metric is undefined on this input (e.g. single-class AUC)."""


class DatasetFormatError(SendwiseError):
    """A dataset file violates the line-delimited record schema."""


class CheckpointError(SendwiseError):
    """A checkpoint file is missing, corrupt, or inconsistent."""


class ConfigSchemaError(SendwiseError):
    """A run config contains unknown keys or ill-typed values."""


class TrainingDivergedError(SendwiseError):
    """Training produced a non-finite loss."""
