"""Exception types shared across the package.

Every exception carries a short machine-readable ``category`` so the CLI can
emit one-line, parsable error reports.
"""


class TrackMILError(Exception):
    """Base class for all library errors."""

    category = "error"


class DimensionError(TrackMILError):
    """Operand shapes are incompatible for the requested operation."""

    category = "dimension"


class ConfigurationError(TrackMILError):
    """A configuration value or parameter shape is invalid."""

    category = "configuration"


class InputError(TrackMILError):
    """A runtime input value is outside its allowed domain."""

    category = "input"


class DataError(TrackMILError):
    """A dataset, feature file, manifest or checkpoint is missing or malformed."""

    category = "data"


class UsageError(TrackMILError):
    """An API was called in an unsupported way."""

    category = "usage"


class UndefinedMetricError(TrackMILError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""

    category = "undefined-metric"


class DivergenceError(TrackMILError):
    """Training produced a non-finite loss."""

    category = "divergence"
