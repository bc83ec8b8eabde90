"""Exception types shared across the package."""


class BilatError(Exception):
    """Base class for all package errors."""


class ConfigError(BilatError):
    """Invalid configuration file, key, or experiment plan."""


class NonFinite(BilatError):
    """A simulation update produced a NaN or infinity."""


class SimulationDiverged(BilatError):
    """A rollout left the configured safety bounds."""


class LengthMismatch(BilatError):
    """Sequence lengths are incompatible (e.g. decimation factor does not divide)."""


class EmptyDataset(BilatError):
    """Dataset construction received no trials or no rows."""


class SchemaError(BilatError):
    """A persisted file does not match its expected column schema."""


class ShapeMismatch(BilatError):
    """An array argument has the wrong dimensions for the model scheme."""


class SchemeMismatch(BilatError):
    """An operation was requested for a scheme that does not support it."""


class WindowTooShort(BilatError):
    """Training window shorter than the rollout depth requires."""


class DivergedLoss(BilatError):
    """Training loss became non-finite."""


class MissingSlaveEstimate(BilatError):
    """Command feedback requested but the scheme produces no slave estimate."""


class MissingPredictions(BilatError):
    """Variance metrics requested on a log without predicted slave states."""


class DegenerateDenominator(BilatError):
    """A variance ratio has a zero denominator on at least one joint."""


class TooShort(BilatError):
    """Signal too short for the requested cycle statistics."""


class MissingLogs(BilatError):
    """Report aggregation found absent episode logs."""
