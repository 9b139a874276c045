"""Exception types raised across the package."""


class SccamError(Exception):
    """Base class for all package errors."""


class ShapeError(SccamError, ValueError):
    """Operand dimensions do not line up."""


class ConfigError(SccamError, ValueError):
    """An invalid configuration value (even filter size, r not dividing C, ...)."""


class StateError(SccamError, RuntimeError):
    """An object was used before it was ready, e.g. batch-norm inference without running moments."""


class NonFiniteError(SccamError, FloatingPointError):
    """A NaN or Inf appeared at an operation boundary."""


class ContractError(SccamError, RuntimeError):
    """A caller broke an operation's precondition (non-scalar loss, reused tape, empty positive set)."""


class DataError(SccamError, ValueError):
    """Malformed or insufficient data (ragged CSV, pool shortfall, missing class)."""


class FormatError(SccamError, ValueError):
    """A binary file failed to parse: bad magic, version mismatch, or checksum failure."""
