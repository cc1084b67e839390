"""Exception types shared across the package."""


class MfbdError(Exception):
    """Base class for all package errors."""


class DimensionError(MfbdError, ValueError):
    """Shapes of the involved arrays are incompatible."""


class RankDeficiencyError(MfbdError, ArithmeticError):
    """The image is not persistently exciting for the requested filter size."""


class SolverError(MfbdError, RuntimeError):
    """An iterative solver failed to converge.

    Carries the partial solve report (if any) in ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(MfbdError, ValueError):
    """Invalid experiment configuration."""


class DataFormatError(MfbdError, ValueError):
    """A dataset file is malformed or has an unsupported version."""


class MemoryBudgetError(MfbdError, MemoryError):
    """An operation would exceed the configured in-memory budget."""


class MetricError(MfbdError, ValueError):
    """A metric is undefined for the given inputs (e.g. zero-norm estimate)."""
