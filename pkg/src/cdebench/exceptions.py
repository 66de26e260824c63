"""Exception types raised across the package."""


class CdeBenchError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CdeBenchError, ValueError):
    pass


class DimensionError(CdeBenchError, ValueError):
    pass


class TrainingError(CdeBenchError, RuntimeError):
    pass


class NotFittedError(CdeBenchError, RuntimeError):
    pass


class UnsupportedModelError(CdeBenchError, ValueError):
    pass


class DegenerateNeighborhoodError(CdeBenchError, ValueError):
    """Too few distinct design points carry kernel weight near the target."""


class CriterionUndefinedError(CdeBenchError, ValueError):
    pass


class InfeasibleDimensionError(CdeBenchError, MemoryError):
    """The sphere grid for the direction criterion would not fit in memory."""


class SelectionError(CdeBenchError, RuntimeError):
    pass
