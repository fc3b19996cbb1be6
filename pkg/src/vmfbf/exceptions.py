"""Exception hierarchy shared by the solver modules."""

from __future__ import annotations


class VmfbfError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(VmfbfError, ValueError):
    """Vectors, metrics or operators of incompatible sizes were combined."""


class ConfigurationError(VmfbfError, ValueError):
    """Invalid algorithm parameters (step sizes, tolerances, schedules)."""


class NumericalError(VmfbfError, ArithmeticError):
    """A scalar sub-solver failed to converge.

    ``component`` holds the index of the offending coordinate when known.
    """

    def __init__(self, message: str, component: int | None = None):
        super().__init__(message)
        self.component = component


class ConvergenceError(VmfbfError, RuntimeError):
    """An inner iterative routine hit its iteration cap."""


class DivergenceError(VmfbfError, RuntimeError):
    """Iterates blew up, usually a sign that the declared hypotheses are wrong."""


class ScheduleViolationError(VmfbfError, RuntimeError):
    """A metric schedule broke its declared bounds during a run."""

    def __init__(self, message: str, n: int, component: int | None = None):
        super().__init__(message)
        self.n = n
        self.component = component
