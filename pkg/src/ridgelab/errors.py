"""Exception hierarchy shared by all modules and mapped to CLI exit codes."""

from __future__ import annotations


class RidgelabError(Exception):
    """Base class for library errors."""

    exit_code = 2


class PreconditionError(RidgelabError, ValueError):
    """An input violates a documented precondition."""


class ParameterError(PreconditionError):
    """A scalar parameter is out of range."""


class DomainError(PreconditionError):
    """A point lies outside the domain of a function."""


class GeometryError(PreconditionError):
    """Degenerate or infeasible geometry."""


class ShapeError(PreconditionError):
    """Grid fields do not match."""


class ConstructionError(RidgelabError):
    """A construction failed one of its own assertions."""


class EvaluationError(RidgelabError):
    """A user-supplied function returned a non-finite value."""

    exit_code = 3


class NumericError(RidgelabError):
    """An iterative numerical method did not reach its tolerance."""

    exit_code = 3

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConvergenceError(NumericError):
    """A solver hit its iteration cap; carries the best iterate found."""

    def __init__(self, message: str, best=None, history=None):
        super().__init__(message, history)
        self.best = best


class FitError(NumericError):
    """Not enough data points for a regression."""
