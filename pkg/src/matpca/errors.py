"""Exception types raised across the package."""


class MatpcaError(Exception):
    """Base class for all package errors."""


class ShapeError(MatpcaError, ValueError):
    """Array dimensions do not agree."""


class ArgumentError(MatpcaError, ValueError):
    """An argument is outside its admissible range."""


class NumericalDomainError(MatpcaError, ArithmeticError):
    """A matrix that must be positive definite is not (numerically).

    ``iteration`` is set when the failure happened inside an iterative fit.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InsufficientDataError(MatpcaError, ValueError):
    """Too few (effective) observations for the requested estimate."""


class CapacityError(MatpcaError, ValueError):
    """A dense materialization exceeds its configured size guard."""


class EstimationFailure(MatpcaError, RuntimeError):
    """A robust estimation procedure could not produce an estimate."""
