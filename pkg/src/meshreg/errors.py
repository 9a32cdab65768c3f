"""Exception hierarchy shared by all meshreg modules."""


class MeshRegError(Exception):
    """Base class for all errors raised by meshreg."""


class DomainError(MeshRegError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class FrameMismatchError(MeshRegError, ValueError):
    """A point was used with a transform or camera of a different frame."""


class NumericError(MeshRegError, ArithmeticError):
    """An iterative numeric routine failed to converge."""


class EstimationError(MeshRegError):
    """A closed-form estimate could not be computed (degenerate input)."""


class OptimizationError(MeshRegError):
    """Nonlinear refinement diverged.

    ``last_iterate`` holds the best state reached before failure.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class FormatError(MeshRegError, ValueError):
    """A file could not be parsed or does not match its declared layout."""


class ConfigError(MeshRegError, ValueError):
    """A configuration document is invalid."""


class InsufficientDataError(MeshRegError, ValueError):
    """Too few points, views or shared observations for an estimate."""
