"""Exception hierarchy shared by all modules."""


class LatentBookError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(LatentBookError, ValueError):
    """Invalid parameters or numerical configuration (e.g. unstable time step)."""


class DomainError(LatentBookError, ValueError):
    """A price offset or other argument lies outside the supported domain."""


class UnsupportedParameterizationError(LatentBookError, ValueError):
    """The requested method does not apply to this parameterization."""


class NumericalError(LatentBookError, ArithmeticError):
    """Base for failures of a numerical procedure."""


class NoStationaryStateError(NumericalError):
    """The dynamics admit no stationary state (e.g. nu <= D mu^2)."""


class IterationLimitError(NumericalError):
    """A fixed-point iteration did not converge within the allowed iterations."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ClampedMassError(NumericalError):
    """Too much negative mass had to be clamped away during time stepping."""


class EmptyMarketError(LatentBookError, ValueError):
    """Supply and demand do not cross on the grid."""


class SaturationError(LatentBookError, ValueError):
    """The extra volume pushes the clearing price off the grid."""

    def __init__(self, message, max_fillable):
        super().__init__(message)
        self.max_fillable = max_fillable


class NormalizationError(LatentBookError, ValueError):
    """Weights that should sum to one do not."""


class ParseError(LatentBookError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(LatentBookError, ValueError):
    """Input parsed correctly but violates a structural invariant."""


class FitError(LatentBookError, ValueError):
    """Least-squares fit impossible on the requested window."""
