"""Exception types shared across the package."""


class SpinSqueezeError(Exception):
    """Base class for all package errors."""


class NormalizationError(SpinSqueezeError, ValueError):
    pass


class DomainError(SpinSqueezeError, ValueError):
    """An argument lies outside the interval where an operation is defined."""


class RegimeError(SpinSqueezeError, ValueError):
    """Exact curve data requested where it is not a valid lower bound."""


class UndefinedSqueezingError(SpinSqueezeError, ValueError):
    pass


class InvalidRecordError(SpinSqueezeError, ValueError):
    """A measurement record failed validation; ``field`` names the culprit."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericalFailure(SpinSqueezeError, RuntimeError):
    """A solver failed to reach its accuracy target.

    ``residual`` carries the best accuracy that was achieved, when known.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class VerificationError(NumericalFailure):
    """A computed result violated an invariant that was checked on the fly."""
