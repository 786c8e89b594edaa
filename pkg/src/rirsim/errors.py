"""Exception types shared across the package."""


class RirError(Exception):
    """Base class for all rirsim errors."""


class DomainError(RirError, ValueError):
    """An input lies outside the domain of a formula."""


class ConfigurationError(RirError, ValueError):
    """Inconsistent or invalid run configuration."""


class ResourceError(RirError, MemoryError):
    """A requested grid or trace would exceed configured size limits."""


class NumericalBlowupError(RirError, FloatingPointError):
    """The integrated state became non-finite."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NotFoundError(RirError, LookupError):
    """A requested feature (maximum, gain peak, ...) is absent from a trace."""
