"""Shared exception types."""


class ValidationError(ValueError):
    """Raised when an input fails a structural or range check."""


class DegenerateInputError(ValueError):
    """Raised when a metric input carries no usable signal (zero variance, coincident points)."""


class StaleRevisionError(RuntimeError):
    """Raised when a mutation targets an outdated project revision."""
