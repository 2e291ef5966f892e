"""Exception and warning types shared across the package."""

from __future__ import annotations


class StaError(Exception):
    """Base class for all package errors."""


class DomainError(StaError, ValueError):
    """Input outside the mathematical domain of an operation."""


class CapacityError(StaError):
    """Brute-force enumeration would exceed the configured guard."""


class UnsupportedError(StaError):
    """Operation is not defined for the given parameters (e.g. beta = 0 gradients)."""


class InternalConsistencyError(StaError):
    """Two independent computation routes disagree beyond tolerance."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped at max_iter before reaching its tolerance."""


class SeparabilityWarning(UserWarning):
    """Fast separable convolution requested on a geometry that does not allow it."""
