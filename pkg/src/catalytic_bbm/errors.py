"""Exception types shared across the package."""

from __future__ import annotations


class CatalyticBBMError(Exception):
    """Base class for all package errors."""


class ValidationError(CatalyticBBMError, ValueError):
    """Malformed input object (e.g. overlapping or unsorted intervals)."""


class DomainError(CatalyticBBMError, ValueError):
    """Argument outside the domain on which a quantity is defined."""


class NumericalError(CatalyticBBMError, RuntimeError):
    """A numerical procedure failed to converge.

    ``diagnostics`` carries whatever the failing routine knew at the time
    (estimates, error bounds, iteration counts).
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in sorted(self.diagnostics.items()))
        return f"{base} ({extra})"
