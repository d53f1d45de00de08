"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class UnsolvableError(ValueError):
    """No parameter value can reproduce the requested anchor point."""


class DegenerateInputError(ValueError):
    """Input is mathematically degenerate for the requested operation.

    Examples: calibrating a Rabi frequency from an on-resonance anchor
    (the Rabi frequency cancels), normalizing by a zero reference
    contrast, or seeding a fit with two coincident peak centers.
    """


class ConvergenceError(RuntimeError):
    """An iterative fit stopped without meeting its convergence criterion.

    Carries the best parameter vector seen so far in ``best`` and the
    matching cost in ``cost`` so callers can inspect or reuse it.
    """

    def __init__(self, message: str, best=None, cost: float | None = None):
        super().__init__(message)
        self.best = best
        self.cost = cost


class ParseError(ValueError):
    """A text input could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
