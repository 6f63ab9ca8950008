"""Exception types shared across the package."""

from __future__ import annotations


class CatMMVError(Exception):
    """Base class for all package errors."""


class ValidationError(CatMMVError, ValueError):
    """One or more parameter constraints are violated.

    ``violations`` holds every ``(field, constraint)`` pair that failed;
    ``field`` and ``constraint`` mirror the first one for convenience.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = list(violations)
        self.field, self.constraint = self.violations[0]
        text = "; ".join(f"{f} must be {c}" for f, c in self.violations)
        super().__init__(text)


class NumericalFailure(CatMMVError, ArithmeticError):
    """Base class for failures that map to CLI exit code 2."""


class QuadratureFailure(NumericalFailure):
    """Adaptive integration did not reach the requested tolerance."""


class ConditionViolated(NumericalFailure):
    """A hypothesis required by a closed form does not hold."""

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        msg = condition if not detail else f"{condition}: {detail}"
        super().__init__(msg)


class DegenerateWindow(NumericalFailure):
    """A quantity is undefined on an empty time window (t == s)."""


class NonFiniteState(NumericalFailure):
    """A simulated state left the finite range."""

    def __init__(self, message: str, path_index: int | None = None, time: float | None = None):
        self.path_index = path_index
        self.time = time
        super().__init__(message)
