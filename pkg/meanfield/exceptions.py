from __future__ import annotations


class MeanFieldError(Exception):
    """Base class for every error raised by the numerical core."""


class ContractViolation(MeanFieldError, ValueError):
    """An operation was called outside its precondition."""


class NumericalError(MeanFieldError, ArithmeticError):
    """A computation produced NaN or infinite values."""

    def __init__(self, message: str, **context):
        self.context = context
        if context:
            details = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class SolverConfigurationError(MeanFieldError):
    """The requested discretisation or minimisation rule cannot be used."""


class SchemeError(MeanFieldError):
    """The forward scheme produced a negative density."""


class ExtinctionError(MeanFieldError):
    """The survival probability hit the mass floor; the conditional flow is undefined there."""

    def __init__(self, first_index: int, mass: float):
        self.first_index = first_index
        self.mass = mass
        super().__init__(
            f"Survival mass {mass:.3e} at grid index {first_index} is at or below the mass floor."
        )
