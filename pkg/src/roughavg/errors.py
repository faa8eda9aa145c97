"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and domain problems exit
with 2, numerical divergence beyond the exclusion budget exits with 3.
"""


class RoughAvgError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RoughAvgError):
    """A grid, factor, schedule, or config field is inconsistent.

    Messages name the offending field and the constraint it violates.
    """


class DomainError(RoughAvgError):
    """An argument is outside its mathematical domain (H, beta, alpha, ...)."""


class DivergenceError(RoughAvgError):
    """A solver produced a non-finite state.

    Carries the step index at which the state first left the finite range.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
