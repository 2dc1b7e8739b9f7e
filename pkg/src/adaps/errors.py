"""Exception hierarchy shared across the package."""


class AdapsError(Exception):
    """Base class for all errors raised by adaps."""


class ConfigurationError(AdapsError, ValueError):
    """Invalid parameters, dimensions or configuration keys."""


class NumericalError(AdapsError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values)."""

    def __init__(self, message, residual=None, iteration=None):
        super().__init__(message)
        self.residual = residual
        self.iteration = iteration


class SingularityError(NumericalError):
    """A linear system that must be solved exactly is singular."""


class ResolutionError(NumericalError):
    """A quadrature grid does not cover the posterior mass."""


class SamplingError(AdapsError):
    """A sampler step failed; carries the index of the failing step."""

    def __init__(self, message, step):
        super().__init__(f"step {step}: {message}")
        self.step = step
