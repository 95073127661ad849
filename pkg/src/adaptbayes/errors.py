"""Exception types shared across the package."""


class AdaptBayesError(Exception):
    """Base class for all package errors."""


class InvalidArgument(AdaptBayesError, ValueError):
    """An argument violates a documented precondition."""


class InvalidState(AdaptBayesError, RuntimeError):
    """An operation was attempted in a state that does not allow it."""


class DegeneratePosterior(AdaptBayesError, ArithmeticError):
    """The posterior collapsed: zero total likelihood, zero spread, etc."""


class NumericFailure(AdaptBayesError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""


class ResampleFailure(NumericFailure):
    """Liu-West resampling could not factor the particle covariance."""
