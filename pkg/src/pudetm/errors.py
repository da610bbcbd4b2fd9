"""Exception hierarchy.

Input problems (``DataError``, ``ConfigError``) map to CLI exit code 2,
numerical failures (``NumericalError`` and subclasses) to exit code 3.
"""


class PUDETMError(Exception):
    """Base class for all package errors."""

    kind = "error"


class DataError(PUDETMError, ValueError):
    """Malformed, non-finite or rank-deficient input data."""

    kind = "data_error"


class ConfigError(PUDETMError, ValueError):
    """Invalid option, feature map or experiment configuration."""

    kind = "config_error"


class DomainError(PUDETMError, ValueError):
    """Argument outside the mathematical domain of a function."""

    kind = "domain_error"


class NumericalError(PUDETMError, ArithmeticError):
    kind = "numerical_error"


class SingularMatrixError(NumericalError):
    """A matrix that must be positive definite is not.

    ``pivot`` is the 0-based index of the failing Cholesky pivot when known.
    """

    kind = "singular_matrix"

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class NonConvergenceError(NumericalError):
    """An iterative solver stopped without meeting its tolerance.

    ``last_iterate`` holds the final iterate for diagnostics.
    """

    kind = "non_convergence"

    def __init__(self, message, last_iterate=None, details=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.details = details or {}


class FeasibilityError(NumericalError):
    """The empirical-likelihood Lagrange system has no interior solution."""

    kind = "infeasible"


class RankError(NumericalError):
    """The negative mean Hessian W of the sandwich estimator is not full rank."""

    kind = "rank_error"


class TieError(PUDETMError, ValueError):
    """The label-switching rule cannot pick an orientation."""

    kind = "tie"
