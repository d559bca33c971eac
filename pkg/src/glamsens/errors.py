"""Exception hierarchy shared across the package."""


class GlamError(Exception):
    """Base class for all package errors."""


class DomainError(GlamError, ValueError):
    """An argument lies outside the domain of an operation."""


class InvalidParametersError(GlamError, ValueError):
    """Distribution parameters do not define a valid quantile function."""


class MomentUndefinedError(GlamError, ValueError):
    """A requested moment does not exist for the given shape parameters."""


class SingularDesignError(GlamError, ValueError):
    """The regression design matrix is rank deficient."""


class UndefinedIndexError(GlamError, ValueError):
    """A sensitivity index or metric is undefined (zero variance denominator)."""


class FitError(GlamError, RuntimeError):
    """Model fitting failed to produce a usable solution."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
