"""Exception types raised across the package."""


class CEStGMError(Exception):
    """Base class for all package errors."""


class OutOfSupport(CEStGMError, ValueError):
    pass


class InvalidNaturalParameter(CEStGMError, ValueError):
    """A natural parameter lies outside its family's valid region.

    When raised from the Gibbs sampler, ``site`` holds ``(t, a, sweep)``.
    """

    def __init__(self, message, site=None):
        super().__init__(message)
        self.site = site


class SpecFormatError(CEStGMError, ValueError):
    """The model-spec document could not be parsed."""


class ValidationError(CEStGMError, ValueError):
    """A compatibility constraint on the parameters is violated."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class SymmetryViolation(ValidationError):
    pass


class SelfCouplingAtLagZero(SymmetryViolation):
    pass


class DimensionMismatch(ValidationError):
    pass


class DuplicateEntry(ValidationError):
    pass


class GridCapExceeded(CEStGMError):
    pass


class UnboundedEnvelope(CEStGMError):
    pass


class UnsupportedOrder(CEStGMError):
    pass


class NoConvergence(CEStGMError):
    def __init__(self, max_iter, residual):
        super().__init__(
            f"power iteration did not converge in {max_iter} iterations "
            f"(last residual {residual:.3e})"
        )
        self.max_iter = max_iter
        self.residual = residual


class NonPositiveIterate(CEStGMError):
    pass


class OracleSizeExceeded(CEStGMError):
    pass


class NormalizationFailure(CEStGMError):
    pass
