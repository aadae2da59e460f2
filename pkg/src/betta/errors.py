"""Exception and warning types shared across the package."""

from __future__ import annotations


class BettaError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(BettaError):
    """A delimited input could not be parsed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EmptyTableError(BettaError):
    """An input contained no usable rows."""


class DesignMatrixError(BettaError):
    """The fixed-effect design matrix is rank deficient."""

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        self.columns = columns
        super().__init__(message)


class UnidentifiableError(BettaError):
    """The model has no information to separate signal from noise."""


class ConvergenceError(BettaError):
    """An iterative search failed to meet its convergence rule."""


class DegreesOfFreedomError(BettaError):
    """A test statistic has no degrees of freedom left."""


class NotApplicableError(BettaError):
    """A test was requested for a model that cannot support it."""


class NumericalError(BettaError):
    """A numeric quantity came out non-finite or out of range."""


class ConfoundingError(BettaError):
    """A fixed-effect column is indistinguishable from the group structure."""


class GradientUndefinedError(BettaError):
    """Rare-taxon injection was requested but the source has no singletons."""


class EstimatorFailure(BettaError):
    """A richness estimator declined to produce an estimate for one table.

    Recoverable inside experiments: the offending replicate is redrawn from
    the next substream and the failure is counted.
    """


class EstimatorProtocolError(BettaError):
    """An external estimator produced output that violates the hook contract."""


class BootstrapUnstableError(BettaError):
    """Too many estimator failures for a bootstrap SD to mean anything."""


class StdErrorFlooredWarning(UserWarning):
    """Zero reported standard errors were replaced by a small floor."""


class IllConditionedWarning(UserWarning):
    """A linear solve met a condition number above the trust threshold."""
