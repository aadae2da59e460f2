"""Random-effects regression for collections of species richness estimates.

Each observation i carries a richness estimate and the standard error
reported alongside it. The model treats that standard error as a known
sampling noise scale and adds a shared between-observation variance
component on top:

    estimate_i = intercept + covariates_i . slopes + u_i + e_i
    u_i ~ N(0, sigma_u_sq),   e_i ~ N(0, std_error_i ** 2)

The variance component is estimated by restricted maximum likelihood with
the boundary constraint sigma_u_sq >= 0. For a fixed sigma_u_sq the
coefficient vector has a closed weighted-least-squares form, so the fit
reduces to a one-dimensional bounded search over sigma_u_sq.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DesignMatrixError,
    IllConditionedWarning,
    NumericalError,
    StdErrorFlooredWarning,
    UnidentifiableError,
)
from .optimize import minimize_bounded

STD_ERROR_FLOOR_SCALE = 1e-8
CONDITION_WARN_THRESHOLD = 1e10
BRACKET_TOL_SCALE = 1e-8
INTERCEPT_NAME = "(intercept)"


@dataclass(frozen=True)
class RichnessObservation:
    """One sampling unit: a richness estimate, its reported standard error,
    covariate values, and an optional grouping label."""

    id: str
    estimate: float
    std_error: float
    covariates: tuple[float, ...] = ()
    group: str | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.estimate):
            raise ValueError(f"observation {self.id!r}: estimate must be finite, got {self.estimate!r}")
        if not math.isfinite(self.std_error) or self.std_error < 0.0:
            raise ValueError(
                f"observation {self.id!r}: std_error must be finite and >= 0, got {self.std_error!r}"
            )
        if any(not math.isfinite(v) for v in self.covariates):
            raise ValueError(f"observation {self.id!r}: covariates must be finite")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of observations sharing one covariate layout."""

    observations: tuple[RichnessObservation, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        # m >= 2 is a fit-time requirement, not a construction-time one: the
        # restricted likelihood itself is well defined for a single row.
        if not self.observations:
            raise ValueError("a dataset needs at least one observation")
        p = len(self.covariate_names)
        for obs in self.observations:
            if len(obs.covariates) != p:
                raise ValueError(
                    f"observation {obs.id!r} has {len(obs.covariates)} covariates, expected {p}"
                )

    @property
    def m(self) -> int:
        return len(self.observations)

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    def estimates(self) -> np.ndarray:
        return np.array([o.estimate for o in self.observations], dtype=float)

    def std_errors(self) -> np.ndarray:
        return np.array([o.std_error for o in self.observations], dtype=float)

    def covariate_matrix(self) -> np.ndarray:
        return np.array([o.covariates for o in self.observations], dtype=float).reshape(self.m, self.p)

    def design_matrix(self) -> np.ndarray:
        """Covariates with a leading all-ones intercept column, shape (m, p+1)."""
        return np.column_stack([np.ones(self.m), self.covariate_matrix()])

    def ids(self) -> tuple[str, ...]:
        return tuple(o.id for o in self.observations)


@dataclass(frozen=True)
class BettaFit:
    """Result of fit_betta.

    fitted and std_residuals are aligned with the dataset's observation
    order; std_residuals divide by the (floored) reported standard errors,
    not by the total model variance.
    """

    beta_hat: np.ndarray = field(repr=False)
    sigma_u_sq_hat: float = 0.0
    beta_cov: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    reml_value: float = math.nan
    fitted: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    std_residuals: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    converged: bool = True


def floored_variances(dataset: Dataset, *, warn: bool = True) -> np.ndarray:
    """Squared standard errors with zeros lifted to a small positive floor.

    A reported standard error of exactly zero would give that observation
    infinite weight; it is replaced by 1e-8 * (1 + |estimate|) so the row
    stays usable while contributing almost no down-weighting of the rest.
    """
    se = dataset.std_errors()
    zero = se == 0.0
    if zero.any():
        if warn:
            warnings.warn(
                f"{int(zero.sum())} observation(s) report a zero standard error; "
                "flooring to 1e-8 * (1 + |estimate|)",
                StdErrorFlooredWarning,
                stacklevel=2,
            )
        se = se.copy()
        se[zero] = STD_ERROR_FLOOR_SCALE * (1.0 + np.abs(dataset.estimates()[zero]))
    return se * se


def _check_full_rank(x: np.ndarray, names: tuple[str, ...]) -> None:
    """Raise DesignMatrixError naming the columns that add no rank."""
    m, k = x.shape
    if k > m:
        raise DesignMatrixError(
            f"design matrix has more columns ({k}) than observations ({m})",
            columns=names[1:],
        )
    if np.linalg.matrix_rank(x) == k:
        return
    bad: list[str] = []
    rank = 0
    for j in range(k):
        r = np.linalg.matrix_rank(x[:, : j + 1])
        if r == rank:
            bad.append(names[j] if j < len(names) else f"column {j}")
        rank = r
    raise DesignMatrixError(
        "design matrix is rank deficient; collinear column(s): " + ", ".join(bad),
        columns=tuple(bad),
    )


def _canonical_order(dataset: Dataset) -> np.ndarray:
    """A total order on observations that does not depend on input order.

    Fitting in this canonical order makes every floating-point reduction
    identical for any permutation of the same rows, so permuting a dataset
    cannot change the fit.
    """
    keys = [
        (o.estimate, o.std_error, o.covariates, o.group or "", o.id)
        for o in dataset.observations
    ]
    return np.array(sorted(range(dataset.m), key=keys.__getitem__), dtype=int)


def _weighted_normal_equations(x: np.ndarray, y: np.ndarray, weights: np.ndarray):
    """Solve the weighted normal equations; return (beta, gram, log det gram)."""
    xw = x * weights[:, None]
    gram = xw.T @ x
    gram = 0.5 * (gram + gram.T)
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("weighted design Gram matrix is not positive definite") from exc
    rhs = xw.T @ y
    beta = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return beta, gram, logdet


def gls_coefficients(dataset: Dataset, sigma_u_sq: float) -> np.ndarray:
    """Closed-form coefficient profile at a fixed between-observation variance.

    Weighted least squares with weights 1 / (std_error_i^2 + sigma_u_sq),
    intercept included. This is the beta that maximizes the restricted
    log-likelihood for the given sigma_u_sq.
    """
    if sigma_u_sq < 0.0:
        raise ValueError(f"sigma_u_sq must be >= 0, got {sigma_u_sq}")
    x = dataset.design_matrix()
    _check_full_rank(x, (INTERCEPT_NAME,) + dataset.covariate_names)
    v = floored_variances(dataset) + sigma_u_sq
    beta, _, _ = _weighted_normal_equations(x, dataset.estimates(), 1.0 / v)
    return beta


def restricted_log_likelihood(dataset: Dataset, beta: np.ndarray, sigma_u_sq: float) -> float:
    """Restricted log-likelihood of (beta, sigma_u_sq) for this dataset.

    With v_i = sigma_u_sq + std_error_i^2 and design rows z_i (intercept
    prepended), the value is

        -0.5 * ( sum_i [ ln v_i + (estimate_i - z_i . beta)^2 / v_i ]
                 + ln det( sum_i z_i z_i^T / v_i ) )

    The log-determinant term is the restriction penalty that removes the
    downward bias a plain profile likelihood would put on the variance.
    Additive constants are dropped.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.p + 1,):
        raise ValueError(f"beta must have length p+1 = {dataset.p + 1}, got shape {beta.shape}")
    if sigma_u_sq < 0.0:
        raise ValueError(f"sigma_u_sq must be >= 0, got {sigma_u_sq}")
    x = dataset.design_matrix()
    v = floored_variances(dataset) + sigma_u_sq
    if not np.all(v > 0.0):
        raise NumericalError("degenerate weights: some total variance is not positive")
    resid = dataset.estimates() - x @ beta
    xw = x / v[:, None]
    gram = xw.T @ x
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0.0:
        raise NumericalError("weighted design Gram matrix is singular")
    value = -0.5 * (float(np.sum(np.log(v) + resid * resid / v)) + logdet)
    if not math.isfinite(value):
        raise NumericalError("restricted log-likelihood is not finite (degenerate weights)")
    return value


def _search_upper_bound(y: np.ndarray, variances: np.ndarray) -> float:
    """Upper bracket for the variance search.

    Ten times the sample variance of the estimates comfortably exceeds any
    explainable between-observation variance; the smallest reported
    variance plus one keeps the interval non-degenerate when the estimates
    happen to be constant.
    """
    sample_var = float(np.var(y, ddof=1))
    return max(10.0 * sample_var, float(np.min(variances)) + 1.0)


class _ProfiledObjective:
    """Profiled restricted log-likelihood over sigma_u_sq with cached arrays."""

    def __init__(self, x: np.ndarray, y: np.ndarray, variances: np.ndarray):
        self.x = x
        self.y = y
        self.variances = variances

    def components(self, sigma_u_sq: float):
        v = self.variances + sigma_u_sq
        w = 1.0 / v
        beta, gram, logdet = _weighted_normal_equations(self.x, self.y, w)
        resid = self.y - self.x @ beta
        value = -0.5 * (float(np.sum(np.log(v) + resid * resid * w)) + logdet)
        return value, beta, gram, resid

    def value(self, sigma_u_sq: float) -> float:
        return self.components(sigma_u_sq)[0]


def fit_betta(dataset: Dataset) -> BettaFit:
    """Fit the random-effects richness regression by restricted maximum likelihood.

    Parameters
    ----------
    dataset : Dataset
        Observations with estimates, reported standard errors, covariates.

    Returns
    -------
    BettaFit
        Coefficients (intercept first), the nonnegative variance component,
        the coefficient covariance (X^T W^-1 X)^-1 at the fitted weights,
        the restricted log-likelihood at the optimum, fitted values and
        standardized residuals in dataset order, and a convergence flag.

    Notes
    -----
    The coefficient profile is closed-form at each candidate variance, so
    only sigma_u_sq is searched, on [0, U] with
    U = max(10 * var(estimates), min reported variance + 1). The search is
    a golden-section/parabolic hybrid started from the empirical variance
    of the estimates (clamped into the interval) and stops when the bracket
    is narrower than 1e-8 * (1 + U). The boundary sigma_u_sq = 0 is always
    evaluated explicitly and wins ties, so homogeneous data come back with
    exactly zero.
    """
    names = (INTERCEPT_NAME,) + dataset.covariate_names
    if dataset.m < 2:
        raise ValueError(f"fitting needs at least 2 observations, got {dataset.m}")
    if np.all(dataset.std_errors() == 0.0) and dataset.m <= dataset.p + 1:
        raise UnidentifiableError(
            "all standard errors are zero and there are no residual degrees of freedom; "
            "the variance component cannot be identified"
        )
    order = _canonical_order(dataset)
    x_full = dataset.design_matrix()
    _check_full_rank(x_full, names)

    y = dataset.estimates()[order]
    x = x_full[order]
    variances = floored_variances(dataset)[order]

    if dataset.m <= dataset.p + 1:
        warnings.warn(
            f"only {dataset.m} observations for {dataset.p + 1} coefficients; "
            "the heterogeneity test is undefined and the fit is fragile",
            UserWarning,
            stacklevel=2,
        )

    objective = _ProfiledObjective(x, y, variances)
    upper = _search_upper_bound(y, variances)
    start = min(max(float(np.var(y, ddof=1)), 0.0), upper)
    xatol = BRACKET_TOL_SCALE * (1.0 + upper)

    result = minimize_bounded(
        lambda s: -objective.value(s), 0.0, upper, xatol=xatol, x0=start if start > 0.0 else None
    )
    sigma_u_sq = result.x
    best = -result.fx

    # The optimizer never lands exactly on the closed end of the interval;
    # probe it so a boundary optimum is reported as exactly zero.
    at_zero = objective.value(0.0)
    if at_zero >= best - 1e-12 * (1.0 + abs(best)):
        sigma_u_sq, best = 0.0, at_zero

    value, beta, gram, resid = objective.components(sigma_u_sq)
    cond = float(np.linalg.cond(gram))
    if cond > CONDITION_WARN_THRESHOLD:
        warnings.warn(
            f"weighted design Gram matrix condition number {cond:.3g} exceeds 1e10; "
            "coefficient covariance may be unreliable",
            IllConditionedWarning,
            stacklevel=2,
        )
    beta_cov = np.linalg.inv(gram)
    beta_cov = 0.5 * (beta_cov + beta_cov.T)

    fitted_canon = x @ beta
    std_resid_canon = resid / np.sqrt(variances)
    fitted = np.empty(dataset.m)
    std_residuals = np.empty(dataset.m)
    fitted[order] = fitted_canon
    std_residuals[order] = std_resid_canon

    return BettaFit(
        beta_hat=beta,
        sigma_u_sq_hat=float(sigma_u_sq),
        beta_cov=beta_cov,
        reml_value=float(value),
        fitted=fitted,
        std_residuals=std_residuals,
        converged=result.converged,
    )
