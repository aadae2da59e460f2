"""Tests and diagnostics on a fitted richness regression.

Wald tests compare each coefficient to its estimated standard error
against a standard normal reference. The joint covariate test and the
heterogeneity (dispersion) test use chi-squared references. Reference
tail probabilities come from the in-package implementations in
``betta.special``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegreesOfFreedomError, NotApplicableError, NumericalError
from .model import BettaFit, Dataset, floored_variances
from .special import chisq_upper_tail, normal_cdf, normal_quantile, normal_two_sided_p

KIND_WALD = "wald"
KIND_GLOBAL = "global_chisq"
KIND_HOMOGENEITY = "homogeneity_q"


@dataclass(frozen=True)
class TestResult:
    """A single statistic with its reference distribution outcome.

    dof is an integer for chi-squared references and None for the normal
    reference used by Wald tests.
    """

    statistic: float
    dof: int | None
    p_value: float
    kind: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise NumericalError(f"p-value {self.p_value!r} outside [0, 1]")


def _require_converged(fit) -> None:
    if not fit.converged:
        raise ConvergenceError("fit did not converge; refusing to run tests on it")


def wald_tests(fit) -> list[TestResult]:
    """Two-sided z-test for each coefficient, intercept first.

    Works for any fit exposing beta_hat, beta_cov and converged, so the
    grouped-model results go through the same machinery.
    """
    _require_converged(fit)
    results: list[TestResult] = []
    for j, b in enumerate(np.asarray(fit.beta_hat, dtype=float)):
        var = float(fit.beta_cov[j, j])
        if not math.isfinite(var) or var <= 0.0:
            raise NumericalError(f"coefficient {j}: non-positive variance {var!r} in Wald test")
        z = b / math.sqrt(var)
        results.append(TestResult(statistic=float(z), dof=None, p_value=normal_two_sided_p(z), kind=KIND_WALD))
    return results


def global_test(fit: BettaFit, dataset: Dataset) -> TestResult:
    """Joint chi-squared test that every non-intercept coefficient is zero.

    The statistic is the quadratic form of the non-intercept coefficients
    in the weighted covariate Gram matrix sum_i x_i x_i^T / v_i with
    v_i = std_error_i^2 + sigma_u_sq_hat; the intercept is excluded from
    both the quadratic form and the p degrees of freedom.
    """
    _require_converged(fit)
    if dataset.p == 0:
        raise NotApplicableError("global test needs at least one covariate")
    v = floored_variances(dataset, warn=False) + fit.sigma_u_sq_hat
    xc = dataset.covariate_matrix()
    gram = (xc / v[:, None]).T @ xc
    slopes = np.asarray(fit.beta_hat, dtype=float)[1:]
    statistic = float(slopes @ gram @ slopes)
    if statistic < 0.0:
        # Quadratic form in a PSD matrix; tiny negatives are rounding.
        if statistic < -1e-10:
            raise NumericalError(f"global statistic came out negative: {statistic}")
        statistic = 0.0
    return TestResult(
        statistic=statistic,
        dof=dataset.p,
        p_value=chisq_upper_tail(statistic, dataset.p),
        kind=KIND_GLOBAL,
    )


def homogeneity_test(fit: BettaFit, dataset: Dataset) -> TestResult:
    """Dispersion test of the fitted mean structure.

    Q = sum_i (estimate_i - fitted_i)^2 / std_error_i^2 against
    chi-squared with m - p - 1 degrees of freedom. Only the reported
    standard errors enter the denominator; the fitted between-observation
    variance does not, so Q asks whether the reported errors alone can
    carry the scatter.
    """
    _require_converged(fit)
    dof = dataset.m - dataset.p - 1
    if dof < 1:
        raise DegreesOfFreedomError(
            f"homogeneity test undefined: m - p - 1 = {dof} degrees of freedom"
        )
    std_resid = np.asarray(fit.std_residuals, dtype=float)
    statistic = float(np.sum(std_resid * std_resid))
    return TestResult(
        statistic=statistic,
        dof=dof,
        p_value=chisq_upper_tail(statistic, dof),
        kind=KIND_HOMOGENEITY,
    )


@dataclass(frozen=True)
class DiagnosticRow:
    """Plot-ready values for one observation (error-bar view)."""

    id: str
    estimate: float
    std_error: float
    lower: float       # estimate - 2 * std_error
    upper: float       # estimate + 2 * std_error
    fitted: float
    std_residual: float
    normal_quantile: float


@dataclass(frozen=True)
class ResidualDiagnostics:
    """Per-observation rows plus the sorted pairs for a qq-plot."""

    rows: tuple[DiagnosticRow, ...]
    sorted_std_residuals: np.ndarray
    normal_quantiles: np.ndarray


def residual_diagnostics(fit: BettaFit, dataset: Dataset) -> ResidualDiagnostics:
    """Assemble error-bar rows and qq-plot pairs for a fitted dataset.

    The matched normal quantile for an observation of rank k (0-based,
    residuals ascending) is the standard normal quantile at (k + 0.5) / m.
    Rows keep the dataset's observation order.
    """
    m = dataset.m
    std_resid = np.asarray(fit.std_residuals, dtype=float)
    order = np.argsort(std_resid, kind="stable")
    quantiles_sorted = np.array([normal_quantile((k + 0.5) / m) for k in range(m)])
    quantile_of = np.empty(m)
    quantile_of[order] = quantiles_sorted

    rows = []
    for i, obs in enumerate(dataset.observations):
        rows.append(
            DiagnosticRow(
                id=obs.id,
                estimate=obs.estimate,
                std_error=obs.std_error,
                lower=obs.estimate - 2.0 * obs.std_error,
                upper=obs.estimate + 2.0 * obs.std_error,
                fitted=float(fit.fitted[i]),
                std_residual=float(std_resid[i]),
                normal_quantile=float(quantile_of[i]),
            )
        )
    return ResidualDiagnostics(
        rows=tuple(rows),
        sorted_std_residuals=std_resid[order],
        normal_quantiles=quantiles_sorted,
    )


__all__ = [
    "TestResult",
    "DiagnosticRow",
    "ResidualDiagnostics",
    "wald_tests",
    "global_test",
    "homogeneity_test",
    "residual_diagnostics",
    "normal_cdf",
    "chisq_upper_tail",
    "KIND_WALD",
    "KIND_GLOBAL",
    "KIND_HOMOGENEITY",
]
