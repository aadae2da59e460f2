"""Multinomial resampling experiments: error rates, power, SE checking.

The experiments follow one protocol. A source community is frozen into a
category-probability vector (optionally with extra rare categories
injected along a covariate gradient). Each synthetic dataset redraws
every replicate as a multinomial sample whose size is drawn uniformly
from an observed list of sample sizes; a richness estimator turns each
redraw into an (estimate, std_error) pair; the richness regression and a
plain least-squares regression on observed richness are fitted; and
rejections of the relevant null are tallied per significance level.

Randomness is fully keyed: the generator for dataset d, replicate r,
attempt a is seeded from (seed, d, r, a) alone, so results do not depend
on execution order or on how many workers share the datasets.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np

from .errors import (
    BettaError,
    BootstrapUnstableError,
    EstimatorFailure,
    GradientUndefinedError,
    IllConditionedWarning,
    StdErrorFlooredWarning,
)
from .estimators import EstimatorFn, resolve_estimator
from .inference import homogeneity_test, wald_tests
from .model import Dataset, RichnessObservation, fit_betta
from .special import student_t_two_sided_p
from .tables import FrequencyCountTable

CONTINUOUS_GRID = "continuous-grid"
TWO_CATEGORY = "two-category"
NO_COVARIATE = "none"

METHOD_BETTA = "betta"
METHOD_REGRESSION = "regression_on_c"
METHOD_HOMOGENEITY = "homogeneity_q"

_MAX_REDRAW_ATTEMPTS = 1000


# ----------------------------------------------------------------------------
# seeded substreams
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """A point in a tree of reproducible random streams.

    Children are addressed by integer indices; the generator for a node
    depends only on (seed, path), never on how many draws other nodes
    made. That is the whole determinism story of the experiments.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *indices: int) -> "RngStream":
        return RngStream(seed=self.seed, path=self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.path))


# ----------------------------------------------------------------------------
# populations
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticPopulation:
    """A fixed community: one probability per category, all positive."""

    probabilities: np.ndarray = field(repr=False)
    source_label: str = "population"
    # Pre-normalization weight a newly injected rare category should get;
    # 1/n for a population built from a table with singletons, None when
    # injection is undefined for this population.
    singleton_weight: float | None = None

    def __post_init__(self) -> None:
        probs = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "probabilities", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probabilities must be a nonempty 1-d vector")
        if not np.all(probs > 0.0):
            raise ValueError("all category probabilities must be positive")
        total = float(np.sum(probs))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1 within 1e-12, got {total!r}")

    @property
    def n_categories(self) -> int:
        return int(self.probabilities.size)


def population_from_table(table: FrequencyCountTable, label: str = "table") -> SyntheticPopulation:
    """Freeze an observed table into a resampling population.

    A taxon observed j times becomes a category with probability j/n,
    expanded f_j times per abundance class (ascending j, copies
    adjacent), so the category order is deterministic.
    """
    n = table.total_reads
    js = np.array([j for j, _ in table.entries], dtype=float)
    fs = np.array([f for _, f in table.entries], dtype=int)
    probs = np.repeat(js, fs) / float(n)
    return SyntheticPopulation(
        probabilities=probs,
        source_label=label,
        singleton_weight=(1.0 / n) if table.singletons >= 1 else None,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def inject_richness_gradient(pop: SyntheticPopulation, percent_extra: float) -> SyntheticPopulation:
    """Add rare categories worth percent_extra percent of the current count.

    round-half-up(percent_extra / 100 * S) new categories are appended
    (at least one whenever percent_extra > 0), each at the source table's
    singleton weight, and the vector is renormalized. Ratios among the
    original categories are preserved; percent_extra = 0 returns the
    population unchanged.
    """
    if percent_extra < 0.0 or not math.isfinite(percent_extra):
        raise ValueError(f"percent_extra must be finite and >= 0, got {percent_extra!r}")
    if percent_extra == 0.0:
        return pop
    if pop.singleton_weight is None:
        raise GradientUndefinedError(
            "cannot inject rare categories: the source population has no singletons "
            "to define their weight"
        )
    s = pop.n_categories
    k = max(1, _round_half_up(percent_extra / 100.0 * s))
    w = pop.singleton_weight
    weights = np.concatenate([pop.probabilities, np.full(k, w)])
    total = weights.sum()
    return SyntheticPopulation(
        probabilities=weights / total,
        source_label=f"{pop.source_label}+{percent_extra:g}%rare",
        singleton_weight=w / total,
    )


@dataclass(frozen=True)
class SampleSizeDistribution:
    """The empirical list of sample sizes an experiment redraws from."""

    observed_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.observed_sizes:
            raise ValueError("need at least one observed sample size")
        if any(int(s) != s or s < 1 for s in self.observed_sizes):
            raise ValueError("sample sizes must be positive integers")

    def draw(self, rng: np.random.Generator) -> int:
        return int(self.observed_sizes[rng.integers(len(self.observed_sizes))])


# ----------------------------------------------------------------------------
# experiment configuration and reports
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Shared knobs for the size / power / homogeneity experiments."""

    replicates_per_dataset: int
    n_datasets: int
    covariate_kind: str = CONTINUOUS_GRID
    grid: tuple[float, ...] = ()
    alpha_levels: tuple[float, ...] = (0.01, 0.05, 0.10)
    seed: int = 0
    estimator: str = "chao1"

    def __post_init__(self) -> None:
        if self.replicates_per_dataset < 3:
            raise ValueError(f"replicates_per_dataset must be >= 3, got {self.replicates_per_dataset}")
        if self.n_datasets < 1:
            raise ValueError(f"n_datasets must be >= 1, got {self.n_datasets}")
        if not self.alpha_levels:
            raise ValueError("alpha_levels must be nonempty")
        for a in self.alpha_levels:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha levels must lie strictly in (0, 1), got {a!r}")
        if self.covariate_kind not in (CONTINUOUS_GRID, TWO_CATEGORY, NO_COVARIATE):
            raise ValueError(f"unknown covariate_kind {self.covariate_kind!r}")
        if self.covariate_kind == CONTINUOUS_GRID:
            if len(self.grid) != self.replicates_per_dataset:
                raise ValueError(
                    f"grid length {len(self.grid)} must equal replicates_per_dataset "
                    f"{self.replicates_per_dataset} for {CONTINUOUS_GRID!r}"
                )
            if len(set(self.grid)) < 2:
                raise ValueError("grid must contain at least two distinct covariate values")
        elif self.grid:
            raise ValueError(f"grid is only meaningful for {CONTINUOUS_GRID!r}")


@dataclass(frozen=True)
class ReportRow:
    method: str
    alpha: float
    rate: float
    mc_se: float


@dataclass(frozen=True)
class ExperimentReport:
    """Empirical rejection rates per (method, alpha) with bookkeeping."""

    kind: str
    rows: tuple[ReportRow, ...]
    n_datasets: int
    seed: int
    config_echo: dict
    estimator_failures: int = 0
    # Per-dataset p-values per method, for the optional dump; not part of
    # the serialized report.
    p_values: dict | None = field(default=None, compare=False, repr=False)

    def rate_for(self, method: str, alpha: float) -> float:
        for row in self.rows:
            if row.method == method and row.alpha == alpha:
                return row.rate
        raise KeyError(f"no row for method={method!r}, alpha={alpha!r}")

    def mc_se_for(self, method: str, alpha: float) -> float:
        for row in self.rows:
            if row.method == method and row.alpha == alpha:
                return row.mc_se
        raise KeyError(f"no row for method={method!r}, alpha={alpha!r}")


def write_report(report: ExperimentReport, target: Union[str, Path, IO, None] = None) -> str:
    """Serialize a report as delimited text with its config echoed in comments.

    The body carries only deterministic quantities (no timestamps, no
    worker counts), so reruns with the same seed are bit-identical.
    """
    lines = [
        "# betta experiment report",
        f"# kind: {report.kind}",
        f"# config: {json.dumps(report.config_echo, sort_keys=True)}",
        f"# estimator_failures: {report.estimator_failures}",
        "method,alpha,rate,mc_se,n_datasets,seed",
    ]
    for row in report.rows:
        lines.append(
            f"{row.method},{row.alpha!r},{row.rate!r},{row.mc_se!r},{report.n_datasets},{report.seed}"
        )
    text = "\n".join(lines) + "\n"
    if target is not None:
        if hasattr(target, "write"):
            target.write(text)
        else:
            Path(target).write_text(text, encoding="utf-8")
    return text


def read_report(source: Union[str, Path, IO]) -> ExperimentReport:
    """Parse a serialized report back (p_values are not round-tripped)."""
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        text = str(source)
        if "\n" not in text:
            # No newline: this is a path, not inline report text.
            path = Path(text)
            if path.exists():
                text = path.read_text(encoding="utf-8")
    kind = "unknown"
    config_echo: dict = {}
    failures = 0
    rows: list[ReportRow] = []
    n_datasets = 0
    seed = 0
    saw_header = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("kind:"):
                kind = body[len("kind:"):].strip()
            elif body.startswith("config:"):
                config_echo = json.loads(body[len("config:"):].strip())
            elif body.startswith("estimator_failures:"):
                failures = int(body[len("estimator_failures:"):].strip())
            continue
        if not saw_header:
            saw_header = True
            continue
        method, alpha, rate, mc_se, nd, sd = line.split(",")
        rows.append(ReportRow(method=method, alpha=float(alpha), rate=float(rate), mc_se=float(mc_se)))
        n_datasets = int(nd)
        seed = int(sd)
    return ExperimentReport(
        kind=kind,
        rows=tuple(rows),
        n_datasets=n_datasets,
        seed=seed,
        config_echo=config_echo,
        estimator_failures=failures,
    )


# ----------------------------------------------------------------------------
# resampling core
# ----------------------------------------------------------------------------

def _draw_table(
    probabilities: np.ndarray, sizes: SampleSizeDistribution, rng: np.random.Generator
) -> FrequencyCountTable:
    size = sizes.draw(rng)
    counts = rng.multinomial(size, probabilities)
    return FrequencyCountTable.from_counts(counts)


def resample_dataset(
    pop: SyntheticPopulation,
    sizes: SampleSizeDistribution,
    config: ExperimentConfig,
    stream: RngStream,
) -> list[FrequencyCountTable]:
    """Redraw one synthetic dataset: one table per replicate.

    Replicate r uses the generator keyed by stream.child(r, 0); its sample
    size is drawn uniformly (with replacement) from the observed sizes and
    the category counts are one multinomial vector of that size.
    """
    return [
        _draw_table(pop.probabilities, sizes, stream.child(r, 0).generator())
        for r in range(config.replicates_per_dataset)
    ]


@dataclass(frozen=True)
class _Payload:
    """Everything a worker needs to reproduce a dataset range."""

    mode: str                               # "covariate" | "homogeneity"
    probs_by_percent: dict
    percents: tuple[float, ...]             # per replicate
    covariate: tuple[float, ...] | None     # per replicate, None for homogeneity
    sizes: SampleSizeDistribution
    config: ExperimentConfig
    estimator_override: EstimatorFn | None = None


def _ols_slope_p_value(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sided t-test p-value for the slope of plain least squares."""
    m = len(y)
    xbar = float(np.mean(x))
    ybar = float(np.mean(y))
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx <= 0.0:
        raise ValueError("baseline regression needs a non-constant covariate")
    slope = float(np.sum((x - xbar) * (y - ybar))) / sxx
    intercept = ybar - slope * xbar
    resid = y - intercept - slope * x
    dof = m - 2
    rss = float(np.sum(resid * resid))
    if rss <= 0.0:
        return 0.0 if slope != 0.0 else 1.0
    se = math.sqrt(rss / dof / sxx)
    return student_t_two_sided_p(slope / se, dof)


def _run_one_dataset(payload: _Payload, d: int) -> tuple[dict, int]:
    config = payload.config
    estimator = payload.estimator_override or resolve_estimator(config.estimator)
    stream = RngStream(config.seed).child(d)
    estimates: list[float] = []
    std_errors: list[float] = []
    observed: list[float] = []
    failures = 0
    for r in range(config.replicates_per_dataset):
        probs = payload.probs_by_percent[payload.percents[r]]
        attempt = 0
        while True:
            rng = stream.child(r, attempt).generator()
            table = _draw_table(probs, payload.sizes, rng)
            try:
                est = estimator(table)
                break
            except EstimatorFailure:
                failures += 1
                attempt += 1
                if attempt >= _MAX_REDRAW_ATTEMPTS:
                    raise BettaError(
                        f"estimator failed {attempt} consecutive redraws "
                        f"(dataset {d}, replicate {r})"
                    ) from None
        estimates.append(est.estimate)
        std_errors.append(est.std_error)
        observed.append(float(table.observed_richness))

    if payload.mode == "homogeneity":
        observations = tuple(
            RichnessObservation(id=f"d{d}r{r}", estimate=estimates[r], std_error=std_errors[r])
            for r in range(config.replicates_per_dataset)
        )
        dataset = Dataset(observations=observations)
        with warnings.catch_warnings():
            # Degenerate redraws (zero claimed SEs, wild weights) are routine
            # in a Monte Carlo loop; per-fit advisories are just noise here.
            warnings.simplefilter("ignore", StdErrorFlooredWarning)
            warnings.simplefilter("ignore", IllConditionedWarning)
            fit = fit_betta(dataset)
            p_q = homogeneity_test(fit, dataset).p_value
        return {METHOD_HOMOGENEITY: p_q}, failures

    x = np.asarray(payload.covariate, dtype=float)
    observations = tuple(
        RichnessObservation(
            id=f"d{d}r{r}", estimate=estimates[r], std_error=std_errors[r], covariates=(float(x[r]),)
        )
        for r in range(config.replicates_per_dataset)
    )
    dataset = Dataset(observations=observations, covariate_names=("x",))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StdErrorFlooredWarning)
        warnings.simplefilter("ignore", IllConditionedWarning)
        fit = fit_betta(dataset)
        p_betta = wald_tests(fit)[1].p_value
    p_reg = _ols_slope_p_value(x, np.asarray(observed))
    return {METHOD_BETTA: p_betta, METHOD_REGRESSION: p_reg}, failures


def _run_chunk(payload: _Payload, indices: list[int]) -> list[tuple[int, dict, int]]:
    return [(d, *_run_one_dataset(payload, d)) for d in indices]


def _aggregate(
    kind: str, payload: _Payload, results: list[tuple[int, dict, int]]
) -> ExperimentReport:
    config = payload.config
    results = sorted(results, key=lambda item: item[0])
    methods = list(results[0][1].keys())
    p_values = {
        method: tuple(res[1][method] for res in results) for method in methods
    }
    failures = sum(res[2] for res in results)
    n = config.n_datasets
    rows = []
    for method in methods:
        ps = np.asarray(p_values[method])
        for alpha in config.alpha_levels:
            rate = float(np.mean(ps < alpha))
            rows.append(
                ReportRow(
                    method=method,
                    alpha=alpha,
                    rate=rate,
                    mc_se=math.sqrt(rate * (1.0 - rate) / n),
                )
            )
    echo = {
        "kind": kind,
        "replicates_per_dataset": config.replicates_per_dataset,
        "n_datasets": config.n_datasets,
        "covariate_kind": config.covariate_kind,
        "grid": list(config.grid),
        "alpha_levels": list(config.alpha_levels),
        "seed": config.seed,
        "estimator": config.estimator,
        "percents": sorted(set(payload.percents)),
        "sample_sizes": list(payload.sizes.observed_sizes),
    }
    return ExperimentReport(
        kind=kind,
        rows=tuple(rows),
        n_datasets=n,
        seed=config.seed,
        config_echo=echo,
        estimator_failures=failures,
        p_values=p_values,
    )


def _execute(kind: str, payload: _Payload, workers: int) -> ExperimentReport:
    n = payload.config.n_datasets
    if workers <= 1:
        results = _run_chunk(payload, list(range(n)))
    else:
        chunk_size = max(1, math.ceil(n / (workers * 4)))
        chunks = [list(range(i, min(i + chunk_size, n))) for i in range(0, n, chunk_size)]
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, [payload] * len(chunks), chunks):
                results.extend(part)
    return _aggregate(kind, payload, results)


def _injected_probabilities(pop: SyntheticPopulation, percents: Sequence[float]) -> dict:
    return {
        pc: (pop if pc == 0.0 else inject_richness_gradient(pop, pc)).probabilities
        for pc in sorted(set(percents))
    }


def _covariate_values(config: ExperimentConfig) -> tuple[float, ...]:
    if config.covariate_kind == CONTINUOUS_GRID:
        return tuple(float(v) for v in config.grid)
    if config.covariate_kind == TWO_CATEGORY:
        r = config.replicates_per_dataset
        n_a = (r + 1) // 2
        return (0.0,) * n_a + (1.0,) * (r - n_a)
    raise ValueError(f"covariate experiments need a covariate, got kind {config.covariate_kind!r}")


# ----------------------------------------------------------------------------
# public experiments
# ----------------------------------------------------------------------------

def run_size_experiment(
    pop: SyntheticPopulation,
    sizes: SampleSizeDistribution,
    config: ExperimentConfig,
    *,
    workers: int = 1,
    estimator_override: EstimatorFn | None = None,
) -> ExperimentReport:
    """Type-I error study: homogeneous redraws, covariate unrelated to richness.

    Every replicate resamples the same population, the covariate comes
    from the configured grid (or the two-category split), and rejections
    of "no covariate effect" are counted for the richness regression and
    for least squares on observed richness.
    """
    covariate = _covariate_values(config)
    percents = (0.0,) * config.replicates_per_dataset
    payload = _Payload(
        mode="covariate",
        probs_by_percent=_injected_probabilities(pop, percents),
        percents=percents,
        covariate=covariate,
        sizes=sizes,
        config=config,
        estimator_override=estimator_override,
    )
    return _execute("size", payload, workers)


def run_power_experiment(
    pop: SyntheticPopulation,
    sizes: SampleSizeDistribution,
    config: ExperimentConfig,
    gradient: Union[Sequence[float], float],
    *,
    workers: int = 1,
    estimator_override: EstimatorFn | None = None,
) -> ExperimentReport:
    """Power study: richness really does increase along the covariate.

    For the continuous grid, gradient is a per-replicate list of
    percent-extra values (aligned with the grid); for the two-category
    design it is a single contrast, applied to the second category only.
    The tests and bookkeeping mirror run_size_experiment.
    """
    covariate = _covariate_values(config)
    r = config.replicates_per_dataset
    if config.covariate_kind == CONTINUOUS_GRID:
        if np.isscalar(gradient):
            raise ValueError("continuous-grid power needs one percent per replicate")
        gradient = tuple(float(g) for g in gradient)  # type: ignore[arg-type]
        if len(gradient) != r:
            raise ValueError(f"gradient length {len(gradient)} must equal replicates {r}")
        percents = gradient
    else:
        if not np.isscalar(gradient):
            raise ValueError("two-category power takes a single percent contrast")
        n_a = (r + 1) // 2
        percents = (0.0,) * n_a + (float(gradient),) * (r - n_a)  # type: ignore[arg-type]
    payload = _Payload(
        mode="covariate",
        probs_by_percent=_injected_probabilities(pop, percents),
        percents=percents,
        covariate=covariate,
        sizes=sizes,
        config=config,
        estimator_override=estimator_override,
    )
    return _execute("power", payload, workers)


def run_homogeneity_experiment(
    pop: SyntheticPopulation,
    sizes: SampleSizeDistribution,
    config: ExperimentConfig,
    gradient: float | None = None,
    *,
    workers: int = 1,
    estimator_override: EstimatorFn | None = None,
) -> ExperimentReport:
    """Dispersion-test study on intercept-only fits.

    With gradient None every replicate redraws the same population (the
    null: the test's size). With a percent value, half the replicates
    come from the baseline population and half from the injected one (its
    power). Covariates are rejected outright: this experiment fits
    intercept-only models.
    """
    if config.covariate_kind != NO_COVARIATE:
        raise ValueError(
            "homogeneity experiments fit intercept-only models; "
            f"covariate_kind must be {NO_COVARIATE!r}, got {config.covariate_kind!r}"
        )
    r = config.replicates_per_dataset
    if gradient is None:
        percents: tuple[float, ...] = (0.0,) * r
    else:
        if not np.isscalar(gradient) or gradient < 0.0:
            raise ValueError("gradient must be a single nonnegative percent")
        n_a = (r + 1) // 2
        percents = (0.0,) * n_a + (float(gradient),) * (r - n_a)
    payload = _Payload(
        mode="homogeneity",
        probs_by_percent=_injected_probabilities(pop, percents),
        percents=percents,
        covariate=None,
        sizes=sizes,
        config=config,
        estimator_override=estimator_override,
    )
    return _execute("homogeneity", payload, workers)


# ----------------------------------------------------------------------------
# bootstrap SE check
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapSummary:
    """Parametric-bootstrap spread of an estimator against its own SE claim."""

    method: str
    b: int
    seed: int
    original_estimate: float
    original_std_error: float
    bootstrap_sd: float
    ratio: float               # bootstrap_sd / original_std_error
    understated: bool          # bootstrap_sd > original_std_error
    n_failures: int


def parametric_bootstrap_se(
    table: FrequencyCountTable,
    estimator: Union[EstimatorFn, str],
    b: int,
    seed: int,
) -> BootstrapSummary:
    """Check a reported SE against the estimator's actual resampling spread.

    Draws b multinomial resamples of the table's own size from its
    empirical category probabilities, re-estimates richness on each, and
    compares the standard deviation of those estimates with the SE the
    estimator reported on the original table. Estimator failures are
    tolerated up to 20 percent of the resamples; beyond that the check is
    declared unstable.
    """
    if b < 50:
        raise ValueError(f"b must be at least 50 bootstrap resamples, got {b}")
    estimator_fn = resolve_estimator(estimator) if isinstance(estimator, str) else estimator
    original = estimator_fn(table)
    pop = population_from_table(table)
    n = table.total_reads
    stream = RngStream(seed)
    values: list[float] = []
    failures = 0
    for i in range(b):
        rng = stream.child(i).generator()
        counts = rng.multinomial(n, pop.probabilities)
        try:
            values.append(estimator_fn(FrequencyCountTable.from_counts(counts)).estimate)
        except EstimatorFailure:
            failures += 1
    if failures > 0.2 * b:
        raise BootstrapUnstableError(
            f"estimator failed on {failures}/{b} resamples (> 20%); "
            "bootstrap SD would be meaningless"
        )
    sd = float(np.std(np.asarray(values), ddof=1))
    se = original.std_error
    if se > 0.0:
        ratio = sd / se
    else:
        ratio = math.inf if sd > 0.0 else math.nan
    return BootstrapSummary(
        method=original.method,
        b=b,
        seed=seed,
        original_estimate=original.estimate,
        original_std_error=se,
        bootstrap_sd=sd,
        ratio=ratio,
        understated=sd > se,
        n_failures=failures,
    )
