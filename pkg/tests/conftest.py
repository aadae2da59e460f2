"""Shared fixtures and the acceptance-criteria summary hook."""

from __future__ import annotations

import numpy as np
import pytest

from betta import Dataset, RichnessObservation

# One line per acceptance criterion, printed in the terminal summary so the
# pass/fail verdicts survive pytest's output capture.
CRITERION_LINES: list[str] = []


def record_criterion(line: str) -> None:
    CRITERION_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)


def make_dataset(y, se, x=None, names=(), ids=None, groups=None):
    """Build a Dataset (plain lists in, betta types out)."""
    y = np.asarray(y, dtype=float)
    se = np.asarray(se, dtype=float)
    m = len(y)
    if ids is None:
        ids = [f"s{i}" for i in range(m)]
    obs = []
    for i in range(m):
        cov = tuple(float(v) for v in np.atleast_2d(x)[i]) if x is not None else ()
        kwargs = {}
        if groups is not None:
            kwargs["group"] = groups[i]
        obs.append(
            RichnessObservation(
                id=ids[i], estimate=float(y[i]), std_error=float(se[i]),
                covariates=cov, **kwargs,
            )
        )
    return Dataset(observations=tuple(obs), covariate_names=tuple(names))


@pytest.fixture
def rng_dataset():
    """Reusable generator for small random regression datasets.

    The draw order (uniform SEs, shared noise, per-row noise) is part of the
    pinned-seed contract: frozen expectations in the tests reproduce it.
    """

    def build(seed, m=10, with_covariate=False):
        rng = np.random.default_rng(seed)
        se = rng.uniform(5.0, 50.0, m)
        y = 150.0 + rng.normal(0.0, 60.0, m) + rng.normal(0.0, se)
        if with_covariate:
            xcol = rng.normal(size=m)
            return make_dataset(y, se, x=xcol[:, None], names=("x",))
        return make_dataset(y, se)

    return build
