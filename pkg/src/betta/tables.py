"""Frequency-count tables, the chao1 estimator, and estimates-table I/O.

A frequency-count table summarizes one community sample as rows
(abundance j, number of taxa observed exactly j times). An estimates
table is the tidy per-sample input to the regression: id, estimate,
std_error, covariate columns, and an optional group column.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Union

import numpy as np

from .errors import EmptyTableError, ParseError
from .model import Dataset, RichnessObservation
from .mixed import GroupedDataset

Source = Union[str, Path, IO]

MISSING_TOKENS = {"", "NA"}
GROUP_COLUMN = "group"
_RESERVED = ("id", "estimate", "std_error")


@dataclass(frozen=True)
class FrequencyCountTable:
    """Entries (j, f_j): f_j taxa were observed exactly j times, j >= 1."""

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise EmptyTableError("frequency table has no entries")
        last = 0
        for j, f in self.entries:
            if not (isinstance(j, int) and isinstance(f, int)):
                raise ValueError(f"entries must be integer pairs, got ({j!r}, {f!r})")
            if j <= last:
                raise ValueError(f"abundances must be strictly increasing and >= 1, got {j} after {last}")
            if f < 1:
                raise ValueError(f"count for abundance {j} must be >= 1, got {f}")
            last = j

    @classmethod
    def from_counts(cls, counts: Iterable[int]) -> "FrequencyCountTable":
        """Collapse per-taxon abundances (zeros ignored) into a table."""
        arr = np.asarray(list(counts), dtype=int)
        arr = arr[arr > 0]
        if arr.size == 0:
            raise EmptyTableError("no taxa with positive abundance")
        values, freqs = np.unique(arr, return_counts=True)
        return cls(entries=tuple((int(j), int(f)) for j, f in zip(values, freqs)))

    @property
    def observed_richness(self) -> int:
        """c: number of distinct taxa seen at least once."""
        return sum(f for _, f in self.entries)

    @property
    def total_reads(self) -> int:
        """n: total number of individuals (sum of j * f_j)."""
        return sum(j * f for j, f in self.entries)

    def count_for(self, j: int) -> int:
        for jj, f in self.entries:
            if jj == j:
                return f
        return 0

    @property
    def singletons(self) -> int:
        return self.count_for(1)

    @property
    def doubletons(self) -> int:
        return self.count_for(2)

    @property
    def singleton_doubleton_ratio(self) -> float:
        """f1/f2; inf when doubletons are absent but singletons are not."""
        f1, f2 = self.singletons, self.doubletons
        if f2 > 0:
            return f1 / f2
        return math.inf if f1 > 0 else math.nan


def _open_lines(source: Source):
    """Yield (line_number, raw_line) from a path, text, or stream."""
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        text = data
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        path = Path(source)
        if path.exists():
            text = path.read_text(encoding="utf-8")
        elif isinstance(source, str) and ("," in source or "\t" in source):
            text = source
        else:
            raise FileNotFoundError(f"no such file: {source}")
    for number, raw in enumerate(text.splitlines(), start=1):
        yield number, raw


def _detect_delimiter(line: str) -> str:
    return "\t" if "\t" in line else ","


def read_frequency_table(source: Source) -> FrequencyCountTable:
    """Parse a two-column (abundance, count) table.

    Comma-delimited with tab auto-detection, '#' comment lines, optional
    single header line. Duplicate abundances and nonpositive or
    non-integer values are parse errors carrying the 1-based line number.
    Rows may arrive in any order; the table is stored ascending.
    """
    rows: dict[int, int] = {}
    first_line: dict[int, int] = {}
    delimiter: str | None = None
    saw_content = False
    for number, raw in _open_lines(source):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if delimiter is None:
            delimiter = _detect_delimiter(line)
        fields = [f.strip() for f in line.split(delimiter)]
        if len(fields) != 2:
            raise ParseError(f"expected 2 fields, got {len(fields)}", number)
        try:
            j, f = int(fields[0]), int(fields[1])
        except ValueError:
            if not saw_content:
                # A single leading non-numeric line is a header.
                saw_content = True
                continue
            raise ParseError(f"non-integer fields {fields[0]!r}, {fields[1]!r}", number) from None
        saw_content = True
        if j < 1 or f < 1:
            raise ParseError(f"abundance and count must be >= 1, got ({j}, {f})", number)
        if j in rows:
            raise ParseError(
                f"duplicate abundance {j} (first seen on line {first_line[j]})", number
            )
        rows[j] = f
        first_line[j] = number
    if not rows:
        raise EmptyTableError("frequency table input has no data rows")
    return FrequencyCountTable(entries=tuple(sorted(rows.items())))


def write_frequency_table(table: FrequencyCountTable, target: Union[str, Path, IO, None] = None) -> str:
    """Serialize a table in the same two-column format; returns the text."""
    lines = ["abundance,count"]
    lines += [f"{j},{f}" for j, f in table.entries]
    text = "\n".join(lines) + "\n"
    if target is not None:
        if hasattr(target, "write"):
            target.write(text)
        else:
            Path(target).write_text(text, encoding="utf-8")
    return text


@dataclass(frozen=True)
class RichnessEstimate:
    """A total-richness estimate with its standard error and method tag."""

    estimate: float
    std_error: float
    method: str

    def __post_init__(self) -> None:
        if not math.isfinite(self.estimate):
            raise ValueError(f"estimate must be finite, got {self.estimate!r}")
        if not math.isfinite(self.std_error) or self.std_error < 0.0:
            raise ValueError(f"std_error must be finite and >= 0, got {self.std_error!r}")


def chao1(table: FrequencyCountTable) -> RichnessEstimate:
    """Abundance-based lower-bound richness estimate from f1 and f2.

    With c observed taxa, f1 singletons and f2 doubletons:

        estimate = c + f1^2 / (2 f2)                   if f2 > 0
        estimate = c + f1 (f1 - 1) / 2                 if f2 = 0 (bias-corrected)

    The f2 > 0 variance is f2 (r^4/4 + r^3 + r^2/2) with r = f1/f2; the
    f2 = 0, f1 > 0 case uses the matching no-doubleton variance
    f1(f1-1)/2 + f1(2f1-1)^2/4 - f1^4/(4 estimate), and f1 = 0 gives
    variance zero. The estimate never falls below c.
    """
    c = table.observed_richness
    f1 = table.singletons
    f2 = table.doubletons
    if f2 > 0:
        estimate = c + f1 * f1 / (2.0 * f2)
        r = f1 / f2
        variance = f2 * (r**4 / 4.0 + r**3 + r**2 / 2.0)
    else:
        estimate = c + f1 * (f1 - 1) / 2.0
        if f1 > 0:
            variance = f1 * (f1 - 1) / 2.0 + f1 * (2 * f1 - 1) ** 2 / 4.0 - f1**4 / (4.0 * estimate)
        else:
            variance = 0.0
    return RichnessEstimate(
        estimate=float(estimate),
        std_error=math.sqrt(max(variance, 0.0)),
        method="chao1",
    )


@dataclass(frozen=True)
class LoadedEstimates:
    """read_estimates output: the dataset plus ingestion bookkeeping."""

    dataset: Union[Dataset, GroupedDataset]
    n_dropped: int

    @property
    def base(self) -> Dataset:
        return self.dataset.base if isinstance(self.dataset, GroupedDataset) else self.dataset


def _is_missing(token: str) -> bool:
    return token in MISSING_TOKENS


def _parse_float(token: str) -> float | None:
    try:
        return float(token)
    except ValueError:
        return None


def read_estimates(
    source: Source,
    covariates: tuple[str, ...] | list[str] | None = None,
    group: str | None = None,
) -> LoadedEstimates:
    """Parse an estimates table into a Dataset (or GroupedDataset).

    The header names the columns: id, estimate and std_error are
    mandatory; remaining columns are covariates unless one is named
    'group' (or selected by the group argument), which supplies group
    labels. Missing cells are "NA" or empty. Rows with a missing or
    non-finite estimate, std_error, selected covariate, or group label
    are dropped and counted.

    A covariate column whose non-missing values all parse as numbers is
    numeric; any other column is categorical and expands to one 0/1
    indicator per level beyond the reference, the reference being the
    first level in sorted order. Indicator columns are named
    '<column>=<level>'.
    """
    delimiter: str | None = None
    header: list[str] | None = None
    raw_rows: list[tuple[int, list[str]]] = []
    for number, raw in _open_lines(source):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if delimiter is None:
            delimiter = _detect_delimiter(line)
        fields = [f.strip() for f in line.split(delimiter)]
        if header is None:
            header = fields
            continue
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(fields)}", number)
        raw_rows.append((number, fields))
    if header is None:
        raise EmptyTableError("estimates table input is empty")
    for required in _RESERVED:
        if required not in header:
            raise ParseError(f"missing mandatory column {required!r} in header")
    col = {name: i for i, name in enumerate(header)}
    if len(col) != len(header):
        raise ParseError("duplicate column names in header")

    group_col = group
    if group_col is None and GROUP_COLUMN in header:
        group_col = GROUP_COLUMN
    if group_col is not None and group_col not in header:
        raise ParseError(f"group column {group_col!r} not in header")

    if covariates is None:
        cov_cols = [c for c in header if c not in _RESERVED and c != group_col]
    else:
        cov_cols = list(covariates)
        for c in cov_cols:
            if c not in header:
                raise ParseError(f"covariate column {c!r} not in header")

    kept: list[tuple[str, float, float, list[str], str | None]] = []
    n_dropped = 0
    for _number, fields in raw_rows:
        est = _parse_float(fields[col["estimate"]]) if not _is_missing(fields[col["estimate"]]) else None
        se = _parse_float(fields[col["std_error"]]) if not _is_missing(fields[col["std_error"]]) else None
        label = None
        if group_col is not None:
            token = fields[col[group_col]]
            label = None if _is_missing(token) else token
        cov_tokens = [fields[col[c]] for c in cov_cols]
        usable = (
            est is not None and math.isfinite(est)
            and se is not None and math.isfinite(se) and se >= 0.0
            and not any(_is_missing(t) for t in cov_tokens)
            and (group_col is None or label is not None)
        )
        if not usable:
            n_dropped += 1
            continue
        kept.append((fields[col["id"]], est, se, cov_tokens, label))

    if len(kept) < 2:
        raise EmptyTableError(f"fewer than 2 usable rows after dropping {n_dropped}")

    # Classify covariate columns on the surviving rows.
    numeric: list[bool] = []
    for k in range(len(cov_cols)):
        numeric.append(all(_parse_float(row[3][k]) is not None for row in kept))

    out_names: list[str] = []
    encoders: list = []  # per input column: None (numeric) or sorted levels
    for k, name in enumerate(cov_cols):
        if numeric[k]:
            out_names.append(name)
            encoders.append(None)
        else:
            levels = sorted({row[3][k] for row in kept})
            encoders.append(levels)
            out_names.extend(f"{name}={level}" for level in levels[1:])

    observations = []
    for obs_id, est, se, cov_tokens, label in kept:
        values: list[float] = []
        for k in range(len(cov_cols)):
            if encoders[k] is None:
                values.append(float(cov_tokens[k]))
            else:
                values.extend(1.0 if cov_tokens[k] == level else 0.0 for level in encoders[k][1:])
        observations.append(
            RichnessObservation(
                id=obs_id, estimate=est, std_error=se, covariates=tuple(values), group=label
            )
        )

    if group_col is not None:
        dataset: Union[Dataset, GroupedDataset] = GroupedDataset.from_observations(
            tuple(observations), covariate_names=tuple(out_names)
        )
    else:
        dataset = Dataset(observations=tuple(observations), covariate_names=tuple(out_names))
    return LoadedEstimates(dataset=dataset, n_dropped=n_dropped)


def write_estimates(data: Union[Dataset, GroupedDataset], target: Union[str, Path, IO, None] = None) -> str:
    """Serialize a dataset back to the estimates-table format.

    Numeric fields use repr, so a write -> read round trip reproduces
    every float bit-for-bit. Categorical covariates that were expanded on
    read are written as their numeric indicator columns.
    """
    grouped = isinstance(data, GroupedDataset)
    base = data.base if grouped else data
    header = ["id", "estimate", "std_error", *base.covariate_names]
    if grouped:
        header.append(GROUP_COLUMN)
    lines = [",".join(header)]
    for i, obs in enumerate(base.observations):
        fields = [obs.id, repr(obs.estimate), repr(obs.std_error)]
        fields += [repr(v) for v in obs.covariates]
        if grouped:
            fields.append(data.groups[i])  # type: ignore[union-attr]
        lines.append(",".join(fields))
    text = "\n".join(lines) + "\n"
    if target is not None:
        if hasattr(target, "write"):
            target.write(text)
        else:
            Path(target).write_text(text, encoding="utf-8")
    return text


def table_to_stream(table: FrequencyCountTable) -> io.BytesIO:
    """The table serialized as the byte stream the external hook receives."""
    return io.BytesIO(write_frequency_table(table).encode("utf-8"))
