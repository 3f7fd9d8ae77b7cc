"""Daily time-series datasets, future-indicator construction and CSV ingestion."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._io import atomic_write_text, fmt_float
from .errors import ParseError, SchemaError, ValidationError

__all__ = [
    "TimeSeriesDataset",
    "IndicatorSeries",
    "Schema",
    "load_dataset",
    "write_dataset",
    "make_indicator",
    "center_and_scale",
]

log = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none", "."}


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim != 1:
        raise ValidationError("columns must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned daily series: outcome Y_t, exposure X_t and named covariates C_t.

    ``time_index`` holds integer day numbers and must be strictly increasing.
    Arrays are stored read-only so a dataset can be shared between workers.
    ``transforms`` records ``column -> (mean, sd)`` for columns rescaled by
    :func:`center_and_scale`.
    """

    time_index: np.ndarray
    outcome: np.ndarray
    exposure: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    outcome_name: str = "y"
    exposure_name: str = "x"
    time_name: str = "day"
    transforms: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.time_index)
        if t.size and not np.all(np.equal(np.mod(t, 1), 0)):
            raise ValidationError("time_index must hold integer day numbers")
        object.__setattr__(self, "time_index", _frozen(t, np.int64))
        object.__setattr__(self, "outcome", _frozen(self.outcome, np.float64))
        object.__setattr__(self, "exposure", _frozen(self.exposure, np.float64))
        covs = {str(k): _frozen(v, np.float64) for k, v in self.covariates.items()}
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "transforms", dict(self.transforms))

        n = self.time_index.size
        if n < 2:
            raise ValidationError(f"dataset needs at least 2 rows, got {n}")
        for name, col in [(self.outcome_name, self.outcome), (self.exposure_name, self.exposure), *covs.items()]:
            if col.size != n:
                raise ValidationError(f"column {name!r} has length {col.size}, expected {n}")
            if not np.all(np.isfinite(col)):
                raise ValidationError(f"column {name!r} contains missing or non-finite values")
        d = np.diff(self.time_index)
        if np.any(d == 0):
            dup = self.time_index[1:][d == 0][0]
            raise ValidationError(f"duplicate time value {dup} in {self.time_name!r}")
        if np.any(d < 0):
            raise ValidationError(f"{self.time_name!r} must be strictly increasing")
        names = self.column_names
        if len(set(names)) != len(names):
            raise ValidationError(f"column names must be distinct: {names}")

    @property
    def n(self) -> int:
        return int(self.time_index.size)

    @property
    def covariate_names(self) -> list[str]:
        return list(self.covariates)

    @property
    def column_names(self) -> list[str]:
        return [self.outcome_name, self.exposure_name, *self.covariates]

    def column(self, name: str) -> np.ndarray:
        if name == self.outcome_name:
            return self.outcome
        if name == self.exposure_name:
            return self.exposure
        if name in self.covariates:
            return self.covariates[name]
        if name == self.time_name:
            return self.time_index.astype(np.float64)
        raise SchemaError(f"unknown column {name!r}; available: {self.column_names}")

    def take(self, rows) -> "TimeSeriesDataset":
        """Subset of rows (positions or boolean mask); order is preserved."""
        rows = np.asarray(rows)
        return replace(
            self,
            time_index=self.time_index[rows],
            outcome=self.outcome[rows],
            exposure=self.exposure[rows],
            covariates={k: v[rows] for k, v in self.covariates.items()},
        )

    def shift_time(self, offset: int) -> "TimeSeriesDataset":
        return replace(self, time_index=self.time_index + int(offset))

    def is_count_outcome(self) -> bool:
        y = self.outcome
        return bool(np.all(y >= 0) and np.all(np.floor(y) == y))

    @classmethod
    def from_unsorted(cls, time_index, outcome, exposure, covariates=None, **names) -> "TimeSeriesDataset":
        t = np.asarray(time_index)
        order = np.argsort(t, kind="stable")
        covariates = covariates or {}
        return cls(
            time_index=t[order],
            outcome=np.asarray(outcome, dtype=float)[order],
            exposure=np.asarray(exposure, dtype=float)[order],
            covariates={k: np.asarray(v, dtype=float)[order] for k, v in covariates.items()},
            **names,
        )


@dataclass(frozen=True)
class IndicatorSeries:
    """Exposure led by ``lead`` days: ``values[t] = X at day time_index[t] + lead``.

    ``valid`` marks rows where that day exists in the dataset; other rows hold
    NaN and are excluded from any fit that uses the indicator.
    """

    values: np.ndarray
    lead: int
    valid: np.ndarray

    @property
    def valid_range(self) -> np.ndarray:
        return np.flatnonzero(self.valid)


@dataclass(frozen=True)
class Schema:
    time: str
    outcome: str
    exposure: str
    covariates: tuple[str, ...] = ()

    @classmethod
    def from_mapping(cls, m: Mapping) -> "Schema":
        missing = [k for k in ("time", "outcome", "exposure") if not m.get(k)]
        if missing:
            raise SchemaError(f"schema must name the {', '.join(missing)} column(s)")
        covs = m.get("covariates") or ()
        if isinstance(covs, str):
            covs = [c.strip() for c in covs.split(",") if c.strip()]
        return cls(str(m["time"]), str(m["outcome"]), str(m["exposure"]), tuple(str(c) for c in covs))

    @property
    def columns(self) -> list[str]:
        return [self.time, self.outcome, self.exposure, *self.covariates]


def _parse_cell(raw: str, col: str, line: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ParseError(f"non-numeric value {raw!r} in column {col!r}", row=line) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {raw!r} in column {col!r}", row=line)
    return v


def load_dataset(path: str | os.PathLike, schema: Schema | Mapping) -> TimeSeriesDataset:
    """Read a comma-delimited file with a header row into a sorted dataset.

    Rows with a missing required cell are dropped (the count is logged).
    Row numbers in error messages are 1-based file line numbers, header included.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    if len(set(schema.columns)) != len(schema.columns):
        raise SchemaError(f"schema names a column twice: {schema.columns}")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError(f"input file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise SchemaError(f"missing column(s) {missing} in {path}; header has {header}")
        pos = {c: header.index(c) for c in schema.columns}

        rows: list[list[float]] = []
        dropped = 0
        for rec in reader:
            line = reader.line_num
            if not rec or all(not cell.strip() for cell in rec):
                continue
            cells = [rec[pos[c]].strip() if pos[c] < len(rec) else "" for c in schema.columns]
            if any(cell.lower() in _MISSING for cell in cells):
                dropped += 1
                continue
            vals = [_parse_cell(cell, c, line) for cell, c in zip(cells, schema.columns)]
            if vals[0] != np.floor(vals[0]):
                raise ParseError(f"time column {schema.time!r} must be an integer day, got {cells[0]!r}", row=line)
            rows.append(vals)
    if dropped:
        log.info("dropped %d row(s) with missing values from %s", dropped, path)
    if len(rows) < 2:
        raise ValidationError(f"{path}: need at least 2 complete rows, got {len(rows)}")

    arr = np.array(rows, dtype=np.float64)
    t = arr[:, 0].astype(np.int64)
    order = np.argsort(t, kind="stable")
    ts = t[order]
    dup = ts[1:][np.diff(ts) == 0]
    if dup.size:
        raise ValidationError(f"duplicate time value {int(dup[0])} in column {schema.time!r}")
    arr = arr[order]
    return TimeSeriesDataset(
        time_index=ts,
        outcome=arr[:, 1],
        exposure=arr[:, 2],
        covariates={c: arr[:, 3 + i] for i, c in enumerate(schema.covariates)},
        outcome_name=schema.outcome,
        exposure_name=schema.exposure,
        time_name=schema.time,
    )


def dataset_to_csv(d: TimeSeriesDataset) -> str:
    cols = [d.outcome, d.exposure, *d.covariates.values()]
    lines = [",".join([d.time_name, *d.column_names])]
    for i in range(d.n):
        lines.append(",".join([str(int(d.time_index[i]))] + [fmt_float(c[i]) for c in cols]))
    return "\n".join(lines) + "\n"


def write_dataset(d: TimeSeriesDataset, path: str | os.PathLike) -> None:
    """Write ``d`` as CSV; floats use shortest round-trip repr so reloading is bit-exact."""
    atomic_write_text(path, dataset_to_csv(d))


def dataset_schema(d: TimeSeriesDataset) -> Schema:
    return Schema(d.time_name, d.outcome_name, d.exposure_name, tuple(d.covariates))


def make_indicator(d: TimeSeriesDataset, lead: int = 1) -> IndicatorSeries:
    """Future exposure X_{t+lead}, matched by day number rather than by row.

    Pairs whose target day is absent (a calendar gap, the end of a season or
    of the series) are left invalid instead of being bridged.
    """
    lead = int(lead)
    if lead < 1:
        raise ValidationError(f"indicator lead must be >= 1 day, got {lead}")
    if lead >= d.n:
        raise ValidationError(f"indicator lead {lead} must be smaller than the number of rows {d.n}")
    target = d.time_index + lead
    pos = np.searchsorted(d.time_index, target)
    inside = pos < d.n
    valid = np.zeros(d.n, dtype=bool)
    valid[inside] = d.time_index[pos[inside]] == target[inside]
    values = np.full(d.n, np.nan)
    values[valid] = d.exposure[pos[valid]]
    values.setflags(write=False)
    valid.setflags(write=False)
    return IndicatorSeries(values=values, lead=lead, valid=valid)


def center_and_scale(d: TimeSeriesDataset, columns: Iterable[str]) -> TimeSeriesDataset:
    """Return a copy with each named column shifted to mean 0 and scaled to SD 1 (ddof=1)."""
    columns = list(columns)
    transforms = dict(d.transforms)
    new = {}
    for name in columns:
        col = d.column(name)
        mean = float(np.mean(col))
        sd = float(np.std(col, ddof=1))
        if not sd > 0:
            raise ValidationError(f"column {name!r} has zero variance and cannot be scaled")
        new[name] = (col - mean) / sd
        if name in transforms:
            m0, s0 = transforms[name]
            transforms[name] = (m0 + s0 * mean, s0 * sd)
        else:
            transforms[name] = (mean, sd)
    covs = {k: new.get(k, v) for k, v in d.covariates.items()}
    return replace(
        d,
        outcome=new.get(d.outcome_name, d.outcome),
        exposure=new.get(d.exposure_name, d.exposure),
        covariates=covs,
        transforms=transforms,
    )


def select_covariates(d: TimeSeriesDataset, names: Sequence[str]) -> TimeSeriesDataset:
    missing = [c for c in names if c not in d.covariates]
    if missing:
        raise SchemaError(f"unknown covariate(s) {missing}; available: {d.covariate_names}")
    return replace(d, covariates={k: d.covariates[k] for k in names})
