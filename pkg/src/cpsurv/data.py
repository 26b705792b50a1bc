"""Survival dataset loading, covariate standardization, counting-process splitting."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SchemaError, ValidationError

INTERCEPT = "Intercept"


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: follow-up time, event indicator and covariate values."""

    id: int
    time: float
    status: int
    covariates: Mapping[str, float]

    def __post_init__(self):
        if not (self.time > 0.0) or not math.isfinite(self.time):
            raise ValidationError(f"subject {self.id}: time must be positive, got {self.time!r}")
        if self.status not in (0, 1):
            raise ValidationError(f"subject {self.id}: status must be 0 or 1, got {self.status!r}")


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of subject records plus standardization metadata.

    ``scaling`` maps a standardized covariate name (e.g. ``age_scale``) to the
    (mean, sd) of the source column, so predictions can be requested at
    raw-scale values.
    """

    records: tuple[SubjectRecord, ...]
    scaling: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    time_unit: str = "years"

    def __post_init__(self):
        if not self.records:
            raise ValidationError("dataset has no records")
        names = set(self.records[0].covariates)
        for rec in self.records:
            if set(rec.covariates) != names:
                raise ValidationError(
                    f"subject {rec.id}: covariate names differ from the first record"
                )

    def __len__(self):
        return len(self.records)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.records[0].covariates)

    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    def statuses(self) -> np.ndarray:
        return np.array([float(r.status) for r in self.records])

    def max_time(self) -> float:
        return max(r.time for r in self.records)

    def n_events(self) -> int:
        return sum(r.status for r in self.records)

    def design_matrix(self, covariates: Sequence[str]) -> np.ndarray:
        """Design matrix with a leading intercept column of ones.

        ``covariates`` may or may not start with "Intercept"; either way the
        returned matrix does.
        """
        names = [c for c in covariates if c != INTERCEPT]
        n = len(self.records)
        z = np.ones((n, len(names) + 1))
        for j, name in enumerate(names, start=1):
            for i, rec in enumerate(self.records):
                try:
                    z[i, j] = rec.covariates[name]
                except KeyError:
                    raise ValidationError(
                        f"covariate {name!r} not present in dataset "
                        f"(available: {sorted(self.records[0].covariates)})"
                    ) from None
        return z


@dataclass
class CountingProcessRow:
    """Per-interval subrecord of one subject in counting-process format."""

    id: int
    tstart: float
    tstop: float
    status: int
    interval: int
    design_row: np.ndarray


@dataclass(frozen=True)
class ColumnSchema:
    """Explicit mapping from model fields to CSV column names."""

    time: str = "time"
    status: str = "status"
    covariates: Mapping[str, str] = field(default_factory=dict)
    id: str | None = None


def load_dataset(path, schema: ColumnSchema, time_unit: str = "years") -> Dataset:
    """Read a CSV survival dataset under an explicit column mapping.

    Raises SchemaError naming the offending row and column for missing
    columns, unparsable numbers, non-positive times or statuses outside {0, 1}.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: file is empty")
        header = set(reader.fieldnames)
        needed = [schema.time, schema.status, *schema.covariates.values()]
        if schema.id is not None:
            needed.append(schema.id)
        for col in needed:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        records = []
        for rownum, row in enumerate(reader, start=1):
            time = _parse_float(row, schema.time, path, rownum)
            if not (time > 0.0):
                raise SchemaError(f"{path}: row {rownum}, column {schema.time!r}: "
                                  f"time must be positive, got {row[schema.time]!r}")
            status_raw = _parse_float(row, schema.status, path, rownum)
            if status_raw not in (0.0, 1.0):
                raise SchemaError(f"{path}: row {rownum}, column {schema.status!r}: "
                                  f"status must be 0 or 1, got {row[schema.status]!r}")
            covs = {
                name: _parse_float(row, col, path, rownum)
                for name, col in schema.covariates.items()
            }
            rec_id = rownum
            if schema.id is not None:
                rec_id = int(_parse_float(row, schema.id, path, rownum))
            records.append(SubjectRecord(rec_id, time, int(status_raw), covs))
    if not records:
        raise SchemaError(f"{path}: no data rows")
    return Dataset(tuple(records), time_unit=time_unit)


def _parse_float(row, col, path, rownum) -> float:
    raw = row.get(col)
    if raw is None:
        raise SchemaError(f"{path}: row {rownum}: missing value for column {col!r}")
    try:
        value = float(raw)
    except ValueError:
        raise SchemaError(
            f"{path}: row {rownum}, column {col!r}: not numeric: {raw!r}"
        ) from None
    if math.isnan(value):
        raise SchemaError(f"{path}: row {rownum}, column {col!r}: NaN not allowed")
    return value


def standardize_covariate(ds: Dataset, name: str) -> Dataset:
    """Append ``<name>_scale`` with sample mean 0 and sample SD 1 (ddof=1).

    The original covariate is retained and the (mean, sd) pair is recorded in
    the dataset's scaling metadata.
    """
    if name not in ds.covariate_names:
        raise ValidationError(f"covariate {name!r} not in dataset")
    values = np.array([r.covariates[name] for r in ds.records], dtype=float)
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    if sd <= 0.0:
        raise ValidationError(f"covariate {name!r} is constant (sd = 0); cannot standardize")
    scaled_name = f"{name}_scale"
    records = tuple(
        SubjectRecord(
            r.id,
            r.time,
            r.status,
            {**r.covariates, scaled_name: (r.covariates[name] - mean) / sd},
        )
        for r in ds.records
    )
    scaling = {**ds.scaling, scaled_name: (mean, sd)}
    return Dataset(records, scaling=scaling, time_unit=ds.time_unit)


def _check_taus(taus: Sequence[float]) -> np.ndarray:
    taus = np.asarray(taus, dtype=float)
    if taus.ndim != 1:
        raise ValidationError("change-points must be a 1-d sequence")
    if taus.size and not (taus[0] > 0.0):
        raise ValidationError(f"change-points must be positive, got {taus.tolist()}")
    if np.any(np.diff(taus) <= 0.0):
        raise ValidationError(f"change-points must be strictly increasing, got {taus.tolist()}")
    return taus


def split_counting_process(
    ds: Dataset, taus: Sequence[float], design: Sequence[str]
) -> list[CountingProcessRow]:
    """Expand each subject into per-interval subrecords at the change-points.

    Interval j is the right-closed window (tau_{j-1}, tau_j]; a subject whose
    time falls in interval j contributes j rows, all censored except possibly
    the last.
    """
    taus = _check_taus(taus)
    names = [c for c in design if c != INTERCEPT]
    z = ds.design_matrix(names)
    rows: list[CountingProcessRow] = []
    for i, rec in enumerate(ds.records):
        j_final = int(np.searchsorted(taus, rec.time, side="left")) + 1
        for j in range(1, j_final + 1):
            tstart = 0.0 if j == 1 else float(taus[j - 2])
            tstop = rec.time if j == j_final else float(taus[j - 1])
            status = rec.status if j == j_final else 0
            rows.append(CountingProcessRow(rec.id, tstart, tstop, status, j, z[i]))
    return rows


def export_counting_process(rows: Iterable[CountingProcessRow], design: Sequence[str], fh):
    """Write counting-process rows as CSV: id, tstart, time, status, Interval, design."""
    names = [c for c in design if c != INTERCEPT]
    writer = csv.writer(fh)
    writer.writerow(["id", "tstart", "time", "status", "Interval", INTERCEPT, *names])
    for row in rows:
        writer.writerow(
            [row.id, f"{row.tstart:g}", f"{row.tstop:g}", row.status, row.interval]
            + [f"{v:g}" for v in row.design_row]
        )
