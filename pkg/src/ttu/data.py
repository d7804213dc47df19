"""Encounter ingestion, exclusions, censoring, and covariate preparation.

All functions are pure: they take immutable inputs and return new objects, so
they are safe to call from any thread.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

DEFAULT_CENSOR_LIMIT_MIN = 300.0

# Raw CSV schema (exact names, fixed order).
CSV_COLUMNS = ["id", "ttu_raw_min", "voided", "age_years", "sex", "admitted", "catheter", "cpa"]

# Derived columns appended when exporting a prepared dataset.
PREP_COLUMNS = [
    "prep_t_min",
    "prep_censored",
    "prep_age_std",
    "prep_age_missing",
    "prep_sex01",
    "prep_sex_missing",
]


class DataError(ValueError):
    """Raised for malformed input files or impossible dataset requests."""


@dataclass(frozen=True)
class PatientRecord:
    """One raw ED encounter row."""

    id: str
    voided: bool
    admitted: bool
    ttu_raw_min: Optional[float] = None
    age_years: Optional[float] = None
    sex: Optional[str] = None  # "F" or "M"
    catheter_at_presentation: bool = False
    cpa_on_arrival: bool = False

    def __post_init__(self):
        if self.ttu_raw_min is not None:
            if self.ttu_raw_min < 0:
                raise DataError(f"record {self.id!r}: ttu_raw_min must be >= 0")
            if not self.voided:
                raise DataError(f"record {self.id!r}: ttu_raw_min present but voided is false")
        if self.sex is not None and self.sex not in ("F", "M"):
            raise DataError(f"record {self.id!r}: sex must be 'F', 'M', or missing")


@dataclass(frozen=True)
class ExclusionTally:
    """Counts per exclusion reason, in the order the rules are applied."""

    cpa: int = 0
    catheter: int = 0
    missing_time: int = 0

    @property
    def total(self) -> int:
        return self.cpa + self.catheter + self.missing_time

    def as_dict(self) -> dict:
        return {"cpa": self.cpa, "catheter": self.catheter, "missing_time": self.missing_time}


def apply_exclusions(records: list[PatientRecord]) -> tuple[list[PatientRecord], ExclusionTally]:
    """Drop encounters that cannot contribute to the model.

    Rules fire in a fixed order per record: CPA on arrival, urinary catheter at
    presentation, then voided with no recorded time. A record is tallied under
    the first rule it trips.
    """
    kept = []
    cpa = catheter = missing_time = 0
    for rec in records:
        if rec.cpa_on_arrival:
            cpa += 1
        elif rec.catheter_at_presentation:
            catheter += 1
        elif rec.voided and rec.ttu_raw_min is None:
            missing_time += 1
        else:
            kept.append(rec)
    return kept, ExclusionTally(cpa=cpa, catheter=catheter, missing_time=missing_time)


@dataclass(frozen=True)
class PreparedDataset:
    """Design arrays consumed by the likelihood.

    ``t_min`` is only meaningful where ``voided == 1``; non-voided rows carry
    t_min = 0 and are never touched by the time kernels. Raw covariate values
    are retained so a prepared dataset can be re-exported losslessly.
    """

    n: int
    t_min: np.ndarray  # censored TTU, minutes
    censored: np.ndarray  # {0,1}
    voided: np.ndarray  # {0,1}
    outcome: np.ndarray  # {0,1}
    age_std: np.ndarray
    age_missing: np.ndarray  # {0,1}
    sex01: np.ndarray  # {0,1}
    sex_missing: np.ndarray  # {0,1}
    age_mean: float
    age_sd: float
    censor_limit_min: float
    t_scale_min: float
    ids: tuple = field(repr=False, default=())
    ttu_raw_min: np.ndarray = field(repr=False, default=None)  # NaN where absent
    age_years_raw: np.ndarray = field(repr=False, default=None)  # NaN where absent

    @property
    def covariates(self) -> np.ndarray:
        """n x 4 design matrix: age_std, age_missing, sex01, sex_missing."""
        return np.column_stack(
            [self.age_std, self.age_missing.astype(float), self.sex01.astype(float),
             self.sex_missing.astype(float)]
        )

    def digest(self) -> str:
        """Content hash used to tie posterior bundles to their training data."""
        h = hashlib.sha256()
        for arr in (self.t_min, self.censored, self.voided, self.outcome,
                    self.age_std, self.age_missing, self.sex01, self.sex_missing):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        h.update(np.array([self.age_mean, self.age_sd, self.censor_limit_min,
                           self.t_scale_min]).tobytes())
        return h.hexdigest()


def prepare_dataset(records: list[PatientRecord],
                    censor_limit_min: float = DEFAULT_CENSOR_LIMIT_MIN) -> PreparedDataset:
    """Censor times, standardize age, and encode sex (F=0, M=1) with flags.

    Records are assumed to have passed ``apply_exclusions``. Standardization
    uses the sample sd (n-1 denominator) over non-missing ages; if fewer than
    two distinct ages exist the sd falls back to 1 so the round-trip stays
    exact. The reported t-scale is max(sd of censored t over voided rows, 1).
    """
    if censor_limit_min <= 0:
        raise DataError("censor_limit_min must be > 0")
    n = len(records)
    if n == 0:
        raise DataError("empty dataset")

    C = float(censor_limit_min)
    voided = np.array([1 if r.voided else 0 for r in records], dtype=np.int8)
    outcome = np.array([1 if r.admitted else 0 for r in records], dtype=np.int8)
    ttu_raw = np.array([np.nan if r.ttu_raw_min is None else float(r.ttu_raw_min)
                        for r in records])
    age_raw = np.array([np.nan if r.age_years is None else float(r.age_years)
                        for r in records])

    t_min = np.zeros(n)
    censored = np.zeros(n, dtype=np.int8)
    has_t = ~np.isnan(ttu_raw)
    t_min[has_t] = np.minimum(ttu_raw[has_t], C)
    censored[has_t] = (ttu_raw[has_t] > C).astype(np.int8)

    age_missing = np.isnan(age_raw).astype(np.int8)
    obs_age = age_raw[age_missing == 0]
    if obs_age.size == 0:
        age_mean, age_sd = 0.0, 1.0
    else:
        age_mean = float(np.mean(obs_age))
        age_sd = float(np.std(obs_age, ddof=1)) if obs_age.size >= 2 else 0.0
        if not age_sd > 0.0:
            age_sd = 1.0
    age_std = np.zeros(n)
    age_std[age_missing == 0] = (obs_age - age_mean) / age_sd

    sex_missing = np.array([1 if r.sex is None else 0 for r in records], dtype=np.int8)
    sex01 = np.array([1 if r.sex == "M" else 0 for r in records], dtype=np.int8)

    t_voided = t_min[voided == 1]
    t_sd = float(np.std(t_voided, ddof=1)) if t_voided.size >= 2 else 0.0
    t_scale = max(t_sd, 1.0)

    return PreparedDataset(
        n=n, t_min=t_min, censored=censored, voided=voided, outcome=outcome,
        age_std=age_std, age_missing=age_missing, sex01=sex01, sex_missing=sex_missing,
        age_mean=age_mean, age_sd=age_sd, censor_limit_min=C, t_scale_min=t_scale,
        ids=tuple(r.id for r in records), ttu_raw_min=ttu_raw, age_years_raw=age_raw,
    )


def _parse_bool(cell: str, column: str, row_num: int) -> bool:
    if cell == "0":
        return False
    if cell == "1":
        return True
    raise DataError(f"row {row_num}: column {column!r} must be 0 or 1, got {cell!r}")


def read_dataset(path, fmt: str = "csv") -> list[PatientRecord]:
    """Parse a raw cohort CSV into records; empty cells mean missing."""
    if fmt != "csv":
        raise DataError(f"unsupported format {fmt!r}; only 'csv' is supported")
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        unknown = [c for c in header if c not in CSV_COLUMNS and not c.startswith("prep_")]
        if unknown:
            raise DataError(
                f"unknown column(s) {unknown}; known columns are {CSV_COLUMNS}")
        missing_cols = [c for c in CSV_COLUMNS if c not in header]
        if missing_cols:
            raise DataError(
                f"missing column(s) {missing_cols}; known columns are {CSV_COLUMNS}")
        for row_num, row in enumerate(reader, start=2):
            try:
                ttu_cell = (row["ttu_raw_min"] or "").strip()
                age_cell = (row["age_years"] or "").strip()
                sex_cell = (row["sex"] or "").strip()
                ttu = float(ttu_cell) if ttu_cell else None
                if ttu is not None and ttu < 0:
                    raise DataError(f"row {row_num}: ttu_raw_min must be >= 0, got {ttu_cell}")
                age = float(age_cell) if age_cell else None
                if age is not None and age < 0:
                    raise DataError(f"row {row_num}: age_years must be >= 0, got {age_cell}")
                if sex_cell not in ("", "F", "M"):
                    raise DataError(f"row {row_num}: sex must be F, M, or empty, got {sex_cell!r}")
                rec = PatientRecord(
                    id=row["id"],
                    ttu_raw_min=ttu,
                    voided=_parse_bool(row["voided"], "voided", row_num),
                    age_years=age,
                    sex=sex_cell or None,
                    admitted=_parse_bool(row["admitted"], "admitted", row_num),
                    catheter_at_presentation=_parse_bool(row["catheter"], "catheter", row_num),
                    cpa_on_arrival=_parse_bool(row["cpa"], "cpa", row_num),
                )
            except DataError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"row {row_num}: malformed row ({exc})") from exc
            records.append(rec)
    return records


def write_records(records: list[PatientRecord], path) -> None:
    """Write records using the raw CSV schema."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.id,
                "" if r.ttu_raw_min is None else repr(float(r.ttu_raw_min)),
                int(r.voided),
                "" if r.age_years is None else repr(float(r.age_years)),
                r.sex or "",
                int(r.admitted),
                int(r.catheter_at_presentation),
                int(r.cpa_on_arrival),
            ])


def write_prepared(ds: PreparedDataset, path) -> None:
    """Export a prepared dataset: raw schema plus prep_-prefixed derived columns.

    The raw columns keep the uncensored time so re-preparing the exported file
    reproduces the dataset bit-for-bit.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS + PREP_COLUMNS)
        for i in range(ds.n):
            raw_t = ds.ttu_raw_min[i]
            raw_age = ds.age_years_raw[i]
            sex = "" if ds.sex_missing[i] else ("M" if ds.sex01[i] else "F")
            writer.writerow([
                ds.ids[i] if ds.ids else str(i),
                "" if np.isnan(raw_t) else repr(float(raw_t)),
                int(ds.voided[i]),
                "" if np.isnan(raw_age) else repr(float(raw_age)),
                sex,
                int(ds.outcome[i]),
                0,
                0,
                repr(float(ds.t_min[i])),
                int(ds.censored[i]),
                repr(float(ds.age_std[i])),
                int(ds.age_missing[i]),
                int(ds.sex01[i]),
                int(ds.sex_missing[i]),
            ])
