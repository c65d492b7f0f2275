"""School-year count records and the validated dataset the model consumes.

One record is one school-year: a reported count plus the covariates that
drive incidence (urbanization, enrollment, gender composition) and
reporting (institutional type, gender composition, Pell share). The
Dataset packs records into aligned numpy arrays and precomputes the
derived covariates used by the linear predictors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

URBAN, SUBURBAN, RURAL = 1, 2, 3

CSV_COLUMNS = (
    "school_id",
    "year",
    "reported",
    "urbanization",
    "students",
    "frac_women",
    "pell_frac",
    "assoc_only",
    "religious",
)


class IngestError(ValueError):
    """Raised when a CSV fails validation; message lists every bad row."""


@dataclass(frozen=True)
class SchoolYearRecord:
    school_id: str
    year: int
    reported: int
    urbanization: int
    students: int
    frac_women: float
    pell_frac: float
    assoc_only: int
    religious: int

    def problems(self) -> list[str]:
        """Return a list of constraint violations, empty when valid."""
        out = []
        if self.reported < 0:
            out.append(f"reported must be >= 0, got {self.reported}")
        if self.urbanization not in (URBAN, SUBURBAN, RURAL):
            out.append(f"urbanization must be 1, 2, or 3, got {self.urbanization}")
        if self.students < 1:
            out.append(f"students must be >= 1, got {self.students}")
        for name in ("frac_women", "pell_frac"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or not math.isfinite(v):
                out.append(f"{name} must lie in [0, 1], got {v}")
        for name in ("assoc_only", "religious"):
            if getattr(self, name) not in (0, 1):
                out.append(f"{name} must be 0 or 1, got {getattr(self, name)}")
        return out


@dataclass(frozen=True)
class IngestReport:
    rows_read: int
    n_records: int
    n_schools: int
    year_min: int
    year_max: int
    pell_median: float

    def lines(self) -> list[str]:
        return [
            f"rows read:        {self.rows_read}",
            f"records kept:     {self.n_records}",
            f"schools:          {self.n_schools}",
            f"years:            {self.year_min}-{self.year_max}",
            f"pell median:      {self.pell_median:.6g}",
        ]


@dataclass(frozen=True)
class Dataset:
    """Validated, immutable record collection with model-ready arrays.

    ``pell_median`` is the centering constant for the Pell covariate. It
    defaults to the median over these records but can be pinned, e.g. a
    held-out slice reuses the median of its training slice.
    """

    records: tuple[SchoolYearRecord, ...]
    pell_median: float
    school_ids: tuple[str, ...] = field(init=False, repr=False)
    school_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not self.records:
            raise ValueError("dataset needs at least one record")
        problems = []
        seen = {}
        for i, rec in enumerate(self.records):
            for msg in rec.problems():
                problems.append(f"record {i} ({rec.school_id}, {rec.year}): {msg}")
            key = (rec.school_id, rec.year)
            if key in seen:
                problems.append(f"record {i}: duplicate (school_id, year) {key}, first at record {seen[key]}")
            else:
                seen[key] = i
        if problems:
            raise ValueError("invalid records:\n" + "\n".join(problems))
        ids = []
        index = {}
        for rec in self.records:
            if rec.school_id not in index:
                index[rec.school_id] = len(ids)
                ids.append(rec.school_id)
        object.__setattr__(self, "school_ids", tuple(ids))
        object.__setattr__(self, "school_index", index)

    @classmethod
    def from_records(cls, records, pell_median: float | None = None) -> "Dataset":
        records = tuple(records)
        if pell_median is None:
            if not records:
                raise ValueError("dataset needs at least one record")
            pell_median = float(np.median([r.pell_frac for r in records]))
        return cls(records=records, pell_median=float(pell_median))

    # -- sizes ---------------------------------------------------------
    @property
    def n_records(self) -> int:
        return len(self.records)

    @property
    def n_schools(self) -> int:
        return len(self.school_ids)

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(sorted({r.year for r in self.records}))

    # -- aligned arrays (cached) ---------------------------------------
    def _arrays(self):
        cache = self.__dict__.get("_array_cache")
        if cache is None:
            recs = self.records
            cache = {
                "x": np.array([r.reported for r in recs], dtype=np.int64),
                "year": np.array([r.year for r in recs], dtype=np.int64),
                "students": np.array([r.students for r in recs], dtype=np.float64),
                "urb": np.array([r.urbanization for r in recs], dtype=np.int64),
                "school_idx": np.array([self.school_index[r.school_id] for r in recs], dtype=np.int64),
                "frac_women": np.array([r.frac_women for r in recs], dtype=np.float64),
                "pell": np.array([r.pell_frac for r in recs], dtype=np.float64),
                "w1": np.array([r.assoc_only for r in recs], dtype=np.float64),
                "w2": np.array([r.religious for r in recs], dtype=np.float64),
            }
            cache["v2"] = np.log(cache["students"])
            cache["v3"] = (cache["frac_women"] - 0.5) ** 2
            cache["w3"] = cache["frac_women"] - 0.5
            cache["w4"] = cache["pell"] - self.pell_median
            self.__dict__["_array_cache"] = cache
        return cache

    def __getattr__(self, name):
        if name in ("x", "year", "students", "urb", "school_idx", "frac_women",
                    "pell", "v2", "v3", "w1", "w2", "w3", "w4"):
            return self._arrays()[name]
        raise AttributeError(name)

    def record_keys(self) -> list[str]:
        return [f"{r.school_id}:{r.year}" for r in self.records]

    def record_index(self, school_id: str, year: int) -> int:
        for i, rec in enumerate(self.records):
            if rec.school_id == school_id and rec.year == year:
                return i
        raise KeyError(f"no record for school {school_id!r} in year {year}")


def _parse_row(row: dict, lineno: int, problems: list) -> SchoolYearRecord | None:
    def intval(col, float_ok=False):
        raw = (row.get(col) or "").strip()
        try:
            v = float(raw)
        except ValueError:
            problems.append(f"row {lineno}: column {col!r} is not numeric: {raw!r}")
            return None
        if not float_ok and v != int(v):
            problems.append(f"row {lineno}: column {col!r} must be an integer, got {raw!r}")
            return None
        return v if float_ok else int(v)

    vals = {
        "year": intval("year"),
        "reported": intval("reported"),
        "urbanization": intval("urbanization"),
        "students": intval("students"),
        "frac_women": intval("frac_women", float_ok=True),
        "pell_frac": intval("pell_frac", float_ok=True),
        "assoc_only": intval("assoc_only"),
        "religious": intval("religious"),
    }
    school_id = (row.get("school_id") or "").strip()
    if not school_id:
        problems.append(f"row {lineno}: school_id is empty")
        return None
    if any(v is None for v in vals.values()):
        return None
    rec = SchoolYearRecord(school_id=school_id, **vals)
    bad = rec.problems()
    if bad:
        problems.extend(f"row {lineno}: {msg}" for msg in bad)
        return None
    return rec


def load_csv(path) -> tuple[Dataset, IngestReport]:
    """Read and validate a record CSV.

    Every problem is collected with its row number and reported in a
    single IngestError; nothing is silently dropped or repaired.
    """
    path = Path(path)
    problems: list[str] = []
    records: list[SchoolYearRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise IngestError(f"{path}: missing required columns: {', '.join(missing)}")
        extra = [c for c in header if c not in CSV_COLUMNS]
        if extra:
            raise IngestError(f"{path}: unknown columns: {', '.join(extra)}")
        rows_read = 0
        for row in reader:
            rows_read += 1
            rec = _parse_row(row, reader.line_num, problems)
            if rec is not None:
                records.append(rec)
    if rows_read == 0:
        raise IngestError(f"{path}: no data rows")
    seen: dict = {}
    for rec in records:
        key = (rec.school_id, rec.year)
        if key in seen:
            problems.append(f"duplicate (school_id, year) {key}")
        seen[key] = True
    if problems:
        raise IngestError(f"{path}: {len(problems)} problem(s):\n" + "\n".join(problems))
    data = Dataset.from_records(records)
    report = IngestReport(
        rows_read=rows_read,
        n_records=data.n_records,
        n_schools=data.n_schools,
        year_min=min(data.years),
        year_max=max(data.years),
        pell_median=data.pell_median,
    )
    return data, report


def write_csv(data: Dataset, path) -> None:
    """Write records in the canonical schema: UTF-8, comma, LF line ends.

    Floats are written with repr so a round trip reproduces them exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in data.records:
            writer.writerow([
                r.school_id, r.year, r.reported, r.urbanization, r.students,
                repr(float(r.frac_women)), repr(float(r.pell_frac)),
                r.assoc_only, r.religious,
            ])
