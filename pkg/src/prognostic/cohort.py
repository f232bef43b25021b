"""Patient records, columnar cohorts, CSV ingestion and dataset splitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import RowError, SchemaError, SizingError, ValidationError

log = logging.getLogger(__name__)

COVARIATES = (
    "age",
    "nodal_stage",
    "node_count",
    "laterality",
    "er",
    "pr",
    "size_mm",
    "grade",
    "radiotherapy",
    "chemotherapy",
    "trastuzumab",
)
CSV_COLUMNS = COVARIATES + ("time", "event")

NODAL_STAGES = ("N0", "N1", "N2", "N3")
LATERALITIES = ("left", "right", "bilateral")
GRADES = (1, 2, 3)
BINARY_FIELDS = ("er", "pr", "radiotherapy", "chemotherapy", "trastuzumab")
# level labels for the integer codes used in columnar storage
LEVELS = {"nodal_stage": NODAL_STAGES, "laterality": LATERALITIES}


@dataclass(frozen=True)
class PatientRecord:
    """One patient; ``None`` marks a missing covariate."""

    age: float
    nodal_stage: Optional[str] = None
    node_count: Optional[int] = None
    laterality: Optional[str] = None
    er: Optional[int] = None
    pr: Optional[int] = None
    size_mm: Optional[float] = None
    grade: Optional[int] = None
    radiotherapy: Optional[int] = None
    chemotherapy: Optional[int] = None
    trastuzumab: Optional[int] = None
    time: float = 1.0
    event: int = 0

    def __post_init__(self):
        if not (self.age > 0 and math.isfinite(self.age)):
            raise ValidationError(f"age must be positive, got {self.age}")
        if not (self.time > 0 and math.isfinite(self.time)):
            raise ValidationError(f"time must be positive, got {self.time}")
        if self.event not in (0, 1):
            raise ValidationError(f"event must be 0 or 1, got {self.event}")
        if self.size_mm is not None and not self.size_mm > 0:
            raise ValidationError(f"size_mm must be positive, got {self.size_mm}")
        if self.node_count is not None and self.node_count < 0:
            raise ValidationError(f"node_count must be nonnegative, got {self.node_count}")
        if self.nodal_stage is not None and self.nodal_stage not in NODAL_STAGES:
            raise ValidationError(f"unknown nodal stage {self.nodal_stage!r}")
        if self.laterality is not None and self.laterality not in LATERALITIES:
            raise ValidationError(f"unknown laterality {self.laterality!r}")
        if self.grade is not None and self.grade not in GRADES:
            raise ValidationError(f"unknown grade {self.grade!r}")
        for name in BINARY_FIELDS:
            v = getattr(self, name)
            if v is not None and v not in (0, 1):
                raise ValidationError(f"{name} must be 0/1, got {v!r}")

    def replace(self, **changes) -> "PatientRecord":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return PatientRecord(**data)


def _encode_value(name, v):
    if name in LEVELS:
        return float(LEVELS[name].index(v))
    return float(v)


def _decode_value(name, x):
    if name in LEVELS:
        return LEVELS[name][int(x)]
    if name == "age" or name == "size_mm":
        return float(x)
    return int(x)


@dataclass
class Cohort:
    """Columnar cohort with an explicit presence mask per covariate.

    ``values[name]`` holds float codes (level index for nodal stage and
    laterality, the grade itself for grade); entries where ``present[name]``
    is False are meaningless and never read.
    """

    values: dict
    present: dict
    time: np.ndarray
    event: np.ndarray
    ids: np.ndarray
    horizon: float = 5.0
    provenance: str = ""
    dropped: int = 0

    def __post_init__(self):
        n = len(self.time)
        if n == 0:
            raise SizingError("cohort must be nonempty")
        self.time = np.asarray(self.time, dtype=float)
        self.event = np.asarray(self.event, dtype=np.int8)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        for name in COVARIATES:
            self.values[name] = np.asarray(self.values[name], dtype=float)
            self.present[name] = np.asarray(self.present[name], dtype=bool)
            if len(self.values[name]) != n or len(self.present[name]) != n:
                raise ValidationError(f"column {name} has wrong length")
        if np.any(self.time <= 0) or not np.all(np.isfinite(self.time)):
            raise ValidationError("all times must be positive and finite")
        if not np.all(self.present["age"]):
            raise ValidationError("age may not be missing")
        if np.any((self.event == 1) & (self.time > self.horizon + 1e-12)):
            raise ValidationError("events must occur within the cohort horizon")

    def __len__(self):
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def column(self, name) -> np.ndarray:
        """Float view of a covariate with NaN where missing."""
        out = self.values[name].copy()
        out[~self.present[name]] = np.nan
        return out

    def subset(self, index) -> "Cohort":
        index = np.asarray(index)
        return Cohort(
            values={k: v[index] for k, v in self.values.items()},
            present={k: v[index] for k, v in self.present.items()},
            time=self.time[index],
            event=self.event[index],
            ids=self.ids[index],
            horizon=self.horizon,
            provenance=self.provenance,
        )

    def record(self, i) -> PatientRecord:
        kw = {}
        for name in COVARIATES:
            kw[name] = _decode_value(name, self.values[name][i]) if self.present[name][i] else None
        return PatientRecord(time=float(self.time[i]), event=int(self.event[i]), **kw)

    def records(self) -> Iterator[PatientRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records: Iterable[PatientRecord], horizon=5.0, provenance="", ids=None):
        records = list(records)
        n = len(records)
        values = {name: np.zeros(n) for name in COVARIATES}
        present = {name: np.zeros(n, dtype=bool) for name in COVARIATES}
        for i, r in enumerate(records):
            for name in COVARIATES:
                v = getattr(r, name)
                if v is not None:
                    values[name][i] = _encode_value(name, v)
                    present[name][i] = True
        return cls(
            values=values,
            present=present,
            time=np.array([r.time for r in records], dtype=float),
            event=np.array([r.event for r in records], dtype=np.int8),
            ids=np.arange(n) if ids is None else ids,
            horizon=horizon,
            provenance=provenance,
        )

    @classmethod
    def concat(cls, cohorts) -> "Cohort":
        cohorts = list(cohorts)
        first = cohorts[0]
        return cls(
            values={k: np.concatenate([c.values[k] for c in cohorts]) for k in COVARIATES},
            present={k: np.concatenate([c.present[k] for c in cohorts]) for k in COVARIATES},
            time=np.concatenate([c.time for c in cohorts]),
            event=np.concatenate([c.event for c in cohorts]),
            ids=np.concatenate([c.ids for c in cohorts]),
            horizon=first.horizon,
            provenance=first.provenance,
        )

    def to_csv(self, path):
        write_csv(self, path)


def _parse_binary(cell, name, row):
    try:
        v = float(cell)
    except ValueError:
        raise RowError(row, f"{name}: cannot parse {cell!r}") from None
    if v not in (0.0, 1.0):
        raise RowError(row, f"{name}: expected 0/1, got {cell!r}")
    return v


def _parse_cell(name, cell, row):
    if name in BINARY_FIELDS:
        return _parse_binary(cell, name, row)
    if name == "nodal_stage":
        if cell.upper() not in NODAL_STAGES:
            raise RowError(row, f"nodal_stage: unknown level {cell!r}")
        return float(NODAL_STAGES.index(cell.upper()))
    if name == "laterality":
        if cell.lower() not in LATERALITIES:
            raise RowError(row, f"laterality: unknown level {cell!r}")
        return float(LATERALITIES.index(cell.lower()))
    try:
        v = float(cell)
    except ValueError:
        raise RowError(row, f"{name}: cannot parse {cell!r}") from None
    if not math.isfinite(v):
        raise RowError(row, f"{name}: nonfinite value {cell!r}")
    if name == "grade" and v not in (1.0, 2.0, 3.0):
        raise RowError(row, f"grade: expected 1-3, got {cell!r}")
    if name == "node_count" and (v < 0 or v != int(v)):
        raise RowError(row, f"node_count: expected nonnegative integer, got {cell!r}")
    if name in ("age", "size_mm") and v <= 0:
        raise RowError(row, f"{name}: must be positive, got {cell!r}")
    return v


def ingest_csv(path, horizon: float = 5.0, provenance: Optional[str] = None) -> Cohort:
    """Read a cohort CSV with the fixed column schema.

    Rows with time <= 0 are dropped and counted in ``Cohort.dropped``. Events
    recorded after the horizon are administratively censored at the horizon.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file: missing header") from None
        for i, expected in enumerate(CSV_COLUMNS):
            if i >= len(header) or header[i] != expected:
                got = header[i] if i < len(header) else "<none>"
                raise SchemaError(f"column {i} should be {expected!r}, found {got!r}")
        if len(header) > len(CSV_COLUMNS):
            raise SchemaError(f"unexpected extra column {header[len(CSV_COLUMNS)]!r}")

        cols = {name: [] for name in COVARIATES}
        masks = {name: [] for name in COVARIATES}
        times, events, ids = [], [], []
        dropped = censored = 0
        for row_index, row in enumerate(reader):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise RowError(row_index, f"expected {len(CSV_COLUMNS)} cells, found {len(row)}")
            cells = [c.strip() for c in row]
            t_cell, e_cell = cells[-2], cells[-1]
            if not t_cell or not e_cell:
                raise RowError(row_index, "time and event are required")
            try:
                t = float(t_cell)
            except ValueError:
                raise RowError(row_index, f"time: cannot parse {t_cell!r}") from None
            e = _parse_binary(e_cell, "event", row_index)
            if not math.isfinite(t):
                raise RowError(row_index, f"time: nonfinite value {t_cell!r}")
            if t <= 0:
                dropped += 1
                continue
            if not cells[0]:
                raise RowError(row_index, "age is required")
            if e == 1 and t > horizon:
                e, t = 0.0, float(horizon)
                censored += 1
            for name, cell in zip(COVARIATES, cells):
                if cell == "":
                    cols[name].append(0.0)
                    masks[name].append(False)
                else:
                    cols[name].append(_parse_cell(name, cell, row_index))
                    masks[name].append(True)
            times.append(t)
            events.append(int(e))
            ids.append(row_index)

    if dropped:
        log.info("dropped %d rows with time <= 0", dropped)
    if censored:
        log.info("censored %d events recorded after the %.3g-year horizon", censored, horizon)
    if not times:
        raise SizingError("no usable rows in file")
    cohort = Cohort(
        values={k: np.array(v) for k, v in cols.items()},
        present={k: np.array(v, dtype=bool) for k, v in masks.items()},
        time=np.array(times),
        event=np.array(events),
        ids=np.array(ids),
        horizon=horizon,
        provenance=provenance or path.name,
    )
    cohort.dropped = dropped
    return cohort


def _format(name, v):
    if name in LEVELS:
        return LEVELS[name][int(v)]
    if name in ("age", "size_mm"):
        return repr(float(v))
    return str(int(v))


def write_csv(cohort: Cohort, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i in range(len(cohort)):
            row = [
                _format(name, cohort.values[name][i]) if cohort.present[name][i] else ""
                for name in COVARIATES
            ]
            row += [repr(float(cohort.time[i])), str(int(cohort.event[i]))]
            w.writerow(row)


@dataclass
class SplitTriple:
    train_a: Cohort
    test_b: Cohort
    valid_c: Cohort
    seed: int
    index_a: np.ndarray = field(repr=False, default=None)
    index_b: np.ndarray = field(repr=False, default=None)
    index_c: np.ndarray = field(repr=False, default=None)


def split_sizes(n: int, proportions=(0.6, 0.2, 0.2)):
    n_a = int(math.floor(proportions[0] * n + 0.5))
    n_b = int(math.floor(proportions[1] * n + 0.5))
    return n_a, n_b, n - n_a - n_b


def split_cohort(c: Cohort, seed: int) -> SplitTriple:
    """Uniform random 60/20/20 partition driven only by ``seed``."""
    n = len(c)
    if n < 10:
        raise SizingError(f"need at least 10 records to split, got {n}")
    n_a, n_b, _ = split_sizes(n)
    perm = np.random.default_rng(seed).permutation(n)
    ia, ib, ic = np.sort(perm[:n_a]), np.sort(perm[n_a:n_a + n_b]), np.sort(perm[n_a + n_b:])
    return SplitTriple(c.subset(ia), c.subset(ib), c.subset(ic), seed, ia, ib, ic)
