"""Long-format longitudinal data: loading, validation, standardization, time rescaling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

REQUIRED_COLUMNS = ("subject_id", "time", "value")


class DataFormatError(ValueError):
    """Raised when an input file is missing a required column."""


class DataParseError(ValueError):
    """Raised when a time or value entry cannot be parsed as a finite number."""


class DataValidationError(ValueError):
    """Raised for structurally invalid data (duplicates, empty subjects, non-finite entries)."""


class DegenerateDataError(ValueError):
    """Raised when the outcome or the time axis has no spread."""


@dataclass(frozen=True)
class Subject:
    subject_id: str
    times: np.ndarray
    values: np.ndarray

    @property
    def n_obs(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class Standardization:
    """Pooled location/scale used to standardize outcomes.

    ``applied`` is False for the identity transform (mean 0, sd 1) returned
    when nothing has been standardized.
    """

    mean: float = 0.0
    sd: float = 1.0
    applied: bool = False

    def __post_init__(self):
        if not self.sd > 0:
            raise DegenerateDataError("standardization sd must be positive")

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.sd

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.sd + self.mean

    def inverse_scale(self, z):
        """Back-transform a quantity that carries scale but no location (e.g. a deviation)."""
        return np.asarray(z, dtype=float) * self.sd


@dataclass(frozen=True)
class TimeScale:
    """Affine map from original time units onto [0, 1]."""

    t_min: float = 0.0
    t_max: float = 1.0

    def forward(self, t):
        return (np.asarray(t, dtype=float) - self.t_min) / (self.t_max - self.t_min)

    def inverse(self, u):
        return np.asarray(u, dtype=float) * (self.t_max - self.t_min) + self.t_min


@dataclass(frozen=True)
class LongitudinalDataset:
    """Observations grouped by subject, subjects in order of first appearance.

    Times within a subject are strictly increasing. ``standardization`` and
    ``time_scale`` record the transforms applied so far; both default to
    identity.
    """

    subjects: tuple[Subject, ...]
    standardization: Standardization = field(default_factory=Standardization)
    time_scale: TimeScale | None = None

    def __post_init__(self):
        if len(self.subjects) == 0:
            raise DataValidationError("dataset has no subjects")
        seen = set()
        for s in self.subjects:
            if s.subject_id in seen:
                raise DataValidationError(f"subject {s.subject_id!r} appears twice")
            seen.add(s.subject_id)
            if s.n_obs < 1:
                raise DataValidationError(f"subject {s.subject_id!r} has no observations")
            if len(s.values) != s.n_obs:
                raise DataValidationError(f"subject {s.subject_id!r}: times/values length mismatch")
            if not (np.all(np.isfinite(s.times)) and np.all(np.isfinite(s.values))):
                raise DataValidationError(f"subject {s.subject_id!r} has non-finite entries")
            if np.any(np.diff(s.times) <= 0):
                raise DataValidationError(f"subject {s.subject_id!r}: times not strictly increasing")

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_total(self) -> int:
        return sum(s.n_obs for s in self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    @property
    def n_obs(self) -> np.ndarray:
        return np.array([s.n_obs for s in self.subjects], dtype=int)

    @property
    def time_range(self) -> tuple[float, float]:
        t = self.all_times()
        return float(t.min()), float(t.max())

    def all_times(self) -> np.ndarray:
        return np.concatenate([s.times for s in self.subjects])

    def all_values(self) -> np.ndarray:
        return np.concatenate([s.values for s in self.subjects])

    def subject_index(self) -> np.ndarray:
        """Subject position (0..N-1) of every pooled observation."""
        return np.repeat(np.arange(self.n_subjects), self.n_obs)

    def subject(self, subject_id: str) -> Subject:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(f"unknown subject {subject_id!r}")

    def drop(self, subject_id: str) -> "LongitudinalDataset":
        kept = tuple(s for s in self.subjects if s.subject_id != subject_id)
        if len(kept) == len(self.subjects):
            raise KeyError(f"unknown subject {subject_id!r}")
        return replace(self, subjects=kept)

    def triples(self) -> list[tuple[str, float, float]]:
        return [(s.subject_id, float(t), float(v))
                for s in self.subjects for t, v in zip(s.times, s.values)]


def from_records(records: Iterable[tuple[str, float, float]]) -> LongitudinalDataset:
    """Group (subject_id, time, value) triples; sorts by time within subject."""
    grouped: dict[str, list[tuple[float, float]]] = {}
    for sid, t, v in records:
        grouped.setdefault(str(sid), []).append((float(t), float(v)))
    subjects = []
    for sid, rows in grouped.items():
        rows.sort(key=lambda r: r[0])
        times = np.array([r[0] for r in rows])
        if np.any(np.diff(times) == 0):
            dup = times[1:][np.diff(times) == 0][0]
            raise DataValidationError(f"duplicate time {dup!r} for subject {sid!r}")
        subjects.append(Subject(sid, times, np.array([r[1] for r in rows])))
    if not subjects:
        raise DataValidationError("no observations")
    return LongitudinalDataset(tuple(subjects))


def from_arrays(subject_ids: Sequence, times: Sequence[float], values: Sequence[float]) -> LongitudinalDataset:
    return from_records(zip(subject_ids, times, values))


def _parse_float(text: str, column: str, row: int) -> float:
    try:
        x = float(text)
    except (TypeError, ValueError):
        raise DataParseError(f"row {row}: cannot parse {column} value {text!r}") from None
    if not math.isfinite(x):
        raise DataParseError(f"row {row}: non-finite {column} value {text!r}")
    return x


def load_csv(path) -> LongitudinalDataset:
    """Read a ``subject_id,time,value`` CSV (header required).

    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise DataFormatError(f"{path}: missing column {col!r}")
        idx = [header.index(c) for c in REQUIRED_COLUMNS]
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DataParseError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            sid = row[idx[0]].strip()
            t = _parse_float(row[idx[1]].strip(), "time", row_no)
            v = _parse_float(row[idx[2]].strip(), "value", row_no)
            records.append((sid, t, v))
    return from_records(records)


def write_csv(data: LongitudinalDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for sid, t, v in data.triples():
            w.writerow([sid, repr(t), repr(v)])


def _map_values(data: LongitudinalDataset, fn) -> tuple[Subject, ...]:
    return tuple(Subject(s.subject_id, s.times, fn(s.values)) for s in data.subjects)


def standardize(data: LongitudinalDataset) -> tuple[LongitudinalDataset, Standardization]:
    """Center and scale outcomes by the pooled mean and sample SD (ddof=1)."""
    y = data.all_values()
    if y.size < 2:
        raise DegenerateDataError("need at least two observations to standardize")
    mean = float(y.mean())
    sd = float(y.std(ddof=1))
    if not sd > 0 or sd < 1e-12 * max(1.0, abs(mean)):
        raise DegenerateDataError("outcome is constant; cannot standardize")
    st = Standardization(mean=mean, sd=sd, applied=True)
    out = replace(data, subjects=_map_values(data, st.forward), standardization=st)
    return out, st


def unstandardize(data: LongitudinalDataset) -> LongitudinalDataset:
    st = data.standardization
    return replace(data, subjects=_map_values(data, st.inverse), standardization=Standardization())


def rescale_time(data: LongitudinalDataset, time_range: tuple[float, float] | None = None) -> LongitudinalDataset:
    """Map times affinely onto [0, 1].

    By default the observed (t_min, t_max) is used. An explicit ``time_range``
    fixes the map instead (e.g. a known design domain); observed times must lie
    inside it.
    """
    if time_range is None:
        t_min, t_max = data.time_range
    else:
        t_min, t_max = map(float, time_range)
        lo, hi = data.time_range
        if lo < t_min or hi > t_max:
            raise DataValidationError(f"observed times [{lo}, {hi}] exceed range [{t_min}, {t_max}]")
    if not t_max > t_min:
        raise DegenerateDataError("all observations share a single time value")
    ts = TimeScale(t_min, t_max)
    subjects = tuple(Subject(s.subject_id, np.clip(ts.forward(s.times), 0.0, 1.0), s.values)
                     for s in data.subjects)
    return replace(data, subjects=subjects, time_scale=ts)
