"""Annual count series: CSV ingestion, validation and the log transform."""
from __future__ import annotations

import io
import math
import os
import warnings
from dataclasses import dataclass
from typing import BinaryIO, Iterable, TextIO, Union

import numpy as np

MIN_OBSERVATIONS = 4


class SeriesError(ValueError):
    """Invalid input data. ``line`` is the 1-based source line when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ZeroCountWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AnnualSeries:
    """Ordered ``(year, count)`` observations of a counting process."""

    years: tuple[int, ...]
    counts: tuple[float, ...]
    label: str = ""

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        counts = tuple(float(c) for c in self.counts)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "counts", counts)
        if len(years) != len(counts):
            raise SeriesError("years and counts differ in length")
        if len(years) < MIN_OBSERVATIONS:
            raise SeriesError(
                f"need at least {MIN_OBSERVATIONS} observations, got {len(years)}"
            )
        for prev, cur in zip(years, years[1:]):
            if cur == prev:
                raise SeriesError(f"duplicate year {cur}")
            if cur < prev:
                raise SeriesError(f"years not increasing at {prev} -> {cur}")
        for y, c in zip(years, counts):
            if not math.isfinite(c):
                raise SeriesError(f"non-finite count {c} for year {y}")
            if c < 0:
                raise SeriesError(f"negative count {c:g} for year {y}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], label: str = ""):
        pairs = sorted(pairs, key=lambda p: p[0])
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), label)

    def __len__(self):
        return len(self.years)

    @property
    def year_array(self) -> np.ndarray:
        return np.asarray(self.years, dtype=float)

    @property
    def count_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float)


@dataclass(frozen=True)
class LogSeries:
    """Natural-log counts; years whose count was zero are listed in ``dropped_years``."""

    years: tuple[int, ...]
    log_counts: tuple[float, ...]
    dropped_years: tuple[int, ...] = ()
    source_label: str = ""

    def __len__(self):
        return len(self.years)

    @property
    def year_array(self) -> np.ndarray:
        return np.asarray(self.years, dtype=float)

    @property
    def log_array(self) -> np.ndarray:
        return np.asarray(self.log_counts, dtype=float)

    def shifted(self, c: float) -> "LogSeries":
        return LogSeries(self.years, tuple(v + c for v in self.log_counts),
                         self.dropped_years, self.source_label)

    def to_tsv(self) -> str:
        lines = ["year\tlog_count"]
        lines += [f"{y}\t{v!r}" for y, v in zip(self.years, self.log_counts)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_arrays(cls, years, log_counts, label: str = ""):
        return cls(tuple(int(y) for y in years), tuple(float(v) for v in log_counts),
                   (), label)


Source = Union[bytes, str, os.PathLike, BinaryIO, TextIO]


def _read_text(source: Source) -> tuple[str, str]:
    if isinstance(source, bytes):
        raw, name = source, ""
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
        name = os.fspath(source)
    else:
        raw = source.read()
        name = getattr(source, "name", "")
        if isinstance(raw, str):
            return raw, name
    try:
        return raw.decode("utf-8-sig"), name
    except UnicodeDecodeError as exc:
        raise SeriesError(f"input is not valid UTF-8 ({exc})") from None


def load_csv(
    source: Source,
    delimiter: str = ",",
    header: bool | None = None,
    label: str | None = None,
) -> AnnualSeries:
    """Read a two-column ``year,count`` file.

    Blank lines and lines starting with ``#`` are skipped. ``header=None``
    auto-detects a header: the first data line is treated as one when its
    year field is not an integer. Rows are sorted by year.
    """
    text, name = _read_text(source)
    rows: list[tuple[int, float]] = []
    seen: dict[int, int] = {}
    first = True
    for lineno, raw_line in enumerate(io.StringIO(text), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(delimiter)]
        if first:
            first = False
            is_header = header if header is not None else not _is_int(fields[0])
            if is_header:
                continue
        if len(fields) != 2:
            raise SeriesError(f"expected 2 columns, got {len(fields)}: {line!r}", lineno)
        if not _is_int(fields[0]):
            raise SeriesError(f"year is not an integer: {fields[0]!r}", lineno)
        year = int(fields[0])
        try:
            count = float(fields[1])
        except ValueError:
            raise SeriesError(f"count is not a number: {fields[1]!r}", lineno) from None
        if not math.isfinite(count):
            raise SeriesError(f"count is not finite: {fields[1]!r}", lineno)
        if count < 0:
            raise SeriesError(f"negative count {count:g} for year {year}", lineno)
        if year in seen:
            raise SeriesError(f"duplicate year {year} (first seen on line {seen[year]})",
                              lineno)
        seen[year] = lineno
        rows.append((year, count))
    if label is None:
        label = os.path.basename(name) if name else ""
    return AnnualSeries.from_pairs(rows, label=label)


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def dump_csv(series: AnnualSeries, delimiter: str = ",") -> str:
    out = [f"year{delimiter}count"]
    out += [f"{y}{delimiter}{c:.17g}" for y, c in zip(series.years, series.counts)]
    return "\n".join(out) + "\n"


def log_transform(series: AnnualSeries, zero_policy: str = "drop") -> LogSeries:
    """Natural log of every count.

    ``zero_policy`` is ``"drop"`` (omit zero-count years, warn, and record them
    in ``dropped_years``) or ``"error"``.
    """
    if zero_policy not in ("drop", "error"):
        raise ValueError(f"unknown zero_policy {zero_policy!r}")
    years, logs, dropped = [], [], []
    for y, c in zip(series.years, series.counts):
        if c == 0:
            if zero_policy == "error":
                raise SeriesError(f"zero count in year {y}; cannot take log")
            dropped.append(y)
            continue
        years.append(y)
        logs.append(math.log(c))
    if dropped:
        warnings.warn(f"dropped {len(dropped)} zero-count year(s): {dropped}",
                      ZeroCountWarning, stacklevel=2)
    return LogSeries(tuple(years), tuple(logs), tuple(dropped), series.label)
