"""Tic-by-tic ingestion: parse, filter, resample to the half-hourly grid.

Raw files are comma-separated with a header row::

    #RIC,Date[G],Time[G],GMT Offset,Type,Price
    .DJUSBM,02/14/2000,14:25:50.259,+0,Index,149.92

Dates are MM/DD/YYYY, times HH:MM:SS.SSS, both already GMT.  Malformed
rows are collected in a reject log rather than aborting the run; real
tick files contain noise.

Resampling takes, for every grid time g, the price of the last tick
strictly before g on that trading day.  Ticks after the close are
ignored, as are exchange-correction records posted well before the
open (``pre_open_grace`` bounds how far before the open a tick may
still count).  A grid point with no qualifying tick carries the
previous grid value forward.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .calendar import TradingCalendar

log = logging.getLogger(__name__)

TICK_HEADER = "#RIC,Date[G],Time[G],GMT Offset,Type,Price"
DEFAULT_PRE_OPEN_GRACE = dt.timedelta(minutes=30)


@dataclass(frozen=True)
class TickRecord:
    """One raw transaction row."""

    ric: str
    timestamp: dt.datetime  # aware, UTC, millisecond precision
    gmt_offset: int
    kind: str
    price: float


@dataclass(frozen=True)
class RejectedRow:
    line: int
    reason: str
    raw: str


def sector_from_ric(ric: str) -> str:
    """``.DJUSBM`` -> ``BM``; unrecognized codes pass through unprefixed."""
    code = ric.lstrip(".")
    if code.startswith("DJUS") and len(code) > 4:
        return code[4:]
    return code


def parse_ticks(
    stream: Iterable[str] | TextIO,
) -> tuple[list[TickRecord], list[RejectedRow]]:
    """Parse a Table-2-format stream into records plus a reject log.

    Lines starting with ``#`` (the header) emit no record.  A malformed
    row is recorded with its 1-based line number and a reason, never
    silently dropped.
    """
    records: list[TickRecord] = []
    rejects: list[RejectedRow] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != 6:
            rejects.append(RejectedRow(lineno, f"expected 6 fields, got {len(fields)}", line))
            continue
        ric, date_s, time_s, offset_s, kind, price_s = (f.strip() for f in fields)
        try:
            ts = dt.datetime.strptime(f"{date_s} {time_s}", "%m/%d/%Y %H:%M:%S.%f")
            ts = ts.replace(tzinfo=dt.timezone.utc)
        except ValueError:
            rejects.append(RejectedRow(lineno, f"unparseable date/time {date_s!r} {time_s!r}", line))
            continue
        try:
            offset = int(offset_s)
        except ValueError:
            rejects.append(RejectedRow(lineno, f"unparseable GMT offset {offset_s!r}", line))
            continue
        try:
            price = float(price_s)
        except ValueError:
            rejects.append(RejectedRow(lineno, f"unparseable price {price_s!r}", line))
            continue
        if not math.isfinite(price) or price <= 0.0:
            rejects.append(RejectedRow(lineno, f"non-positive price {price_s!r}", line))
            continue
        records.append(TickRecord(ric, ts, offset, kind, price))
    return records, rejects


def write_reject_log(rejects: list[RejectedRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["line", "reason"])
        for r in rejects:
            writer.writerow([r.line, r.reason])


@dataclass(frozen=True)
class HalfHourSeries:
    """Calendar-aligned index levels X_t, one per grid timestamp."""

    sector: str
    grid: tuple[dt.datetime, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if len(self.grid) != len(self.values):
            raise ValueError("grid and values must have equal length")
        if len(self.values) and not np.all(self.values > 0.0):
            bad = int(np.argmin(self.values > 0.0))
            raise ValueError(f"non-positive level at {self.grid[bad].isoformat()}")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid timestamps must be strictly increasing")

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class LogReturnSeries:
    """Log-index movements x_t = ln X_{t+1} - ln X_t."""

    sector: str
    x: np.ndarray
    base_grid: tuple[dt.datetime, ...]  # left endpoint of each return

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        if len(self.base_grid) != len(self.x):
            raise ValueError("base_grid and x must have equal length")

    @property
    def n(self) -> int:
        return len(self.x)


def resample(
    ticks: list[TickRecord],
    cal: TradingCalendar,
    pre_open_grace: dt.timedelta = DEFAULT_PRE_OPEN_GRACE,
) -> HalfHourSeries:
    """Sample the last-tick-before price at every calendar grid time.

    Ticks earlier than ``open - pre_open_grace`` are treated as exchange
    corrections and ignored; ticks after the close are ignored.  Days
    with no qualifying tick are fully carried forward (with a warning);
    grid points before the first usable tick are backfilled from it.
    """
    if not ticks:
        raise ValueError("empty tick set")
    rics = {t.ric for t in ticks}
    if len(rics) > 1:
        raise ValueError(f"mixed instrument codes in one resample call: {sorted(rics)}")
    sector = sector_from_ric(ticks[0].ric)
    ordered = sorted(ticks, key=lambda t: t.timestamp)

    values: list[float | None] = []
    prev: float | None = None
    i = 0
    n_ticks = len(ordered)
    for day in cal.days:
        day_open = cal.session_open(day)
        day_close = cal.session_close(day)
        earliest = day_open - pre_open_grace
        # skip ticks before this session's window
        while i < n_ticks and ordered[i].timestamp < earliest:
            i += 1
        day_start = i
        grid_t = day_open
        last: float | None = None
        used_any = False
        for _ in range(cal.samples_per_day):
            while i < n_ticks and ordered[i].timestamp < grid_t and ordered[i].timestamp <= day_close:
                last = ordered[i].price
                used_any = True
                i += 1
            if last is not None:
                prev = last
            values.append(prev)
            grid_t += dt.timedelta(minutes=30)
        # drop the rest of the day's ticks (post-close stragglers)
        while i < n_ticks and ordered[i].timestamp <= day_close:
            i += 1
        if not used_any and i == day_start:
            log.warning("%s: no qualifying ticks on %s, carrying forward", sector, day)

    first_real = next((j for j, v in enumerate(values) if v is not None), None)
    if first_real is None:
        raise ValueError(f"{sector}: no tick falls inside any trading session")
    if first_real > 0:
        log.warning(
            "%s: first %d grid points precede the first usable tick, backfilled",
            sector,
            first_real,
        )
        fill = values[first_real]
        for j in range(first_real):
            values[j] = fill
    return HalfHourSeries(sector, cal.grid, np.array(values, dtype=np.float64))


def log_returns(series: HalfHourSeries) -> LogReturnSeries:
    """x_t = ln X_{t+1} - ln X_t; requires N >= 2 and positive levels."""
    if series.n < 2:
        raise ValueError("need at least two samples to form returns")
    # positivity is a HalfHourSeries invariant, but re-check defensively
    # so the error names the offending timestamp
    nonpos = np.flatnonzero(series.values <= 0.0)
    if nonpos.size:
        raise ValueError(f"non-positive level at {series.grid[int(nonpos[0])].isoformat()}")
    x = np.diff(np.log(series.values))
    return LogReturnSeries(series.sector, x, series.grid[:-1])


# ---------------------------------------------------------------------------
# file formats


def series_to_csv(series: HalfHourSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", "value"])
        for ts, v in zip(series.grid, series.values):
            writer.writerow([ts.isoformat(), repr(float(v))])


def series_from_csv(path: str | Path, sector: str | None = None) -> HalfHourSeries:
    grid: list[dt.datetime] = []
    values: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            grid.append(dt.datetime.fromisoformat(row["timestamp"]))
            values.append(float(row["value"]))
    name = sector if sector is not None else Path(path).stem
    return HalfHourSeries(name, tuple(grid), np.array(values))


def series_to_json(series: HalfHourSeries, path: str | Path) -> None:
    payload = {
        "sector": series.sector,
        "timestamps": [ts.isoformat() for ts in series.grid],
        "values": [repr(float(v)) for v in series.values],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def series_from_json(path: str | Path) -> HalfHourSeries:
    payload = json.loads(Path(path).read_text())
    grid = tuple(dt.datetime.fromisoformat(t) for t in payload["timestamps"])
    values = np.array([float(v) for v in payload["values"]])
    return HalfHourSeries(payload["sector"], grid, values)
