"""Exchange trading calendar and the half-hourly sampling grid.

The default grid mirrors the NYSE session: 14 samples per trading day,
at the 09:30 local open and every 30 minutes through the 16:00 close.
In GMT that is 14:30..21:00 in winter and 13:30..20:00 under daylight
saving; the shift is resolved per day through the IANA timezone
database, so one UTC offset applies to a whole session.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from zoneinfo import ZoneInfo

HALF_HOUR = dt.timedelta(minutes=30)
DEFAULT_SAMPLES_PER_DAY = 14
DEFAULT_OPEN = dt.time(9, 30)
DEFAULT_TZ = "America/New_York"


def _weekdays(start: dt.date, end: dt.date) -> list[dt.date]:
    days = []
    d = start
    one = dt.timedelta(days=1)
    while d <= end:
        if d.weekday() < 5:
            days.append(d)
        d += one
    return days


def load_holidays(path: str | Path) -> tuple[dt.date, ...]:
    """Read a holiday file: one ISO date per line, blank lines ignored."""
    holidays = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        holidays.append(dt.date.fromisoformat(line))
    return tuple(holidays)


@dataclass(frozen=True)
class TradingCalendar:
    """Ordered trading days plus the intraday sampling rule.

    ``days`` must be strictly increasing.  The wall-clock close is
    derived from the open and the sample count, so the invariant
    "open plus successive 30-minute increments up to and including the
    close" holds by construction.
    """

    days: tuple[dt.date, ...]
    samples_per_day: int = DEFAULT_SAMPLES_PER_DAY
    open_local: dt.time = DEFAULT_OPEN
    tz: str = DEFAULT_TZ

    def __post_init__(self) -> None:
        if not self.days:
            raise ValueError("calendar needs at least one trading day")
        if self.samples_per_day < 1:
            raise ValueError("samples_per_day must be positive")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise ValueError("trading days must be strictly increasing")

    @classmethod
    def from_range(
        cls,
        start: dt.date,
        end: dt.date,
        holidays: tuple[dt.date, ...] | list[dt.date] = (),
        samples_per_day: int = DEFAULT_SAMPLES_PER_DAY,
        open_local: dt.time = DEFAULT_OPEN,
        tz: str = DEFAULT_TZ,
    ) -> "TradingCalendar":
        """Weekday calendar over [start, end] minus the given holidays."""
        skip = set(holidays)
        days = tuple(d for d in _weekdays(start, end) if d not in skip)
        if not days:
            raise ValueError(f"no trading days between {start} and {end}")
        return cls(days, samples_per_day, open_local, tz)

    @property
    def close_local(self) -> dt.time:
        minutes = self.open_local.hour * 60 + self.open_local.minute
        minutes += 30 * (self.samples_per_day - 1)
        return dt.time(minutes // 60 % 24, minutes % 60)

    @cached_property
    def _zone(self) -> ZoneInfo:
        return ZoneInfo(self.tz)

    def utc_offset(self, day: dt.date) -> dt.timedelta:
        """UTC offset of the exchange locale for one session (DST-aware)."""
        local = dt.datetime.combine(day, self.open_local, tzinfo=self._zone)
        offset = local.utcoffset()
        assert offset is not None
        return offset

    def session_open(self, day: dt.date) -> dt.datetime:
        local = dt.datetime.combine(day, self.open_local, tzinfo=self._zone)
        return local.astimezone(dt.timezone.utc)

    def session_close(self, day: dt.date) -> dt.datetime:
        return self.session_open(day) + HALF_HOUR * (self.samples_per_day - 1)

    @cached_property
    def grid(self) -> tuple[dt.datetime, ...]:
        """All sampling timestamps (UTC), day by day."""
        out = []
        for day in self.days:
            t0 = self.session_open(day)
            out.extend(t0 + HALF_HOUR * k for k in range(self.samples_per_day))
        return tuple(out)

    def __len__(self) -> int:
        return len(self.days) * self.samples_per_day

    @cached_property
    def _day_index(self) -> dict[dt.date, int]:
        return {d: i for i, d in enumerate(self.days)}

    def day_of_index(self, i: int) -> dt.date:
        return self.days[i // self.samples_per_day]

    def first_index_of_day(self, day: dt.date) -> int:
        """Grid index of the session open on ``day``."""
        try:
            return self._day_index[day] * self.samples_per_day
        except KeyError:
            raise KeyError(f"{day} is not a trading day in this calendar") from None

    def shift_trading_days(self, day: dt.date, n: int) -> dt.date:
        """The trading day ``n`` sessions after ``day`` (clamped to range)."""
        i = self._nearest_day_index(day) + n
        return self.days[max(0, min(i, len(self.days) - 1))]

    def trading_days_between(self, a: dt.date, b: dt.date) -> int:
        """Signed count of sessions from ``a`` to ``b`` (positive if b later)."""
        return self._nearest_day_index(b) - self._nearest_day_index(a)

    def _nearest_day_index(self, day: dt.date) -> int:
        idx = self._day_index.get(day)
        if idx is not None:
            return idx
        # non-trading date: count sessions strictly before it
        lo, hi = 0, len(self.days)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.days[mid] < day:
                lo = mid + 1
            else:
                hi = mid
        return lo
