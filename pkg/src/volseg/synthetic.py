"""Seeded generators for fixtures, calibration harnesses, and demos.

All randomness flows through one integer seed, so every artifact built
here is reproducible byte for byte.

Run ``python -m volseg.synthetic OUTDIR`` to create a small demo corpus
(tick files for a handful of sectors, a holiday file, a rate-event
file) suitable for exercising the command-line pipeline.
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np

from .calendar import TradingCalendar

DEMO_SECTORS = ("BM", "CY", "EN", "FN", "HC", "IN", "NC", "TC", "TL", "UT")


def regime_returns(
    pieces: list[tuple[int, float, float]], seed: int
) -> np.ndarray:
    """Concatenate Gaussian stretches given as (length, mean, stdev)."""
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(mu, sigma, n) for n, mu, sigma in pieces])


def levels_from_returns(x: np.ndarray, start_level: float = 100.0) -> np.ndarray:
    """Level path whose log returns reproduce ``x`` exactly."""
    levels = np.empty(len(x) + 1)
    levels[0] = start_level
    np.exp(np.log(start_level) + np.cumsum(x), out=levels[1:])
    return levels


def write_tick_file(
    path: str | Path,
    sector: str,
    cal: TradingCalendar,
    levels: np.ndarray,
    seed: int,
    ticks_per_half_hour: int = 3,
    with_noise_rows: bool = True,
) -> None:
    """Render a level path as a raw tick file on the calendar grid.

    One tick lands just before every grid time carrying the exact grid
    level, so resampling recovers ``levels``; extra in-between ticks,
    a pre-open correction row, and a post-close straggler exercise the
    ingestion filters.
    """
    grid = cal.grid
    if len(levels) != len(grid):
        raise ValueError(f"need one level per grid point ({len(grid)}), got {len(levels)}")
    rng = np.random.default_rng(seed)
    ric = f".DJUS{sector}"
    lines = ["#RIC,Date[G],Time[G],GMT Offset,Type,Price"]

    def emit(ts: dt.datetime, price: float) -> None:
        u = ts.astimezone(dt.timezone.utc)
        lines.append(
            f"{ric},{u.strftime('%m/%d/%Y')},{u.strftime('%H:%M:%S')}."
            f"{u.microsecond // 1000:03d},+0,Index,{price:.4f}"
        )

    idx = 0
    for d, day in enumerate(cal.days):
        day_open = cal.session_open(day)
        if with_noise_rows and d == 0:
            # exchange-correction row hours before the open: must be ignored
            emit(day_open - dt.timedelta(hours=2), float(levels[0]) * 1.5)
        for k in range(cal.samples_per_day):
            g = grid[idx]
            level = float(levels[idx])
            for j in range(ticks_per_half_hour - 1):
                frac = (j + 1) / (ticks_per_half_hour + 1)
                ts = g - dt.timedelta(seconds=1800 * (1 - frac))
                wobble = 1.0 + float(rng.normal(0, 2e-5))
                emit(ts, max(level * wobble, 1e-6))
            emit(g - dt.timedelta(milliseconds=int(rng.integers(200, 1500))), level)
            idx += 1
        if with_noise_rows:
            # post-close straggler, about 0.1% off: must be ignored
            emit(
                cal.session_close(day) + dt.timedelta(minutes=3),
                float(levels[idx - 1]) * 1.001,
            )
    Path(path).write_text("\n".join(lines) + "\n")


def demo_sector_pieces(
    sector_index: int, n_days: int, samples_per_day: int = 14
) -> list[tuple[int, float, float]]:
    """A quiet/shock/quiet/shock/quiet regime layout, staggered by sector."""
    n = n_days * samples_per_day - 1
    base = 9e-4 * (1.0 + 0.05 * sector_index)
    shock1 = int(n * 0.30) + sector_index * samples_per_day // 2
    shock2 = int(n * 0.65) + sector_index * samples_per_day // 2
    w1 = 6 * samples_per_day
    w2 = 4 * samples_per_day
    pieces = [
        (shock1, 1e-5, base),
        (w1, -2e-4, base * 5.0),
        (shock2 - shock1 - w1, 1e-5, base),
        (w2, -2e-4, base * 3.5),
        (n - shock2 - w2, 2e-5, base * 0.9),
    ]
    return [(max(p[0], samples_per_day), p[1], p[2]) for p in pieces]


def make_demo_corpus(
    outdir: str | Path,
    sectors: tuple[str, ...] = DEMO_SECTORS,
    n_days: int = 120,
    start: dt.date = dt.date(2006, 1, 2),
    seed: int = 7,
) -> dict[str, Path]:
    """Write tick files (under ticks/), a holiday file, and a rate-event file."""
    outdir = Path(outdir)
    tick_dir = outdir / "ticks"
    tick_dir.mkdir(parents=True, exist_ok=True)
    end = start + dt.timedelta(days=int(n_days * 7 / 5) + 14)
    holidays = (start + dt.timedelta(days=14),)
    while holidays[0].weekday() >= 5:
        holidays = (holidays[0] + dt.timedelta(days=1),)
    cal = TradingCalendar.from_range(start, end, holidays)
    days = cal.days[:n_days]
    cal = TradingCalendar(days, cal.samples_per_day, cal.open_local, cal.tz)

    paths: dict[str, Path] = {}
    for i, sector in enumerate(sectors):
        x = regime_returns(demo_sector_pieces(i, n_days), seed + i)
        levels = levels_from_returns(x, 100.0 + 10.0 * i)
        path = tick_dir / f"{sector}.csv"
        write_tick_file(path, sector, cal, levels, seed=seed * 1000 + i)
        paths[sector] = path

    holiday_path = outdir / "holidays.txt"
    holiday_path.write_text("\n".join(h.isoformat() for h in holidays) + "\n")
    paths["holidays"] = holiday_path

    mid = days[len(days) // 3]
    later = days[2 * len(days) // 3]
    events_path = outdir / "rate_events.csv"
    events_path.write_text(
        "date,change,new_rate\n"
        f"{mid.isoformat()},-0.5,4.5\n"
        f"{later.isoformat()},-0.25,4.25\n"
    )
    paths["events"] = events_path
    return paths


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Write a demo tick-data corpus")
    parser.add_argument("outdir")
    parser.add_argument("--sectors", type=int, default=4, help="number of sectors (max 10)")
    parser.add_argument("--days", type=int, default=120)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    paths = make_demo_corpus(
        args.outdir,
        sectors=DEMO_SECTORS[: args.sectors],
        n_days=args.days,
        seed=args.seed,
    )
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
