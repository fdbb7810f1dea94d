"""Comparative analytics over clustered segmentations of many sectors.

Everything here consumes a PhaseTimeline: the per-sector sequence of
color runs obtained by merging adjacent segments that share a cluster.
On top of it sit the working definitions used throughout:

    recovery  start of the first sustained low-volatility (growth) run
              after which growth predominates
    onset     end of the last sustained growth run
    shock     maximal run of a given high-volatility class, dated and
              weighted by the divergence of its leading boundary

Durations are measured in half-hours (14 per trading day); "two
months" defaults to 42 trading days = 588 half-hours.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .calendar import TradingCalendar
from .cluster import COLOR_LADDER, PHASE_BY_COLOR, ClusterAssignment
from .divergence import Boundary
from .segmenter import Segment

log = logging.getLogger(__name__)

TWO_MONTHS_HALF_HOURS = 42 * 14  # 42 trading days
DEFAULT_MATCH_WINDOW = 20 * 14  # +-20 trading days, in half-hours

SHOCK_CLASS_COLOR = {
    "high": "yellow",
    "very-high": "orange",
    "extremely-high": "red",
}


@dataclass(frozen=True)
class Run:
    """A maximal stretch of same-colored segments, [start, end) in returns."""

    start: int
    end: int
    start_ts: dt.datetime
    end_ts: dt.datetime
    color: str
    phase: str

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class PhaseTimeline:
    sector: str
    runs: tuple[Run, ...]

    def __post_init__(self) -> None:
        for a, b in zip(self.runs, self.runs[1:]):
            if b.start != a.end:
                raise ValueError("runs must tile the series span")
            if b.color == a.color:
                raise ValueError("adjacent runs must differ in color")

    @property
    def start(self) -> int:
        return self.runs[0].start

    @property
    def end(self) -> int:
        return self.runs[-1].end


@dataclass(frozen=True)
class Shock:
    sector: str
    klass: str
    start: int
    start_ts: dt.datetime
    duration: int  # half-hours
    delta: float | None  # leading-boundary divergence; None at series start
    delta_err: float | None


@dataclass(frozen=True)
class RateEvent:
    date: dt.date
    change: float  # signed percent
    new_rate: float  # percent


@dataclass(frozen=True)
class EventResponse:
    sector: str
    event: RateEvent
    classification: str  # effective | counter-effective | ineffective
    anticipatory: bool
    boundary_ts: dt.datetime | None
    from_color: str | None
    to_color: str | None


@dataclass(frozen=True)
class OnsetResult:
    date: dt.date
    censored: bool  # timeline ends inside the qualifying growth run


def build_timeline(
    segments: Sequence[Segment],
    assignment: ClusterAssignment,
    grid: Sequence[dt.datetime],
    sector: str = "",
) -> PhaseTimeline:
    """Merge adjacent same-cluster segments into color runs.

    ``grid`` holds the level-series timestamps; a run over return
    indices [s, e) spans grid[s] to grid[e].
    """
    if len(segments) != len(assignment.labels):
        raise ValueError("one cluster label per segment required")
    if not assignment.colors:
        raise ValueError("assignment has no colors; run assign_phases first")
    runs: list[Run] = []
    for seg, lab in zip(segments, assignment.labels):
        color = assignment.colors[lab]
        if runs and runs[-1].color == color:
            prev = runs[-1]
            runs[-1] = replace(prev, end=seg.end, end_ts=grid[seg.end])
        else:
            runs.append(
                Run(
                    start=seg.start,
                    end=seg.end,
                    start_ts=grid[seg.start],
                    end_ts=grid[seg.end],
                    color=color,
                    phase=PHASE_BY_COLOR[color],
                )
            )
    return PhaseTimeline(sector, tuple(runs))


def detect_recovery(
    timeline: PhaseTimeline,
    min_run: int = TWO_MONTHS_HALF_HOURS,
    predominance: float = 0.5,
) -> dt.date | None:
    """Date of the first sustained growth run after which growth dominates.

    A candidate run must last at least ``min_run`` half-hours and the
    growth share of the remaining timeline (run start to the end) must
    reach ``predominance``.
    """
    total_end = timeline.end
    for i, run in enumerate(timeline.runs):
        if run.phase != "growth" or run.duration < min_run:
            continue
        span = total_end - run.start
        growth = sum(
            r.duration for r in timeline.runs[i:] if r.phase == "growth"
        )
        if span > 0 and growth / span >= predominance:
            return run.start_ts.date()
    return None


def detect_onset(
    timeline: PhaseTimeline, min_run: int = TWO_MONTHS_HALF_HOURS
) -> OnsetResult | None:
    """End of the final sustained growth run; censored if the timeline
    ends inside it (the decline has not been observed)."""
    for i in range(len(timeline.runs) - 1, -1, -1):
        run = timeline.runs[i]
        if run.phase == "growth" and run.duration >= min_run:
            censored = i == len(timeline.runs) - 1
            if censored:
                log.warning(
                    "%s: timeline ends inside a growth run; onset censored",
                    timeline.sector,
                )
            return OnsetResult(run.end_ts.date(), censored)
    return None


def extract_shocks(
    timeline: PhaseTimeline,
    boundaries: Sequence[Boundary],
    klass: str,
    include_higher: bool = False,
) -> list[Shock]:
    """Maximal runs of a volatility class, dated and strength-tagged.

    ``include_higher`` widens membership to any class at or above the
    requested one on the color ladder.  The strength is the divergence
    of the boundary at the shock's left edge; a shock at the very start
    of the series has none.
    """
    if klass not in SHOCK_CLASS_COLOR:
        raise ValueError(f"unknown shock class {klass!r}")
    want = COLOR_LADDER.index(SHOCK_CLASS_COLOR[klass])
    by_position = {b.position: b for b in boundaries}

    def matches(run: Run) -> bool:
        level = COLOR_LADDER.index(run.color)
        return level >= want if include_higher else level == want

    shocks: list[Shock] = []
    i = 0
    runs = timeline.runs
    while i < len(runs):
        if not matches(runs[i]):
            i += 1
            continue
        j = i
        while j + 1 < len(runs) and matches(runs[j + 1]):
            j += 1
        start_run = runs[i]
        duration = runs[j].end - start_run.start
        boundary = by_position.get(start_run.start)
        if boundary is None and start_run.start != timeline.start:
            log.warning(
                "%s: no boundary found at shock start %d", timeline.sector, start_run.start
            )
        shocks.append(
            Shock(
                sector=timeline.sector,
                klass=klass,
                start=start_run.start,
                start_ts=start_run.start_ts,
                duration=duration,
                delta=boundary.divergence if boundary else None,
                delta_err=boundary.divergence_err if boundary else None,
            )
        )
        i = j + 1
    return shocks


@dataclass(frozen=True)
class MatchedGroup:
    """Shocks across sectors attributed to one underlying event."""

    reference: int  # median start index of the members
    shocks: tuple[Shock, ...]  # one per participating sector
    missing: tuple[str, ...]  # sectors with no shock in the window


def match_shocks(
    shocks_by_sector: Mapping[str, Sequence[Shock]],
    window: int = DEFAULT_MATCH_WINDOW,
) -> list[MatchedGroup]:
    """Group per-sector shocks whose starts fall within ``window``
    half-hours of a common reference (the median start of the group).

    Greedy and deterministic: the earliest unassigned shock seeds a
    group, each sector contributes its nearest unassigned shock to the
    provisional reference, and missing sectors are reported, not
    imputed.  Requires all sectors to share one sampling grid.
    """
    if len(shocks_by_sector) < 1:
        raise ValueError("need at least one sector")
    sectors = sorted(shocks_by_sector)
    unassigned: set[tuple[str, int]] = set()
    pool: dict[tuple[str, int], Shock] = {}
    for sec in sectors:
        for idx, s in enumerate(shocks_by_sector[sec]):
            pool[(sec, idx)] = s
            unassigned.add((sec, idx))

    def median(values: list[int]) -> int:
        vals = sorted(values)
        return vals[(len(vals) - 1) // 2]  # lower median: deterministic

    groups: list[MatchedGroup] = []
    while unassigned:
        seed_key = min(unassigned, key=lambda k: (pool[k].start, k[0], k[1]))
        seed = pool[seed_key]
        # provisional group: earliest unassigned per sector within a
        # forward window of the seed
        provisional: dict[str, tuple[str, int]] = {seed_key[0]: seed_key}
        for sec in sectors:
            if sec == seed_key[0]:
                continue
            cands = [
                k
                for k in unassigned
                if k[0] == sec and seed.start <= pool[k].start <= seed.start + window
            ]
            if cands:
                provisional[sec] = min(cands, key=lambda k: (pool[k].start, k[1]))
        ref = median([pool[k].start for k in provisional.values()])
        # final membership: per sector, nearest unassigned within +-window of ref
        members: dict[str, tuple[str, int]] = {seed_key[0]: seed_key}
        for sec in sectors:
            if sec == seed_key[0]:
                continue
            cands = [
                k for k in unassigned if k[0] == sec and abs(pool[k].start - ref) <= window
            ]
            if cands:
                members[sec] = min(cands, key=lambda k: (abs(pool[k].start - ref), pool[k].start, k[1]))
        chosen = [members[sec] for sec in sorted(members)]
        groups.append(
            MatchedGroup(
                reference=median([pool[k].start for k in chosen]),
                shocks=tuple(pool[k] for k in chosen),
                missing=tuple(sec for sec in sectors if sec not in members),
            )
        )
        unassigned -= set(chosen)
    groups.sort(key=lambda g: g.reference)
    return groups


# ---------------------------------------------------------------------------
# order statistics


def average_ranks(values: Sequence[float], descending: bool = False) -> list[float]:
    """1-based ranks with ties sharing their average rank."""
    n = len(values)
    order = sorted(range(n), key=lambda i: -values[i] if descending else values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman correlation with average-rank ties; None if degenerate."""
    if len(x) != len(y):
        raise ValueError("paired samples required")
    n = len(x)
    if n < 2:
        return None
    rx = average_ranks(x)
    ry = average_ranks(y)
    mx = sum(rx) / n
    my = sum(ry) / n
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx <= 0.0 or syy <= 0.0:
        return None
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    return sxy / math.sqrt(sxx * syy)


@dataclass(frozen=True)
class RankTable:
    rows: tuple[dict[str, object], ...]  # sector, start_rank, duration_rank, strength_rank
    rho_duration_vs_start: float | None
    rho_strength_vs_start: float | None


def rank_table(group: MatchedGroup) -> RankTable:
    """Rank the group's shocks (1 = earliest / longest / strongest) and
    correlate duration and strength against start.

    Correlations are reported only for groups of three or more; they
    are computed on the raw values, so rank 1 meaning "longest" still
    yields rho = -1 when earlier shocks run longer.
    """
    shocks = group.shocks
    starts = [float(s.start) for s in shocks]
    durations = [float(s.duration) for s in shocks]
    start_ranks = average_ranks(starts)
    duration_ranks = average_ranks(durations, descending=True)
    with_delta = [s for s in shocks if s.delta is not None]
    strength_ranks: dict[str, float] = {}
    if with_delta:
        ranks = average_ranks([s.delta for s in with_delta], descending=True)
        strength_ranks = {s.sector: r for s, r in zip(with_delta, ranks)}
    rows = tuple(
        {
            "sector": s.sector,
            "start_rank": start_ranks[i],
            "duration_rank": duration_ranks[i],
            "strength_rank": strength_ranks.get(s.sector),
        }
        for i, s in enumerate(shocks)
    )
    rho_d = rho_s = None
    if len(shocks) >= 3:
        rho_d = spearman_rho(durations, starts)
        if len(with_delta) >= 3:
            rho_s = spearman_rho(
                [s.delta for s in with_delta], [float(s.start) for s in with_delta]
            )
    return RankTable(rows, rho_d, rho_s)


# ---------------------------------------------------------------------------
# rate events


def load_rate_events(path: str | Path) -> list[RateEvent]:
    """Read events (date,change,new_rate) and check rate continuity."""
    events: list[RateEvent] = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            events.append(
                RateEvent(
                    date=dt.date.fromisoformat(rec["date"]),
                    change=float(rec["change"]),
                    new_rate=float(rec["new_rate"]),
                )
            )
    events.sort(key=lambda e: e.date)
    for prev, cur in zip(events, events[1:]):
        if abs(prev.new_rate + cur.change - cur.new_rate) > 1e-9:
            raise ValueError(
                f"inconsistent rate sequence at {cur.date}: "
                f"{prev.new_rate} + {cur.change} != {cur.new_rate}"
            )
    return events


def classify_event_responses(
    timelines: Mapping[str, PhaseTimeline] | Iterable[PhaseTimeline],
    events: Sequence[RateEvent],
    cal: TradingCalendar,
    window_days: int = 2,
    anticipation_days: int = 5,
) -> list[EventResponse]:
    """Classify each sector's volatility response to each rate event.

    A transition into a lower volatility class within ``window_days``
    trading days of the event is effective, into a higher class
    counter-effective, otherwise ineffective.  The nearest transition
    decides when several fall inside the window.  A transition in the
    anticipation band (more than ``window_days`` but at most
    ``anticipation_days`` before the event) sets the anticipatory flag.
    Events outside a timeline's span are skipped with a warning.
    """
    if isinstance(timelines, Mapping):
        tls = [timelines[k] for k in sorted(timelines)]
    else:
        tls = sorted(timelines, key=lambda t: t.sector)
    responses: list[EventResponse] = []
    for tl in tls:
        span_lo = tl.runs[0].start_ts.date()
        span_hi = tl.runs[-1].end_ts.date()
        transitions = [
            (a.end_ts, a.color, b.color) for a, b in zip(tl.runs, tl.runs[1:])
        ]
        for event in events:
            if not span_lo <= event.date <= span_hi:
                log.warning("%s: event %s outside timeline span, skipped", tl.sector, event.date)
                continue
            in_window: list[tuple[int, dt.datetime, str, str]] = []
            anticipatory = False
            for ts, c_from, c_to in transitions:
                offset = cal.trading_days_between(event.date, ts.date())
                if abs(offset) <= window_days:
                    in_window.append((offset, ts, c_from, c_to))
                elif -anticipation_days <= offset < -window_days:
                    anticipatory = True
            if in_window:
                offset, ts, c_from, c_to = min(
                    in_window, key=lambda t: (abs(t[0]), t[0], t[1])
                )
                direction = COLOR_LADDER.index(c_to) - COLOR_LADDER.index(c_from)
                classification = "effective" if direction < 0 else "counter-effective"
                responses.append(
                    EventResponse(
                        tl.sector, event, classification, anticipatory, ts, c_from, c_to
                    )
                )
            else:
                responses.append(
                    EventResponse(tl.sector, event, "ineffective", anticipatory, None, None, None)
                )
    return responses


# ---------------------------------------------------------------------------
# file formats


def write_recovery_csv(
    results: Mapping[str, dt.date | None], path: str | Path
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sector", "date", "censored"])
        for sector in sorted(results):
            date = results[sector]
            writer.writerow([sector, date.isoformat() if date else "", "false"])


def write_onset_csv(results: Mapping[str, OnsetResult | None], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sector", "date", "censored"])
        for sector in sorted(results):
            r = results[sector]
            if r is None:
                writer.writerow([sector, "", "false"])
            else:
                writer.writerow([sector, r.date.isoformat(), "true" if r.censored else "false"])


def write_shock_csv(shocks: Iterable[Shock], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sector", "class", "start", "duration", "delta", "delta_err"])
        for s in sorted(shocks, key=lambda s: (s.sector, s.start)):
            writer.writerow(
                [
                    s.sector,
                    s.klass,
                    s.start_ts.isoformat(),
                    s.duration,
                    repr(s.delta) if s.delta is not None else "",
                    repr(s.delta_err) if s.delta_err is not None else "",
                ]
            )


def write_rank_csv(tables: Sequence[RankTable], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "group",
                "sector",
                "start_rank",
                "duration_rank",
                "strength_rank",
                "rho_duration_vs_start",
                "rho_strength_vs_start",
            ]
        )
        for g, table in enumerate(tables):
            rho_d = repr(table.rho_duration_vs_start) if table.rho_duration_vs_start is not None else ""
            rho_s = repr(table.rho_strength_vs_start) if table.rho_strength_vs_start is not None else ""
            for row in table.rows:
                sr = row["strength_rank"]
                writer.writerow(
                    [
                        g,
                        row["sector"],
                        repr(row["start_rank"]),
                        repr(row["duration_rank"]),
                        repr(sr) if sr is not None else "",
                        rho_d,
                        rho_s,
                    ]
                )


def write_event_csv(responses: Iterable[EventResponse], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["sector", "event_date", "classification", "anticipatory", "boundary_ts", "from_color", "to_color"]
        )
        for r in responses:
            writer.writerow(
                [
                    r.sector,
                    r.event.date.isoformat(),
                    r.classification,
                    "true" if r.anticipatory else "false",
                    r.boundary_ts.isoformat() if r.boundary_ts else "",
                    r.from_color or "",
                    r.to_color or "",
                ]
            )


def write_plotdata_csv(
    timelines: Mapping[str, PhaseTimeline] | Iterable[PhaseTimeline], path: str | Path
) -> None:
    """Runs of every sector as (sector, start, end, color, phase) rows,
    sorted by sector then start; drives external plotting tools."""
    if isinstance(timelines, Mapping):
        tls = [timelines[k] for k in sorted(timelines)]
    else:
        tls = sorted(timelines, key=lambda t: t.sector)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sector", "start", "end", "color", "phase"])
        for tl in tls:
            for run in tl.runs:
                writer.writerow(
                    [tl.sector, run.start_ts.isoformat(), run.end_ts.isoformat(), run.color, run.phase]
                )


def read_plotdata_csv(
    path: str | Path, grid_index: Mapping[dt.datetime, int] | None = None
) -> dict[str, PhaseTimeline]:
    """Inverse of ``write_plotdata_csv``.

    Without a grid the index fields are synthesized from run order (the
    timestamps stay exact); with a ``grid_index`` mapping, runs carry
    their original return indices.
    """
    rows_by_sector: dict[str, list[dict[str, str]]] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows_by_sector.setdefault(rec["sector"], []).append(rec)
    out: dict[str, PhaseTimeline] = {}
    for sector, rows in rows_by_sector.items():
        runs = []
        cursor = 0
        for rec in rows:
            start_ts = dt.datetime.fromisoformat(rec["start"])
            end_ts = dt.datetime.fromisoformat(rec["end"])
            if grid_index is not None:
                start, end = grid_index[start_ts], grid_index[end_ts]
            else:
                start, end = cursor, cursor + 1
                cursor += 1
            runs.append(Run(start, end, start_ts, end_ts, rec["color"], rec["phase"]))
        out[sector] = PhaseTimeline(sector, tuple(runs))
    return out


def write_event_markers_csv(events: Sequence[RateEvent], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "change", "new_rate"])
        for e in events:
            writer.writerow([e.date.isoformat(), repr(e.change), repr(e.new_rate)])
