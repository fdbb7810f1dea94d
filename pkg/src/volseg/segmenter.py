"""Recursive change-point segmentation with boundary optimization.

The series is split greedily: every current segment is scanned for its
most divergent admissible split, the strongest candidate at or above
the cutoff is accepted, and all boundaries are then re-optimized by
sweeping each one over the window bounded by its neighbors until no
boundary moves.  Recursion stops when no segment offers a split at the
cutoff.

Segments longer than ``long_segment_len`` can hide internal structure
behind their context; ``refine_long_segments`` re-segments them at a
progressively halved local cutoff and keeps any internal boundary
whose re-optimized divergence clears the original cutoff.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .divergence import (
    Boundary,
    DegenerateSplitError,
    PrefixSums,
    SegmentStats,
    delta_error,
)

log = logging.getLogger(__name__)

FLAG_AUTOMATIC = "automatic"
FLAG_REFINED = "refined"

TABLE_COLUMNS = (
    "m",
    "start",
    "end",
    "duration",
    "start_date",
    "mean",
    "mean_err",
    "stdev",
    "stdev_err",
    "delta",
    "delta_err",
    "flag",
)


@dataclass(frozen=True)
class SegmentationConfig:
    cutoff: float = 10.0
    min_segment_len: int = 14  # one trading day
    long_segment_len: int = 1000
    refine_floor: float = 2.0
    max_opt_iters: int = 100

    def __post_init__(self) -> None:
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.min_segment_len < 4:
            raise ValueError("min_segment_len must be at least 4")
        if self.refine_floor > self.cutoff:
            raise ValueError("refine_floor cannot exceed the cutoff")


@dataclass(frozen=True)
class Segment:
    """Half-open index range [start, end) with its fitted statistics."""

    start: int
    end: int
    stats: SegmentStats

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SegmentationResult:
    segments: tuple[Segment, ...]
    boundaries: tuple[Boundary, ...]  # absolute positions, one between neighbors
    flags: tuple[str, ...]  # automatic | refined, aligned with boundaries
    config: SegmentationConfig
    converged: bool = True

    def __post_init__(self) -> None:
        if len(self.boundaries) != len(self.segments) - 1:
            raise ValueError("need exactly one boundary between adjacent segments")
        if len(self.flags) != len(self.boundaries):
            raise ValueError("one provenance flag per boundary")
        prev_end = self.segments[0].start
        for seg in self.segments:
            if seg.start != prev_end:
                raise ValueError(f"segments must tile contiguously, gap at {seg.start}")
            prev_end = seg.end
        for seg, b in zip(self.segments[1:], self.boundaries):
            if b.position != seg.start:
                raise ValueError("boundary positions must match segment starts")

    @property
    def positions(self) -> list[int]:
        return [b.position for b in self.boundaries]

    @property
    def n(self) -> int:
        return self.segments[-1].end


# ---------------------------------------------------------------------------
# core sweeps


class _Scanner:
    """Memoized divergence scans over one PrefixSums instance.

    A scan is a pure function of (window, margin), so results survive
    across optimization sweeps and recursion rounds.
    """

    def __init__(self, ps: PrefixSums, margin: int) -> None:
        self.ps = ps
        self.margin = margin
        self._cache: dict[tuple[int, int], tuple[int, float] | None] = {}

    def scan(self, a: int, b: int) -> tuple[int, float] | None:
        key = (a, b)
        try:
            return self._cache[key]
        except KeyError:
            out = self.ps.scan(a, b, self.margin)
            self._cache[key] = out
            return out


def _sweep_once(sc: _Scanner, bounds: list[int], lo: int, hi: int) -> bool:
    """One left-to-right pass re-placing every boundary; True if any moved."""
    moved = False
    for k in range(len(bounds)):
        a = bounds[k - 1] if k > 0 else lo
        b = bounds[k + 1] if k + 1 < len(bounds) else hi
        found = sc.scan(a, b)
        if found is not None and found[0] != bounds[k]:
            bounds[k] = found[0]
            moved = True
    return moved


def _optimize(sc: _Scanner, bounds: list[int], lo: int, hi: int, max_iters: int) -> bool:
    """Sweep until a fixed point; returns False if max_iters ran out."""
    if not bounds:
        return True
    for _ in range(max_iters):
        if not _sweep_once(sc, bounds, lo, hi):
            return True
    return False


def _recurse(
    sc: _Scanner, lo: int, hi: int, cutoff: float, max_iters: int
) -> tuple[list[int], bool]:
    """Greedy recursive splitting of [lo, hi) at the given cutoff."""
    bounds: list[int] = []
    converged = True
    while True:
        best: tuple[float, int] | None = None
        for a, b in zip([lo] + bounds, bounds + [hi]):
            found = sc.scan(a, b)
            if found is None:
                continue
            t, delta = found
            if delta < cutoff:
                continue
            # strongest candidate first; equal strength -> leftmost
            if best is None or delta > best[0] or (delta == best[0] and t < best[1]):
                best = (delta, t)
        if best is None:
            return bounds, converged
        pos = best[1]
        idx = int(np.searchsorted(bounds, pos))
        bounds.insert(idx, pos)
        converged &= _optimize(sc, bounds, lo, hi, max_iters)


def _prune_weak(
    sc: _Scanner,
    bounds: list[int],
    flags: list[str],
    lo: int,
    hi: int,
    cutoff: float,
    max_iters: int,
    include_refined: bool = False,
) -> bool:
    """Drop boundaries whose final-window divergence fell below the cutoff
    (optimization can shrink a window after later splits).  Automatic
    boundaries must reach the cutoff; refined ones, when included, must
    exceed it.  Returns the accumulated optimization convergence flag."""
    converged = True
    while True:
        weakest: tuple[float, int] | None = None
        for k in range(len(bounds)):
            if flags[k] == FLAG_REFINED and not include_refined:
                continue
            a = bounds[k - 1] if k > 0 else lo
            b = bounds[k + 1] if k + 1 < len(bounds) else hi
            try:
                delta = sc.ps.delta_at(a, bounds[k], b)
            except DegenerateSplitError:
                delta = -np.inf
            weak = delta <= cutoff if flags[k] == FLAG_REFINED else delta < cutoff
            if weak and (weakest is None or delta < weakest[0]):
                weakest = (delta, k)
        if weakest is None:
            return converged
        k = weakest[1]
        log.debug("pruning sub-cutoff boundary at %d (delta=%.3f)", bounds[k], weakest[0])
        del bounds[k]
        del flags[k]
        converged &= _optimize(sc, bounds, lo, hi, max_iters)


def _build_result(
    ps: PrefixSums,
    bounds: list[int],
    flags: list[str],
    cfg: SegmentationConfig,
    converged: bool,
) -> SegmentationResult:
    n = ps.length
    edges = [0] + list(bounds) + [n]
    segments = tuple(Segment(a, b, ps.stats(a, b)) for a, b in zip(edges, edges[1:]))
    boundaries = []
    for k, pos in enumerate(bounds):
        a = edges[k]
        b = edges[k + 2]
        delta = ps.delta_at(a, pos, b)
        boundaries.append(
            Boundary(
                position=pos,
                divergence=delta,
                divergence_err=delta_error(pos - a, b - pos),
                left_len=pos - a,
                right_len=b - pos,
            )
        )
    return SegmentationResult(segments, tuple(boundaries), tuple(flags), cfg, converged)


# ---------------------------------------------------------------------------
# public operations


def recursive_segment(x, cfg: SegmentationConfig | None = None) -> SegmentationResult:
    """Segment a log-return series into stationary Gaussian stretches.

    Splits are only considered where both children keep at least
    ``min_segment_len`` points, and accepted while their divergence
    clears ``cutoff``.  A series with no acceptable split comes back as
    a single segment.
    """
    cfg = cfg or SegmentationConfig()
    arr = np.asarray(x, dtype=np.float64)
    if arr.size < 2 * cfg.min_segment_len:
        raise ValueError(
            f"series of {arr.size} points is shorter than two minimum segments"
        )
    ps = PrefixSums(arr)
    sc = _Scanner(ps, cfg.min_segment_len)
    bounds, converged = _recurse(sc, 0, arr.size, cfg.cutoff, cfg.max_opt_iters)
    flags = [FLAG_AUTOMATIC] * len(bounds)
    converged &= _prune_weak(sc, bounds, flags, 0, arr.size, cfg.cutoff, cfg.max_opt_iters)
    if not converged:
        log.warning("boundary optimization hit max_opt_iters without converging")
    return _build_result(ps, bounds, flags, cfg, converged)


def optimize_boundaries(
    x,
    positions: Sequence[int],
    min_segment_len: int = 2,
    max_iters: int = 100,
) -> tuple[list[int], bool]:
    """Iteratively re-place each boundary between its current neighbors.

    Returns the converged positions and whether a fixed point was
    reached within ``max_iters`` full sweeps.
    """
    arr = np.asarray(x, dtype=np.float64)
    bounds = sorted(int(p) for p in positions)
    if bounds and not (0 < bounds[0] and bounds[-1] < arr.size):
        raise ValueError("boundaries must be interior to the series")
    sc = _Scanner(PrefixSums(arr), max(2, min_segment_len))
    ok = _optimize(sc, bounds, 0, arr.size, max_iters)
    if not ok:
        log.warning("optimize_boundaries stopped at max_iters without a fixed point")
    return bounds, ok


def refine_long_segments(x, result: SegmentationResult, cfg: SegmentationConfig | None = None) -> SegmentationResult:
    """Split overly long segments at a progressively lowered cutoff.

    Each halving step re-segments the long window locally; internal
    boundaries whose post-optimization divergence clears the original
    cutoff are kept (flagged ``refined``) and the whole series is then
    re-optimized.  Segments that never yield such a boundary, even at
    ``refine_floor``, remain whole.
    """
    cfg = cfg or result.config
    arr = np.asarray(x, dtype=np.float64)
    ps = PrefixSums(arr)
    sc = _Scanner(ps, cfg.min_segment_len)
    bounds = list(result.positions)
    flags = list(result.flags)
    converged = result.converged
    attempted: set[tuple[int, int]] = set()

    while True:
        edges = [0] + bounds + [arr.size]
        target = None
        for a, b in zip(edges, edges[1:]):
            if b - a > cfg.long_segment_len and (a, b) not in attempted:
                target = (a, b)
                break
        if target is None:
            break
        a, b = target
        attempted.add((a, b))
        found = _refine_window(sc, a, b, cfg)
        if not found:
            continue
        for pos in found:
            idx = int(np.searchsorted(bounds, pos))
            bounds.insert(idx, pos)
            flags.insert(idx, FLAG_REFINED)
        converged &= _optimize(sc, bounds, 0, arr.size, cfg.max_opt_iters)
        # global optimization may shift positions; refined boundaries only
        # survive if they still clear the cutoff in their final windows
        converged &= _prune_weak(
            sc, bounds, flags, 0, arr.size, cfg.cutoff, cfg.max_opt_iters, include_refined=True
        )

    return _build_result(ps, bounds, flags, cfg, converged)


def _refine_window(sc: _Scanner, a: int, b: int, cfg: SegmentationConfig) -> list[int]:
    """Progressively halve the cutoff inside [a, b) until an internal
    boundary re-optimizes above the original cutoff; return those."""
    local_cutoff = cfg.cutoff
    while local_cutoff > cfg.refine_floor:
        local_cutoff = max(local_cutoff * 0.5, cfg.refine_floor)
        sub_bounds, _ = _recurse(sc, a, b, local_cutoff, cfg.max_opt_iters)
        keep = []
        for k, pos in enumerate(sub_bounds):
            wa = sub_bounds[k - 1] if k > 0 else a
            wb = sub_bounds[k + 1] if k + 1 < len(sub_bounds) else b
            found = sc.scan(wa, wb)
            if found is not None and found[0] == pos and found[1] > cfg.cutoff:
                keep.append(pos)
        if keep:
            log.info(
                "refined segment [%d, %d): %d boundary(ies) at local cutoff %.3g",
                a,
                b,
                len(keep),
                local_cutoff,
            )
            return keep
    return []


# ---------------------------------------------------------------------------
# segment table


def emit_segment_table(
    result: SegmentationResult,
    grid: Sequence[dt.datetime] | None = None,
) -> list[dict[str, object]]:
    """Rows in the published listing layout.

    ``grid`` holds the timestamps of the level series (length N+1 for N
    returns); segment m starting at return index s is dated by grid[s].
    Indices in the table are 1-based and inclusive.  The first row has
    no leading boundary, so its divergence columns are empty.
    """
    rows: list[dict[str, object]] = []
    for m, seg in enumerate(result.segments, start=1):
        if grid is not None:
            start_date = grid[seg.start].strftime("%d/%m/%Y")
        else:
            start_date = ""
        row: dict[str, object] = {
            "m": m,
            "start": seg.start + 1,
            "end": seg.end,
            "duration": seg.length,
            "start_date": start_date,
            "mean": seg.stats.mean,
            "mean_err": seg.stats.mean_err,
            "stdev": seg.stats.stdev,
            "stdev_err": seg.stats.stdev_err,
            "delta": "",
            "delta_err": "",
            "flag": "",
        }
        if m >= 2:
            boundary = result.boundaries[m - 2]
            row["delta"] = boundary.divergence
            row["delta_err"] = boundary.divergence_err
            row["flag"] = result.flags[m - 2]
        rows.append(row)
    return rows


def _cell(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_segment_csv(rows: list[dict[str, object]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in TABLE_COLUMNS])


def read_segment_csv(path: str | Path) -> list[dict[str, object]]:
    rows: list[dict[str, object]] = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row: dict[str, object] = {
                "m": int(rec["m"]),
                "start": int(rec["start"]),
                "end": int(rec["end"]),
                "duration": int(rec["duration"]),
                "start_date": rec["start_date"],
                "mean": float(rec["mean"]),
                "mean_err": float(rec["mean_err"]),
                "stdev": float(rec["stdev"]),
                "stdev_err": float(rec["stdev_err"]),
                "delta": float(rec["delta"]) if rec["delta"] else "",
                "delta_err": float(rec["delta_err"]) if rec["delta_err"] else "",
                "flag": rec["flag"],
            }
            rows.append(row)
    return rows


def write_segment_json(
    rows: list[dict[str, object]],
    path: str | Path,
    sector: str = "",
    config: SegmentationConfig | None = None,
) -> None:
    payload: dict[str, object] = {"sector": sector, "rows": rows}
    if config is not None:
        payload["config"] = {
            "cutoff": config.cutoff,
            "min_segment_len": config.min_segment_len,
            "long_segment_len": config.long_segment_len,
            "refine_floor": config.refine_floor,
            "max_opt_iters": config.max_opt_iters,
        }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
