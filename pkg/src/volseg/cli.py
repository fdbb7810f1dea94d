"""Command-line pipeline: ingest | segment | cluster | analyze | pipeline.

Every run is a pure function of (inputs, flags, seed): outputs are
byte-identical across reruns, and the resolved configuration is written
next to the artifacts for provenance.  Exit codes: 0 ok, 1 usage,
2 data error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime as dt
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import analysis, cluster, ingest, segmenter
from .calendar import TradingCalendar, load_holidays
from .divergence import Boundary, SegmentStats

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse default exits 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class DataError(Exception):
    pass


def _write_resolved_config(args: argparse.Namespace, outdir: Path) -> None:
    resolved = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in ("func",)
    }
    resolved = {
        k: ([str(p) for p in v] if isinstance(v, list) else v) for k, v in resolved.items()
    }
    (outdir / "resolved_config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=1) + "\n"
    )


def _apply_config_file(
    parser: argparse.ArgumentParser,
    subparsers: dict[str, argparse.ArgumentParser],
    argv: list[str],
) -> argparse.Namespace:
    """Resolve precedence flags > config file > defaults.

    The config file only changes subcommand *defaults*; a second parse
    of the same argv lets explicitly given flags win naturally.
    """
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config file: {exc}") from exc
        sub = subparsers[args.command]
        valid = {action.dest for action in sub._actions}
        normalized = {}
        for key, value in overrides.items():
            dest = key.replace("-", "_")
            if dest not in valid:
                raise DataError(f"unknown config key {key!r}")
            normalized[dest] = value
        sub.set_defaults(**normalized)
        args = parser.parse_args(argv)
    return args


def _map_sectors(
    worker: Callable, items: list, workers: int
) -> list:
    """Run per-sector work, possibly in a bounded pool; order preserved."""
    if workers <= 1 or len(items) <= 1:
        return [worker(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, items))


# ---------------------------------------------------------------------------
# calendar plumbing


def _write_calendar(cal: TradingCalendar, path: Path) -> None:
    payload = {
        "days": [d.isoformat() for d in cal.days],
        "samples_per_day": cal.samples_per_day,
        "open_local": cal.open_local.isoformat(timespec="minutes"),
        "tz": cal.tz,
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _read_calendar(path: Path) -> TradingCalendar:
    payload = json.loads(path.read_text())
    return TradingCalendar(
        days=tuple(dt.date.fromisoformat(d) for d in payload["days"]),
        samples_per_day=payload["samples_per_day"],
        open_local=dt.time.fromisoformat(payload["open_local"]),
        tz=payload["tz"],
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args: argparse.Namespace) -> int:
    outdir = Path(args.out)
    series_dir = outdir / "series"
    series_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, dict] = {}

    parsed = []
    for path in args.inputs:
        path = Path(path)
        if not path.exists():
            raise DataError(f"input file not found: {path}")
        with open(path) as fh:
            records, rejects = ingest.parse_ticks(fh)
        if not records:
            raise DataError(f"{path}: no parseable tick records")
        parsed.append((path, records, rejects))

    holidays = load_holidays(args.holidays) if args.holidays else ()
    if args.start and args.end:
        start, end = dt.date.fromisoformat(args.start), dt.date.fromisoformat(args.end)
    else:
        stamps = [t.timestamp.date() for _, recs, _ in parsed for t in recs]
        start, end = min(stamps), max(stamps)
    cal = TradingCalendar.from_range(start, end, holidays, args.samples_per_day)

    grace = dt.timedelta(minutes=args.pre_open_grace_min)

    def work(item):
        path, records, rejects = item
        series = ingest.resample(records, cal, grace)
        ingest.series_to_csv(series, series_dir / f"{series.sector}.csv")
        ingest.series_to_json(series, series_dir / f"{series.sector}.json")
        ingest.write_reject_log(rejects, series_dir / f"{series.sector}.rejects.csv")
        return series.sector, {
            "source": str(path),
            "ticks": len(records),
            "rejects": len(rejects),
            "samples": series.n,
        }

    for sector, info in _map_sectors(work, parsed, args.workers):
        manifest[sector] = info
    _write_calendar(cal, outdir / "calendar.json")
    (outdir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    _write_resolved_config(args, outdir)
    for sector in sorted(manifest):
        m = manifest[sector]
        print(f"{sector}: {m['ticks']} ticks -> {m['samples']} samples, {m['rejects']} rejects")
    return EXIT_OK


def _load_series(path: Path) -> ingest.HalfHourSeries:
    if path.suffix == ".json":
        return ingest.series_from_json(path)
    return ingest.series_from_csv(path)


def _segment_config(args: argparse.Namespace) -> segmenter.SegmentationConfig:
    return segmenter.SegmentationConfig(
        cutoff=args.cutoff,
        min_segment_len=args.min_seg,
        long_segment_len=args.long_seg,
        refine_floor=args.refine_floor,
        max_opt_iters=args.max_opt_iters,
    )


def cmd_segment(args: argparse.Namespace) -> int:
    outdir = Path(args.out)
    seg_dir = outdir / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    cfg = _segment_config(args)

    paths = [Path(p) for p in args.inputs]
    for p in paths:
        if not p.exists():
            raise DataError(f"input file not found: {p}")

    def work(path: Path):
        series = _load_series(path)
        returns = ingest.log_returns(series)
        result = segmenter.recursive_segment(returns.x, cfg)
        if not args.no_refine:
            result = segmenter.refine_long_segments(returns.x, result, cfg)
        rows = segmenter.emit_segment_table(result, series.grid)
        segmenter.write_segment_csv(rows, seg_dir / f"{series.sector}.csv")
        segmenter.write_segment_json(rows, seg_dir / f"{series.sector}.json", series.sector, cfg)
        return series.sector, len(result.segments)

    for sector, n_segments in _map_sectors(work, paths, args.workers):
        print(f"{sector}: {n_segments} segments")
    _write_resolved_config(args, outdir)
    return EXIT_OK


def _stats_from_rows(rows: list[dict[str, object]]) -> list[SegmentStats]:
    stats = []
    for row in rows:
        n = int(row["duration"])
        stdev = float(row["stdev"])
        stats.append(
            SegmentStats(
                n=n,
                mean=float(row["mean"]),
                stdev=stdev,
                mean_err=float(row["mean_err"]),
                stdev_err=float(row["stdev_err"]),
                degenerate=stdev <= 0.0,
            )
        )
    return stats


def cmd_cluster(args: argparse.Namespace) -> int:
    outdir = Path(args.out)
    cl_dir = outdir / "clusters"
    cl_dir.mkdir(parents=True, exist_ok=True)

    paths = [Path(p) for p in args.inputs]
    for p in paths:
        if not p.exists():
            raise DataError(f"input file not found: {p}")

    def work(path: Path):
        payload = json.loads(path.read_text())
        sector = payload.get("sector") or path.stem
        rows = payload["rows"]
        stats = _stats_from_rows(rows)
        if len(stats) < 2:
            log.warning("%s: only %d segment(s); degenerate clustering", sector, len(stats))
            assignment = cluster.ClusterAssignment(
                labels=(0,) * len(stats), mean_vol=(stats[0].stdev,), k=1, policy=args.policy
            )
            assignment = cluster.assign_phases(assignment)
            cluster.write_assignment_csv(assignment, cl_dir / f"{sector}.assignment.csv")
            cluster.write_robustness_json([], cl_dir / f"{sector}.robustness.json", 1)
            return sector, 1
        tree = cluster.complete_link(stats)
        k_hi = min(args.k_max, tree.n_leaves)
        k_lo = min(args.k_min, k_hi)
        assignment, report = cluster.extract_clusters(
            tree, stats, range(k_lo, k_hi + 1), policy=args.policy
        )
        assignment = cluster.assign_phases(assignment)
        cluster.dendrogram_to_json(tree, cl_dir / f"{sector}.dendrogram.json", sector)
        cluster.write_merges_csv(tree, cl_dir / f"{sector}.merges.csv")
        cluster.write_assignment_csv(assignment, cl_dir / f"{sector}.assignment.csv")
        cluster.write_robustness_json(report, cl_dir / f"{sector}.robustness.json", assignment.k)
        return sector, assignment.k

    for sector, k in _map_sectors(work, paths, args.workers):
        print(f"{sector}: {k} clusters")
    _write_resolved_config(args, outdir)
    return EXIT_OK


def _timeline_inputs(
    seg_path: Path, asg_path: Path, grid: Sequence[dt.datetime]
) -> tuple[analysis.PhaseTimeline, list[Boundary]]:
    payload = json.loads(seg_path.read_text())
    sector = payload.get("sector") or seg_path.stem
    rows = payload["rows"]
    asg_rows = cluster.read_assignment_csv(asg_path)
    if len(asg_rows) != len(rows):
        raise DataError(f"{asg_path}: {len(asg_rows)} labels for {len(rows)} segments")
    segments = [
        segmenter.Segment(int(r["start"]) - 1, int(r["end"]), s)
        for r, s in zip(rows, _stats_from_rows(rows))
    ]
    k = max(int(r["cluster"]) for r in asg_rows) + 1
    colors = [""] * k
    phases = [""] * k
    for r in asg_rows:
        colors[int(r["cluster"])] = str(r["color"])
        phases[int(r["cluster"])] = str(r["phase"])
    assignment = cluster.ClusterAssignment(
        labels=tuple(int(r["cluster"]) for r in asg_rows),
        mean_vol=(0.0,) * k,
        k=k,
        policy="file",
        colors=tuple(colors),
        phases=tuple(phases),
        vol_labels=("",) * k,
    )
    timeline = analysis.build_timeline(segments, assignment, grid, sector)
    boundaries = []
    for prev, row in zip(rows, rows[1:]):
        if row["delta"] == "" or row["delta"] is None:
            continue
        boundaries.append(
            Boundary(
                position=int(row["start"]) - 1,
                divergence=float(row["delta"]),
                divergence_err=float(row["delta_err"]),
                left_len=int(prev["duration"]),
                right_len=int(row["duration"]),
            )
        )
    return timeline, boundaries


def cmd_analyze(args: argparse.Namespace) -> int:
    outdir = Path(args.out)
    an_dir = outdir / "analysis"
    an_dir.mkdir(parents=True, exist_ok=True)
    cal = _read_calendar(Path(args.calendar))
    grid = cal.grid

    seg_paths = sorted(Path(p) for p in args.segments)
    timelines: dict[str, analysis.PhaseTimeline] = {}
    boundaries: dict[str, list[Boundary]] = {}
    for seg_path in seg_paths:
        if not seg_path.exists():
            raise DataError(f"segment table not found: {seg_path}")
        sector = json.loads(seg_path.read_text()).get("sector") or seg_path.stem
        asg_path = Path(args.assignments_dir) / f"{sector}.assignment.csv"
        if not asg_path.exists():
            raise DataError(f"assignment not found: {asg_path}")
        tl, bs = _timeline_inputs(seg_path, asg_path, grid)
        timelines[sector] = tl
        boundaries[sector] = bs

    min_run = args.min_run_days * cal.samples_per_day
    recovery = {s: analysis.detect_recovery(t, min_run, args.predominance) for s, t in timelines.items()}
    onset = {s: analysis.detect_onset(t, min_run) for s, t in timelines.items()}
    analysis.write_recovery_csv(recovery, an_dir / "recovery.csv")
    analysis.write_onset_csv(onset, an_dir / "onset.csv")

    all_shocks: list[analysis.Shock] = []
    tables: list[analysis.RankTable] = []
    for klass in args.shock_classes.split(","):
        klass = klass.strip()
        per_sector = {
            s: analysis.extract_shocks(t, boundaries[s], klass, args.include_higher)
            for s, t in timelines.items()
        }
        for shocks in per_sector.values():
            all_shocks.extend(shocks)
        if any(per_sector.values()):
            groups = analysis.match_shocks(per_sector, args.match_window_days * cal.samples_per_day)
            tables.extend(analysis.rank_table(g) for g in groups)
    analysis.write_shock_csv(all_shocks, an_dir / "shocks.csv")
    analysis.write_rank_csv(tables, an_dir / "rank_tables.csv")

    if args.events:
        events = analysis.load_rate_events(args.events)
        responses = analysis.classify_event_responses(
            timelines, events, cal, args.event_window_days, args.anticipation_days
        )
        analysis.write_event_csv(responses, an_dir / "event_responses.csv")
        analysis.write_event_markers_csv(events, an_dir / "event_markers.csv")
    else:
        print("no rate-event file given; event-response analysis skipped")

    analysis.write_plotdata_csv(timelines, an_dir / "plotdata.csv")
    _write_resolved_config(args, outdir)
    for sector in sorted(timelines):
        r = recovery[sector]
        o = onset[sector]
        print(
            f"{sector}: recovery={r.isoformat() if r else '-'} "
            f"onset={o.date.isoformat() if o else '-'}"
        )
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    original = dict(vars(args))
    rc = cmd_ingest(args)
    if rc != EXIT_OK:
        return rc
    series_paths = sorted((outdir / "series").glob("*.json"))
    args.inputs = [str(p) for p in series_paths]
    rc = cmd_segment(args)
    if rc != EXIT_OK:
        return rc
    seg_paths = sorted((outdir / "segments").glob("*.json"))
    args.inputs = [str(p) for p in seg_paths]
    rc = cmd_cluster(args)
    if rc != EXIT_OK:
        return rc
    args.segments = [str(p) for p in seg_paths]
    args.assignments_dir = str(outdir / "clusters")
    args.calendar = str(outdir / "calendar.json")
    rc = cmd_analyze(args)
    # sub-steps overwrite the config echo; restore the original invocation
    _write_resolved_config(argparse.Namespace(**original), outdir)
    return rc


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int, default=0, help="seed recorded for provenance")
    p.add_argument("--workers", type=int, default=1, help="per-sector worker pool size")
    p.add_argument("--verbose", action="store_true")


def _add_ingest_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--start", help="calendar start date (ISO); default from data")
    p.add_argument("--end", help="calendar end date (ISO); default from data")
    p.add_argument("--holidays", help="holiday file: one ISO date per line")
    p.add_argument("--samples-per-day", type=int, default=14)
    p.add_argument("--pre-open-grace-min", type=int, default=30)


def _add_segment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cutoff", type=float, default=10.0)
    p.add_argument("--min-seg", type=int, default=14)
    p.add_argument("--long-seg", type=int, default=1000)
    p.add_argument("--refine-floor", type=float, default=2.0)
    p.add_argument("--max-opt-iters", type=int, default=100)
    p.add_argument("--no-refine", action="store_true", help="skip long-segment refinement")


def _add_cluster_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--policy", choices=["uniform-threshold", "per-branch"], default="uniform-threshold")


def _add_analyze_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--events", help="rate-event CSV (date,change,new_rate)")
    p.add_argument("--min-run-days", type=int, default=42, help="sustained-run length, trading days")
    p.add_argument("--predominance", type=float, default=0.5)
    p.add_argument("--shock-classes", default="very-high")
    p.add_argument("--include-higher", action="store_true")
    p.add_argument("--match-window-days", type=int, default=20)
    p.add_argument("--event-window-days", type=int, default=2)
    p.add_argument("--anticipation-days", type=int, default=5)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="volseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    registry: dict[str, argparse.ArgumentParser] = {}

    p = registry["ingest"] = sub.add_parser("ingest", help="tick files -> half-hourly series")
    p.add_argument("inputs", nargs="+", help="tick files in raw exchange format")
    _add_common(p)
    _add_ingest_args(p)
    p.set_defaults(func=cmd_ingest)

    p = registry["segment"] = sub.add_parser("segment", help="series -> segment tables")
    p.add_argument("inputs", nargs="+", help="series files (.csv or .json)")
    _add_common(p)
    _add_segment_args(p)
    p.set_defaults(func=cmd_segment)

    p = registry["cluster"] = sub.add_parser("cluster", help="segment tables -> volatility classes")
    p.add_argument("inputs", nargs="+", help="segment table .json files")
    _add_common(p)
    _add_cluster_args(p)
    p.set_defaults(func=cmd_cluster)

    p = registry["analyze"] = sub.add_parser("analyze", help="clustered segments -> analytics bundle")
    p.add_argument("--segments", nargs="+", required=True, help="segment table .json files")
    p.add_argument("--assignments-dir", required=True)
    p.add_argument("--calendar", required=True, help="calendar.json from ingest")
    _add_common(p)
    _add_analyze_args(p)
    p.set_defaults(func=cmd_analyze)

    p = registry["pipeline"] = sub.add_parser("pipeline", help="run ingest, segment, cluster, analyze")
    p.add_argument("inputs", nargs="+", help="tick files")
    _add_common(p)
    _add_ingest_args(p)
    _add_segment_args(p)
    _add_cluster_args(p)
    _add_analyze_args(p)
    p.set_defaults(func=cmd_pipeline)
    return parser, registry


def main(argv: Sequence[str] | None = None) -> int:
    parser, registry = build_parser()
    try:
        args = _apply_config_file(parser, registry, list(argv) if argv is not None else sys.argv[1:])
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code) if exc.code is not None else 0
    except DataError as exc:
        print(f"volseg: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataError as exc:
        print(f"volseg: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as exc:
        print(f"volseg: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
