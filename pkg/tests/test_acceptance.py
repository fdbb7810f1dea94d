"""Acceptance suite: one test per release criterion, with a printed
verdict line each.  Run with ``pytest tests/test_acceptance.py -v -s``.

Criterion 4's localization clause is known not to hold at its stated
rate: the split-point estimator's error distribution has heavier tails
than the criterion assumes (see tests and notes therein).  The test
asserts the stated rate anyway and fails honestly rather than loosen
the tolerance.
"""

import datetime as dt
import shutil
import time

import numpy as np
import pytest

from conftest import scaled_window, weekday_calendar
from volseg import cli
from volseg.analysis import detect_onset, detect_recovery, rank_table, MatchedGroup, Shock
from volseg.cluster import assign_phases, complete_link, segment_distance, ClusterAssignment, Merge
from volseg.divergence import (
    best_split,
    delta_error,
    delta_error_max,
    js_divergence,
    mu_err,
    segment_stats,
    sigma_err,
)
from volseg.segmenter import recursive_segment
from volseg.synthetic import make_demo_corpus

UTC = dt.timezone.utc
HH = 14


def verdict(n: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {n:02d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


class TestAcceptance:
    def test_criterion_01_error_formula_goldens(self):
        t0 = time.perf_counter()
        checks = [
            abs(delta_error_max(1000) - 9.26) <= 0.01,
            abs(delta_error_max(31560) - 52.0) <= 0.1,
            2.6 <= delta_error(446, 16) <= 2.7,
            abs(sigma_err(16, 0.006626) - 0.001210) <= 1e-6,
            abs(mu_err(16, 0.006626) - 0.001657) <= 2e-6,
        ]
        elapsed = time.perf_counter() - t0
        verdict(
            1,
            all(checks) and elapsed < 1.0,
            f"goldens {checks}, {elapsed:.3f}s < 1s",
        )

    def test_criterion_02_divergence_oracle_equivalence(self):
        def oracle(x: np.ndarray, t: int) -> float:
            def loglik(w):
                mu = w.mean()
                var = np.mean((w - mu) ** 2)
                return float(np.sum(-0.5 * np.log(2 * np.pi * var) - (w - mu) ** 2 / (2 * var)))

            return loglik(x[:t]) + loglik(x[t:]) - loglik(x) + 0.5

        t0 = time.perf_counter()
        rng = np.random.default_rng(202)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(8, 257))
            x = rng.normal(rng.normal() * 1e-4, 10 ** rng.uniform(-5, -2), n)
            deltas = np.array([js_divergence(x, t) for t in range(2, n - 1)])
            oracles = np.array([oracle(x, t) for t in range(2, n - 1)])
            worst = max(worst, float(np.max(np.abs(deltas - oracles))))
        elapsed = time.perf_counter() - t0
        verdict(
            2,
            worst <= 1e-9 and elapsed < 30.0,
            f"worst |closed-form - likelihood oracle| = {worst:.2e} <= 1e-9, {elapsed:.1f}s < 30s",
        )

    def test_criterion_03_null_calibration(self):
        t0 = time.perf_counter()
        below = 0
        trials = 1000
        for seed in range(trials):
            x = np.random.default_rng(seed).normal(0.0, 1.0, 821)
            if best_split(x).divergence <= 10.0:
                below += 1
        elapsed = time.perf_counter() - t0
        rate = below / trials
        verdict(
            3,
            rate >= 0.95 and elapsed < 60.0,
            f"noise-only series stay below the cutoff in {rate:.1%} >= 95%, {elapsed:.1f}s < 60s",
        )

    def test_criterion_04_regime_recovery(self):
        t0 = time.perf_counter()
        trials = 200
        two_ok = 0
        for seed in range(trials):
            rng = np.random.default_rng(1000 + seed)
            x = np.concatenate([rng.normal(0, 1e-3, 500), rng.normal(0, 2e-3, 500)])
            b = best_split(x)
            if abs(b.position - 500) <= 10 and b.divergence > 10.0:
                two_ok += 1
        three_ok = 0
        for seed in range(trials):
            rng = np.random.default_rng(5000 + seed)
            x = np.concatenate(
                [rng.normal(0, 1e-3, 400), rng.normal(0, 4e-3, 200), rng.normal(0, 1e-3, 400)]
            )
            three_ok += len(recursive_segment(x).segments) == 3
        elapsed = time.perf_counter() - t0
        verdict(
            4,
            two_ok / trials >= 0.99 and three_ok / trials >= 0.95 and elapsed < 60.0,
            f"two-regime boundary within +-10 with significant divergence in "
            f"{two_ok / trials:.1%} (required >= 99%; the argmax estimator's "
            f"localization tails cap this near 93% at volatility ratio 2); "
            f"three-regime exact in {three_ok / trials:.1%} >= 95%; {elapsed:.1f}s < 60s",
        )

    def test_criterion_05_boundary_optimization_fixed_point(self):
        from volseg.divergence import PrefixSums
        from volseg.segmenter import optimize_boundaries, refine_long_segments

        rng = np.random.default_rng(12)
        x = np.concatenate(
            [
                rng.normal(0, 2e-2, 300),
                rng.normal(0, 1e-3, 1100),
                rng.normal(0, 3e-3, 24),
                rng.normal(0, 1e-3, 1076),
                rng.normal(0, 2e-2, 300),
            ]
        )
        result = refine_long_segments(x, recursive_segment(x))
        positions = [b.position for b in result.boundaries]
        ps = PrefixSums(x)
        margin = result.config.min_segment_len
        ok = True
        for k, pos in enumerate(positions):
            a = positions[k - 1] if k > 0 else 0
            b = positions[k + 1] if k + 1 < len(positions) else len(x)
            exhaustive = max(range(a + margin, b - margin + 1), key=lambda t: _safe_delta(ps, a, t, b))
            ok &= pos == exhaustive
        # sweep-order permutation: reversed sweeps reach the same fixed point
        forward, _ = optimize_boundaries(x, positions, margin)
        reverse = list(positions)
        for _ in range(100):
            moved = False
            for k in reversed(range(len(reverse))):
                a = reverse[k - 1] if k > 0 else 0
                b = reverse[k + 1] if k + 1 < len(reverse) else len(x)
                found = ps.scan(a, b, margin)
                if found and found[0] != reverse[k]:
                    reverse[k] = found[0]
                    moved = True
            if not moved:
                break
        verdict(
            5,
            ok and forward == positions and reverse == positions,
            f"all {len(positions)} boundaries are within-window argmaxes; "
            "forward and reversed sweeps agree",
        )

    def test_criterion_06_clustering_oracle(self):
        rng = np.random.default_rng(606)
        structure_ok = True
        for _ in range(100):
            m = int(rng.integers(2, 9))
            stats = [
                segment_stats(
                    scaled_window(rng, int(rng.integers(8, 120)), rng.normal() * 1e-4, 10 ** rng.uniform(-3.5, -2))
                )
                for _ in range(m)
            ]
            tree = complete_link(stats)
            structure_ok &= list(tree.merges) == _brute_force(stats)
        worst = 0.0
        for _ in range(100):
            na, nb = int(rng.integers(4, 80)), int(rng.integers(4, 80))
            wa = rng.normal(rng.normal() * 1e-3, 10 ** rng.uniform(-4, -2), na)
            wb = rng.normal(rng.normal() * 1e-3, 10 ** rng.uniform(-4, -2), nb)
            d = segment_distance(segment_stats(wa), segment_stats(wb))
            worst = max(worst, abs(d - js_divergence(np.concatenate([wa, wb]), na)))
        verdict(
            6,
            structure_ok and worst <= 1e-9,
            f"agglomeration equals brute force on 100 seeded sets; "
            f"sufficient-statistic distance off by at most {worst:.2e} <= 1e-9",
        )

    def test_criterion_07_phase_ladder(self):
        vols = (0.0005, 0.0015, 0.0023, 0.0031, 0.0053, 0.0121)
        assignment = ClusterAssignment(
            labels=tuple(range(6)), mean_vol=vols, k=6, policy="uniform-threshold"
        )
        out = assign_phases(assignment)
        ok = out.colors == ("black", "blue", "green", "yellow", "orange", "red") and out.phases == (
            "growth",
            "growth",
            "correction",
            "crisis",
            "crisis",
            "crash",
        )
        verdict(7, ok, f"volatility ladder maps to {out.colors} / {out.phases}")

    def test_criterion_08_analysis_definitions(self):
        from test_analysis import runs_by_dates  # reuse the dated-fixture builder

        cal_r = weekday_calendar(dt.date(2002, 6, 3), 540)
        ut = runs_by_dates(
            cal_r,
            [
                ("yellow", dt.date(2002, 6, 3)),
                ("blue", dt.date(2002, 12, 2)),
                ("orange", dt.date(2003, 1, 6)),
                ("blue", dt.date(2003, 8, 6)),
                ("green", dt.date(2004, 1, 5)),
                ("blue", dt.date(2004, 2, 2)),
            ],
            "UT",
        )
        recovery_ok = detect_recovery(ut) == dt.date(2003, 8, 6)

        def onset_of(start: dt.date, onset_date: dt.date, sector: str) -> bool:
            cal = weekday_calendar(start, 400)
            tl = runs_by_dates(
                cal,
                [
                    ("blue", start),
                    ("yellow", onset_date),
                    ("orange", cal.days[330]),
                    ("yellow", cal.days[360]),
                ],
                sector,
            )
            return detect_onset(tl).date == onset_date

        onset_ok = (
            onset_of(dt.date(2006, 6, 1), dt.date(2007, 6, 20), "FN")
            and onset_of(dt.date(2006, 7, 3), dt.date(2007, 7, 23), "BM")
            and onset_of(dt.date(2006, 5, 1), dt.date(2007, 5, 23), "NC")
            and onset_of(dt.date(2006, 5, 1), dt.date(2007, 5, 23), "UT")
        )
        shocks = tuple(
            Shock(s, "very-high", start, dt.datetime(2002, 7, 1, tzinfo=UTC), dur, 100.0 - start / 10, 1.0)
            for s, start, dur in [("A", 0, 400), ("B", 100, 300), ("C", 200, 200), ("D", 300, 100)]
        )
        rho = rank_table(MatchedGroup(100, shocks, ())).rho_duration_vs_start
        verdict(
            8,
            recovery_ok and onset_ok and rho == -1.0,
            f"recovery 2003-08-06 {recovery_ok}, onsets 2007-06-20/07-23/05-23 {onset_ok}, "
            f"monotone rank rho = {rho}",
        )

    def test_criterion_09_performance(self, tmp_path):
        rng = np.random.default_rng(99)
        sigmas = [1e-3, 2.5e-3, 8e-4, 5e-3, 1.5e-3, 1e-2, 7e-4, 3e-3, 1.2e-3, 6e-3]
        lens = [2000, 900, 2600, 400, 3000, 250, 3500, 700, 2210, 500]
        parts, total, i = [], 0, 0
        while total < 31560:
            k = i % 10
            n = min(lens[k], 31560 - total)
            parts.append(rng.normal(0, sigmas[k], n))
            total += n
            i += 1
        x = np.concatenate(parts)
        t0 = time.perf_counter()
        result = recursive_segment(x)
        seg_time = time.perf_counter() - t0

        corpus_dir = tmp_path / "ticks"
        paths = make_demo_corpus(corpus_dir, n_days=120, seed=7)
        ticks = [str(paths[s]) for s in sorted(paths) if len(s) == 2]
        t0 = time.perf_counter()
        rc = cli.main(
            [
                "pipeline",
                *ticks,
                "--out",
                str(tmp_path / "run"),
                "--holidays",
                str(paths["holidays"]),
                "--events",
                str(paths["events"]),
            ]
        )
        pipe_time = time.perf_counter() - t0
        verdict(
            9,
            seg_time < 5.0 and rc == 0 and pipe_time < 60.0,
            f"31560-point segmentation ({len(result.segments)} segments) in {seg_time:.2f}s < 5s; "
            f"10-sector pipeline in {pipe_time:.1f}s < 60s",
        )

    def test_criterion_10_determinism(self, tmp_path):
        corpus_dir = tmp_path / "ticks"
        paths = make_demo_corpus(corpus_dir, sectors=("BM", "CY"), n_days=60, seed=3)
        argv = [
            "pipeline",
            str(paths["BM"]),
            str(paths["CY"]),
            "--out",
            str(tmp_path / "run"),
            "--holidays",
            str(paths["holidays"]),
            "--events",
            str(paths["events"]),
            "--seed",
            "11",
        ]
        assert cli.main(argv) == 0
        out = tmp_path / "run"
        first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
        shutil.rmtree(out)
        assert cli.main(argv) == 0
        second = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()}
        identical = first == second
        verdict(
            10,
            identical,
            f"{len(first)} artifacts byte-identical across reruns: {identical}",
        )


def _safe_delta(ps, a, t, b):
    from volseg.divergence import DegenerateSplitError

    try:
        return ps.delta_at(a, t, b)
    except DegenerateSplitError:
        return -np.inf


def _brute_force(stats):
    n = len(stats)
    clusters = {i: (i,) for i in range(n)}
    merges = []
    next_id = n
    while len(clusters) > 1:
        best = None
        for a in sorted(clusters):
            for b in sorted(clusters):
                if b <= a:
                    continue
                d = max(
                    segment_distance(stats[min(i, j)], stats[max(i, j)])
                    for i in clusters[a]
                    for j in clusters[b]
                )
                if best is None or d < best[0] or (d == best[0] and (a, b) < best[1:]):
                    best = (d, a, b)
        d, a, b = best
        clusters[next_id] = tuple(sorted(clusters[a] + clusters[b]))
        del clusters[a], clusters[b]
        merges.append(Merge(a, b, float(d)))
        next_id += 1
    return merges
