"""Acceptance suite: one test per acceptance criterion, each printing a
pass/fail line. Criteria 6-8 share the canonical runs provided by the
session-scoped ``canonical_reports`` fixture."""

from __future__ import annotations

import itertools
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from oxn.costs import overhead
from oxn.detection import (
    build_dataset,
    logreg_loss_gradient,
    train_logreg,
    zscore_fit_apply,
)
from oxn.scoring import fault_coverage, overall_fault_observability, visibility
from oxn.simulator import rng_stream
from oxn.telemetry import ResponseSeries, SeriesRow, sample_traces
from oxn.config import TraceConfigSpec, parse_experiment_file
from oxn.runner import simulate_run

from conftest import REPO_ROOT, experiment_path

PAUSE = "pause_recommendation"
PACKET_LOSS = "packet_loss_recommendation"
NETWORK_DELAY = "network_delay_recommendation"
TRACE_RESPONSE = "trace_duration_recommendation"


def announce(criterion: int, message: str) -> None:
    print(f"ACCEPTANCE {criterion}: PASS - {message}")


class TestCriterion1FormulaFidelity:
    def test_visibility_and_coverage_formulas_exact(self):
        started = time.perf_counter()
        assert visibility(0.83, 0.7) == 1
        assert visibility(0.61, 0.7) == 0
        assert str(fault_coverage([1, 1, 1])) == "3/3"
        assert str(fault_coverage([1, 0, 0])) == "1/3"
        assert str(fault_coverage([0, 0, 0])) == "0/3"
        coverages = [fault_coverage(v) for v in ([1, 1, 1], [1, 0, 0], [0, 0, 0])]
        assert str(overall_fault_observability(coverages)) == "2/3"
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0
        announce(1, f"formula-level values reproduce exactly ({elapsed:.3f}s)")


class TestCriterion2OverheadArithmetic:
    def test_overhead_reference_values(self):
        started = time.perf_counter()
        assert overhead(191.83, 199.47) == 3.98
        assert overhead(191.83, 197.68) == 3.05
        assert overhead(191.83, 202.06) == 5.33
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0
        announce(2, f"overhead percentages exact to two decimals ({elapsed:.3f}s)")


class TestCriterion3ScoringOracle:
    def test_exhaustive_equivalence(self):
        started = time.perf_counter()
        checked = 0
        for l, n in itertools.product((2, 3), repeat=2):
            for bits in itertools.product((0, 1), repeat=l * n):
                rows = [bits[f * n : (f + 1) * n] for f in range(l)]
                coverage = [fault_coverage(list(row)) for row in rows]
                ofo = overall_fault_observability(coverage)
                # brute force straight from the definitions
                expected_fc = [Fraction(sum(row), n) for row in rows]
                expected_ofo = Fraction(sum(1 for fc in expected_fc if fc > 0), l)
                assert [fc.fraction for fc in coverage] == expected_fc
                assert ofo.fraction == expected_ofo
                checked += 1
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0
        announce(3, f"{checked} visibility matrices match the brute-force oracle ({elapsed:.2f}s)")


class TestCriterion4DetectorCorrectness:
    def test_detector_pipeline(self):
        started = time.perf_counter()

        # analytic gradient vs central finite differences
        rng = np.random.default_rng(123)
        x = rng.normal(size=(60, 3))
        y = (rng.random(60) < 0.5).astype(float)
        h = 1e-5
        worst = 0.0
        for _ in range(10):
            w, b = rng.normal(size=3), float(rng.normal())
            _, grad = logreg_loss_gradient(x, y, w, b, 1e-4)
            theta = np.concatenate([w, [b]])
            fd = np.zeros(4)
            for j in range(4):
                up, down = theta.copy(), theta.copy()
                up[j] += h
                down[j] -= h
                lu, _ = logreg_loss_gradient(x, y, up[:3], up[3], 1e-4)
                ld, _ = logreg_loss_gradient(x, y, down[:3], down[3], 1e-4)
                fd[j] = (lu - ld) / (2 * h)
            worst = max(worst, float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8))))
        assert worst < 1e-5

        def dataset(shift, seed):
            gen = np.random.default_rng(seed)
            values = np.concatenate([gen.normal(0, 1, 100), gen.normal(shift, 1, 100)])
            labels = np.concatenate([np.zeros(100, dtype=int), np.ones(100, dtype=int)])
            order = gen.permutation(200)
            rows = [
                SeriesRow(1000 * (i + 1), float(values[order][i]), "fault" if labels[order][i] else "normal")
                for i in range(200)
            ]
            return build_dataset(ResponseSeries("s", "metric", rows), 0.7, gen, feature_window=1)

        # separable data reaches near-perfect test accuracy
        ds = zscore_fit_apply(dataset(6.0, 1))
        model = train_logreg(ds)
        x_test, y_test = ds.test
        accuracy = float(np.mean((model.decision(x_test) > 0.5).astype(int) == y_test))
        assert accuracy >= 0.99

        # label-shuffled data stays at chance level
        ds_null = zscore_fit_apply(dataset(0.0, 2))
        model_null = train_logreg(ds_null)
        x_test, y_test = ds_null.test
        chance = float(np.mean((model_null.decision(x_test) > 0.5).astype(int) == y_test))
        assert 0.4 <= chance <= 0.6

        # oversampling yields exactly equal train class counts
        gen = np.random.default_rng(3)
        values = np.concatenate([np.zeros(100), np.ones(20)])
        labels = np.concatenate([np.zeros(100, dtype=int), np.ones(20, dtype=int)])
        rows = [
            SeriesRow(1000 * (i + 1), float(v), "fault" if l else "normal")
            for i, (v, l) in enumerate(zip(values, labels))
        ]
        balanced = build_dataset(ResponseSeries("s", "metric", rows), 0.7, gen)
        _, y_train = balanced.train
        assert int((y_train == 1).sum()) == int((y_train == 0).sum())

        # z-score train moments
        normalized = zscore_fit_apply(dataset(2.0, 4))
        x_train, _ = normalized.train
        assert np.all(np.abs(x_train.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(x_train.std(axis=0) - 1.0) < 1e-9)

        elapsed = time.perf_counter() - started
        assert elapsed < 10.0
        announce(
            4,
            f"gradient max rel err {worst:.2e}, separable acc {accuracy:.3f}, "
            f"chance acc {chance:.2f} ({elapsed:.2f}s)",
        )


class TestCriterion5Determinism:
    def test_cli_run_twice_byte_identical(self, tmp_path):
        started = time.perf_counter()
        outputs = []
        for attempt in ("first", "second"):
            out = tmp_path / attempt
            proc = subprocess.run(
                [
                    sys.executable,
                    "-m",
                    "oxn.cli",
                    "run",
                    str(experiment_path("baseline")),
                    "--out",
                    str(out),
                    "--export-csv",
                    "--frozen-clock",
                    "--parallel",
                    "2",
                ],
                capture_output=True,
                text=True,
                cwd=REPO_ROOT,
            )
            assert proc.returncode == 0, proc.stderr
            files = {
                path.relative_to(out).as_posix(): path.read_bytes()
                for path in sorted(out.rglob("*"))
                if path.is_file()
            }
            outputs.append(files)
        assert outputs[0].keys() == outputs[1].keys()
        assert outputs[0] == outputs[1]
        for response in ("system_cpu", "recomms_per_minute", "trace_duration_recommendation"):
            assert f"csv/baseline_pause_recommendation-r0_{response}.csv" in outputs[0]
        elapsed = time.perf_counter() - started
        announce(
            5,
            f"two baseline runs produced {len(outputs[0])} byte-identical files ({elapsed:.0f}s)",
        )


class TestCriterion6NarrativeTrend:
    def test_baseline_pattern(self, canonical_reports):
        report = canonical_reports["baseline"]
        assert str(report.scores.fault_coverage[PAUSE]) == "3/3"
        assert str(report.scores.fault_coverage[NETWORK_DELAY]) == "0/3"
        assert report.scores.fault_coverage[PACKET_LOSS].count >= 1
        assert str(report.scores.ofo) == "2/3"

    def test_alternative_b_flips_delay_trace_cell(self, canonical_reports):
        baseline = canonical_reports["baseline"]
        alt_b = canonical_reports["alternative_b"]
        assert baseline.visible(NETWORK_DELAY, TRACE_RESPONSE) == 0
        assert alt_b.visible(NETWORK_DELAY, TRACE_RESPONSE) == 1
        assert str(alt_b.scores.ofo) == "3/3"

        from oxn.runner import compare_docs

        comparison = compare_docs(baseline.to_doc(), alt_b.to_doc())
        assert comparison["delta_fc_total"] == 1
        assert comparison["delta_ofo"] == 1
        assert comparison["cells_changed"] == [
            {"fault": NETWORK_DELAY, "response": TRACE_RESPONSE, "visible_delta": 1}
        ]

    def test_wall_clock_budget(self, canonical_reports):
        elapsed = canonical_reports["elapsed"]
        shared = elapsed["baseline"] + elapsed["alternative_b"] + elapsed["alternative_c"]
        assert shared < 180.0
        baseline = canonical_reports["baseline"]
        alt_b = canonical_reports["alternative_b"]
        announce(
            6,
            "baseline FC(pause)=3/3, FC(delay)=0/3, OFO=2/3; alternative B flips the "
            f"delay/trace cell ({baseline.score_means[(NETWORK_DELAY, TRACE_RESPONSE)]:.3f}"
            f" -> {alt_b.score_means[(NETWORK_DELAY, TRACE_RESPONSE)]:.3f}), OFO=3/3, "
            f"dFC=+1, dOFO=+1 ({shared:.0f}s for 90 runs)",
        )


class TestCriterion7CostOrdering:
    def test_cost_monotone_in_trace_rate_and_b_cheaper_than_c(self, canonical_reports):
        baseline = canonical_reports["baseline"]
        alt_b = canonical_reports["alternative_b"]
        alt_c = canonical_reports["alternative_c"]

        # common random numbers: per-(fault, repetition) totals never decrease
        # as the trace sampling rate grows
        for low, high in ((baseline, alt_b), (alt_b, alt_c)):
            for run_low, run_high in zip(low.runs, high.runs):
                assert (run_low.fault, run_low.repetition) == (run_high.fault, run_high.repetition)
                assert run_high.cost.total >= run_low.cost.total

        overhead_b = overhead(baseline.cost.total, alt_b.cost.total)
        overhead_c = overhead(baseline.cost.total, alt_c.cost.total)
        assert 0 < overhead_b < overhead_c
        announce(
            7,
            f"cost nondecreasing in trace rate; overhead B=+{overhead_b:.2f}% < C=+{overhead_c:.2f}%",
        )


class TestCriterion8TelemetryInvariants:
    def test_invariants_on_canonical_runs(self):
        started = time.perf_counter()
        specs = {
            "baseline": parse_experiment_file(experiment_path("baseline")),
            "alternative_b": parse_experiment_file(experiment_path("alternative_b")),
        }
        runs_checked = 0
        for name, spec in specs.items():
            repetitions = range(spec.repetitions) if name == "baseline" else range(3)
            for fault in spec.fault_treatments():
                for repetition in repetitions:
                    batch, series_list, records = simulate_run(spec, fault, repetition)
                    runs_checked += 1

                    # span nesting: child intervals inside parent intervals
                    by_id = {s.span_id: s for s in batch.spans}
                    for span in batch.spans:
                        if span.parent_id is not None:
                            parent = by_id[span.parent_id]
                            assert parent.start_ms <= span.start_ms
                            assert span.end_ms <= parent.end_ms

                    # metric grid alignment
                    for point in batch.metrics:
                        interval = spec.sue.metric_point(point).aggregation_interval_ms
                        for event in batch.metrics[point]:
                            assert event.timestamp_ms % interval == 0

                    # label partition: every row labeled once, fault span matches window
                    for series in series_list:
                        if series.kind != "metric":
                            continue
                        assert all(r.label in ("normal", "fault") for r in series.rows)
                        interval = spec.sue.metric_point(series.name).aggregation_interval_ms
                        fault_rows = [r for r in series.rows if r.label == "fault"]
                        window_span = (fault.end_ms or 0) - (fault.start_ms or 0)
                        assert abs(len(fault_rows) * interval - window_span) <= interval

                    # per-run binomial concentration of head sampling
                    rate = (
                        0.05 if name == "alternative_b" else spec.sue.trace_config.rate
                    )
                    sigma = (batch.trace_count * rate * (1 - rate)) ** 0.5
                    assert abs(batch.kept_trace_count - batch.trace_count * rate) <= 4 * sigma

                    # closed-loop bound: in-flight requests never exceed users
                    events = sorted(
                        [(r.start_ms, 1) for r in records] + [(r.end_ms, -1) for r in records]
                    )
                    in_flight = peak = 0
                    for _, delta in events:
                        in_flight += delta
                        peak = max(peak, in_flight)
                    assert peak <= spec.workload.users

        # dedicated binomial concentration check at rate 0.05, >= 10 000 traces
        from oxn.simulator import RawEventLog, SpanClose, SpanOpen

        log = RawEventLog()
        for i in range(12_000):
            log.span_opens.append(SpanOpen(i, i, -1, "api", i))
            log.span_closes.append(SpanClose(i, i + 5, "ok"))
        spans, total = sample_traces(log, TraceConfigSpec("probabilistic", 0.05), rng_stream(0, "acc"))
        kept = len({s.trace_id for s in spans})
        sigma = (total * 0.05 * 0.95) ** 0.5
        assert abs(kept - total * 0.05) <= 3 * sigma

        elapsed = time.perf_counter() - started
        announce(
            8,
            f"nesting, grid, labeling, sampling concentration and in-flight bound hold "
            f"on {runs_checked} canonical runs ({elapsed:.0f}s)",
        )
