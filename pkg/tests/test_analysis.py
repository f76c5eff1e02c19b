"""Latency/throughput statistics and report generation.

The trimmed-mean and percentile tests check the implementation against
independent brute-force evaluations of the definitions (sort ascending,
drop the outer 20%, sum left-to-right; nearest-rank percentile found by
linear scan over candidate ranks) — exact equality, no tolerances.
"""

import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from benchrig.agent import AgentService, run_evaluation
from benchrig.analysis import (
    TRIM_FRACTION,
    LatencySummary,
    LayerReportRow,
    SpeedupMatrix,
    ThroughputCurve,
    generate_report,
    latency_summary,
    layer_report,
    percentile,
    render_report_html,
    report_json,
    speedup_matrix,
    throughput_curve,
    trimmed_mean,
)
from benchrig.errors import EmptyInput, MissingBaseline, NoData, ValidationError
from benchrig.evaldb import EvaluationResult, Measurement
from benchrig.ids import derive_span_id
from benchrig.predictor import SimulatedPredictor, register_predictor, unregister_predictor
from benchrig.protocol import (
    Arrival,
    BenchmarkScenario,
    InputItem,
    OpenRequest,
    PredictOptions,
    TraceLevel,
)
from benchrig.registry import AgentRecord, Device
from benchrig.semver import SemVer
from benchrig.tensors import TensorValue
from benchrig.tracer import TraceSpan, TraceStore

finite_floats = st.floats(allow_nan=False, allow_infinity=False,
                          min_value=-1e12, max_value=1e12)


def footnote_trimmed_mean(xs):
    """Independent brute-force transcription of the trimmed-mean formula:
    sort ascending, drop ⌊0.2·n⌋ from each end, average what remains."""
    ordered = sorted(xs)
    k = len(ordered) // 5  # ⌊0.2·n⌋ for integer n
    window = ordered[k:len(ordered) - k]
    return sum(window) / len(window)


def nearest_rank_oracle(xs, p):
    """Smallest 1-indexed rank r with r/n ≥ p/100, found by linear scan."""
    ordered = sorted(xs)
    n = len(ordered)
    target = Fraction(p) / 100
    for r in range(1, n + 1):
        if Fraction(r, n) >= target:
            return ordered[r - 1]
    return ordered[-1]


class TestTrimmedMean:
    def test_one_through_ten(self):
        assert trimmed_mean([1, 2, 3, 4, 5, 6, 7, 8, 9, 10]) == 5.5

    def test_singleton_untouched(self):
        assert trimmed_mean([5]) == 5

    def test_sort_invariance(self):
        rng = random.Random(7)
        values = list(range(1, 11))
        for _ in range(20):
            rng.shuffle(values)
            assert trimmed_mean(values) == 5.5

    def test_matches_brute_force_on_random_lists(self):
        rng = random.Random(20260818)
        for _ in range(1000):
            n = rng.randint(1, 300)
            xs = [rng.uniform(0, 1000) for _ in range(n)]
            assert trimmed_mean(xs) == footnote_trimmed_mean(xs)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            trimmed_mean([])

    @given(st.lists(finite_floats, min_size=1, max_size=100))
    def test_bounded_by_extremes(self, xs):
        value = trimmed_mean(xs)
        spread = max(abs(min(xs)), abs(max(xs)), 1.0)
        assert min(xs) - 1e-9 * spread <= value <= max(xs) + 1e-9 * spread


class TestPercentile:
    def test_p90_of_one_through_ten(self):
        assert percentile(list(range(1, 11)), 90) == 9

    def test_p100_is_maximum(self):
        assert percentile(list(range(1, 11)), 100) == 10

    def test_single_element_any_p(self):
        for p in (0.001, 37, 50, 99.9, 100):
            assert percentile([42.0], p) == 42.0

    def test_matches_linear_scan_oracle(self):
        rng = random.Random(99)
        for _ in range(300):
            n = rng.randint(1, 50)
            xs = [rng.uniform(-100, 100) for _ in range(n)]
            p = rng.uniform(0.01, 100)
            assert percentile(xs, p) == nearest_rank_oracle(xs, p)

    def test_rank_boundaries_are_exact(self):
        # p = 100·r/n must select rank r itself, not overshoot to r+1
        xs = list(range(1, 11))
        for r in range(1, 11):
            assert percentile(xs, 100 * r / 10) == r

    def test_rejects_out_of_range_p(self):
        for p in (0, -1, 100.5, 1000):
            with pytest.raises(ValidationError):
                percentile([1.0], p)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            percentile([], 50)

    @given(st.lists(finite_floats, min_size=1, max_size=60),
           st.floats(min_value=0.01, max_value=100),
           st.floats(min_value=0.01, max_value=100))
    def test_monotone_and_bounded(self, xs, p1, p2):
        lo, hi = sorted((p1, p2))
        assert min(xs) <= percentile(xs, lo) <= percentile(xs, hi) <= max(xs)


class TestLatencySummary:
    def test_fields(self):
        summary = latency_summary([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
        assert summary.count == 10
        assert summary.trimmed_mean_ms == 5.5
        assert summary.p90_ms == 9.0
        assert summary.min_ms == 1.0
        assert summary.max_ms == 10.0
        assert summary.mean_ms == 5.5
        assert summary.trim_fraction == TRIM_FRACTION == 0.2

    def test_empty(self):
        with pytest.raises(EmptyInput):
            latency_summary([])

    @given(st.lists(st.floats(min_value=0, max_value=1e9), min_size=1,
                    max_size=80))
    def test_ordering_invariant(self, xs):
        summary = latency_summary(xs)
        slack = 1e-9 * max(summary.max_ms, 1.0)
        assert summary.min_ms - slack <= summary.trimmed_mean_ms <= summary.max_ms + slack
        assert summary.count == len(xs)


# ---------------------------------------------------------------------------
# Result fixtures


def agent_record(agent_id="agent-1", architecture="x86_64"):
    return AgentRecord(
        agent_id=agent_id, endpoint="127.0.0.1:9", architecture=architecture,
        devices=(Device(kind="cpu", name="host", memory_bytes=1 << 30, count=1),),
        frameworks=(("synthetic", SemVer.parse("1.0.0")),),
        builtin_models=())


def batched_result(model="demo", version="1.0.0", batch_size=4,
                   measurements=(), evaluation_id=None, trace_id="a" * 32):
    measurements = tuple(measurements)
    request = OpenRequest(
        benchmark_scenario=BenchmarkScenario(
            kind="batched", batch_size=batch_size,
            request_count=max(len(measurements), 1)),
        predict_options=PredictOptions(),
        model_name=model,
    )
    return EvaluationResult(
        evaluation_id=evaluation_id or f"eval-{model}-{batch_size}",
        request=request,
        agent=agent_record(),
        started_at_ns=1_000,
        finished_at_ns=2_000,
        per_request_measurements=measurements,
        model_version=SemVer.parse(version),
        framework_version=SemVer.parse("1.0.0"),
        trace_id=trace_id,
        clock_domain="virtual",
    )


def measurements_over(count, batch_size, latency_ns, start_ns=0):
    """Measurements for ⌈count/batch_size⌉ back-to-back batches: every item
    in a batch shares the batch's issue time and latency."""
    rows = []
    issue = start_ns
    seq = 0
    remaining = count
    while remaining > 0:
        size = min(batch_size, remaining)
        for _ in range(size):
            rows.append(Measurement(sequence=seq, issue_time_ns=issue,
                                    latency_ns=latency_ns, batch_size=size))
            seq += 1
        issue += latency_ns
        remaining -= size
    return rows


class TestThroughputCurve:
    def test_single_batch_size(self):
        # 8 items in two 4-batches of 5 ms: busy 10 ms → 800 items/s
        result = batched_result(batch_size=4,
                                measurements=measurements_over(8, 4, 5_000_000))
        curve = throughput_curve([result])
        assert curve.points == ((4, 800.0),)
        assert curve.max_throughput == 800.0
        assert curve.optimal_batch_size == 4

    def test_argmax_and_tie_to_smallest(self):
        results = [
            batched_result(batch_size=1,
                           measurements=measurements_over(4, 1, 2_000_000)),
            batched_result(batch_size=2,
                           measurements=measurements_over(4, 2, 2_000_000)),
            batched_result(batch_size=4,
                           measurements=measurements_over(4, 4, 4_000_000)),
        ]
        curve = throughput_curve(results)
        # 500/s, 1000/s, 1000/s — tie between b=2 and b=4 → smallest
        assert [point for point in curve.points] == [
            (1, 500.0), (2, 1000.0), (4, 1000.0)]
        assert curve.max_throughput == 1000.0
        assert curve.optimal_batch_size == 2

    def test_warmups_excluded(self):
        warm = [Measurement(sequence=0, issue_time_ns=0, latency_ns=50_000_000,
                            batch_size=1, warmup=True)]
        timed = measurements_over(4, 2, 1_000_000, start_ns=50_000_000)
        result = batched_result(batch_size=2, measurements=warm + timed)
        curve = throughput_curve([result])
        # busy window = the 4 timed items over 2 ms, not the warmup's 50 ms
        assert curve.points == ((2, 2000.0),)

    def test_failures_excluded_from_item_count(self):
        good = measurements_over(4, 2, 1_000_000)
        bad = [Measurement(sequence=4, issue_time_ns=2_000_000,
                           latency_ns=1_000_000, batch_size=2, success=False)]
        result = batched_result(batch_size=2, measurements=good + bad)
        curve = throughput_curve([result])
        [(batch, throughput)] = curve.points
        assert batch == 2
        # only 4 successful items counted over a 3 ms window
        assert throughput == 4 * 1e9 / 3_000_000

    def test_same_batch_size_pooled_across_results(self):
        a = batched_result(batch_size=2, evaluation_id="a",
                           measurements=measurements_over(4, 2, 1_000_000))
        b = batched_result(batch_size=2, evaluation_id="b",
                           measurements=measurements_over(8, 2, 1_000_000))
        curve = throughput_curve([a, b])
        # 12 items over 2 ms + 4 ms of busy time → 2000/s
        assert curve.points == ((2, 2000.0),)

    def test_online_results_ignored(self):
        online = EvaluationResult(
            evaluation_id="online-1",
            request=OpenRequest(
                benchmark_scenario=BenchmarkScenario(
                    kind="online", arrival=Arrival("fixed", 100.0),
                    request_count=2),
                predict_options=PredictOptions(),
                model_name="demo"),
            agent=agent_record(),
            started_at_ns=0, finished_at_ns=1,
            per_request_measurements=tuple(measurements_over(2, 1, 1_000_000)),
            model_version=SemVer.parse("1.0.0"),
            framework_version=SemVer.parse("1.0.0"),
            trace_id="b" * 32, clock_domain="virtual")
        batched = batched_result(batch_size=1,
                                 measurements=measurements_over(2, 1, 1_000_000))
        curve = throughput_curve([online, batched])
        assert [batch for batch, _ in curve.points] == [1]

    def test_no_results(self):
        with pytest.raises(NoData):
            throughput_curve([])

    def test_no_usable_measurements(self):
        only_warmup = [Measurement(sequence=0, issue_time_ns=0,
                                   latency_ns=1_000, batch_size=1, warmup=True)]
        with pytest.raises(NoData):
            throughput_curve([batched_result(measurements=only_warmup)])


@pytest.fixture()
def synthetic_predictor():
    register_predictor(SimulatedPredictor(), replace=True)
    yield
    unregister_predictor("synthetic")


MANIFEST = """
name: synthetic-demo
version: 1.0.0
framework:
  name: synthetic
  version: ">=1.0.0"
inputs:
  - type: tensor
    element_type: float32
outputs:
  - type: tensor
    element_type: float32
"""


def run_batched(service, batch_size, batches=3):
    count = batch_size * batches
    request = OpenRequest(
        benchmark_scenario=BenchmarkScenario(kind="batched",
                                             batch_size=batch_size,
                                             request_count=count),
        predict_options=PredictOptions(trace_level=TraceLevel.NONE),
        model_name="synthetic-demo",
        framework_name="synthetic",
    )
    body = TensorValue.from_numpy(np.zeros(2, dtype=np.float32)).to_body()
    items = [InputItem(sequence=i, tensor=body) for i in range(count)]
    return run_evaluation(service, request, items)


class TestVirtualClockClosedForm:
    """Under the virtual clock the latency model is exact: a batch of b costs
    base + per_item·b ms, so throughput must equal b/(base + per_item·b)
    with zero tolerance."""

    def test_throughput_matches_latency_model_exactly(self, synthetic_predictor):
        service = AgentService(frameworks=["synthetic"],
                               builtin_manifests=[MANIFEST])
        results = [run_batched(service, b) for b in (1, 8, 64)]
        curve = throughput_curve(results)
        for batch, throughput in curve.points:
            latency_ns = 2_000_000 + 500_000 * batch
            assert throughput == batch * 1e9 / latency_ns
        assert curve.optimal_batch_size == 64
        assert curve.max_throughput == 64 * 1e9 / 34_000_000

    def test_speedup_closed_form(self, synthetic_predictor):
        service = AgentService(frameworks=["synthetic"],
                               builtin_manifests=[MANIFEST])
        results = [run_batched(service, b) for b in (1, 32)]
        matrix = speedup_matrix({"synthetic-demo": throughput_curve(results)})
        row = dict(zip(matrix.batch_sizes, (cells[0] for cells in matrix.cells)))
        assert row[1] == 1.0
        assert row[32] == pytest.approx(32 * 2.5 / 18, rel=1e-9)


class TestSpeedupMatrix:
    def _curve(self, points):
        points = tuple(points)
        best = max(points, key=lambda p: (p[1], -p[0]))
        return ThroughputCurve(points=points, max_throughput=best[1],
                               optimal_batch_size=best[0])

    def test_baseline_row_is_unity(self):
        matrix = speedup_matrix({
            "m1": self._curve([(1, 100.0), (2, 150.0)]),
            "m2": self._curve([(1, 400.0), (2, 600.0)]),
        })
        assert matrix.model_ids == ("m1", "m2")
        assert matrix.batch_sizes == (1, 2)
        assert matrix.cells[0] == (1.0, 1.0)
        assert matrix.cells[1] == (1.5, 1.5)

    def test_missing_baseline(self):
        with pytest.raises(MissingBaseline):
            speedup_matrix({"m": self._curve([(2, 100.0)])})

    def test_batch_size_missing_for_one_model(self):
        matrix = speedup_matrix({
            "m1": self._curve([(1, 100.0), (4, 300.0)]),
            "m2": self._curve([(1, 50.0)]),
        })
        assert matrix.batch_sizes == (1, 4)
        assert matrix.cells[1] == (3.0, None)

    def test_empty(self):
        with pytest.raises(NoData):
            speedup_matrix({})


# ---------------------------------------------------------------------------
# Layer reports


TRACE = "c" * 32


def span(name, level, start_ms, end_ms, parent=None, attributes=None):
    return TraceSpan(
        trace_id=TRACE,
        span_id=derive_span_id(TRACE, name),
        name=name,
        level=level,
        start_ns=int(start_ms * 1e6),
        end_ns=int(end_ms * 1e6),
        clock_domain="virtual",
        parent_span_id=parent,
        attributes=attributes or {},
    )


def assemble(spans):
    store = TraceStore()
    store.publish(spans)
    return store.assemble(TRACE)


def layered_timeline(with_kernels=True):
    root = span("evaluation", TraceLevel.MODEL, 0, 60)
    layers = [
        span("conv_a", TraceLevel.FRAMEWORK, 0, 10, parent=root.span_id,
             attributes={"layer_index": "3", "layer_type": "Conv2D"}),
        span("gemm_b", TraceLevel.FRAMEWORK, 10, 40, parent=root.span_id,
             attributes={"layer_index": "7", "layer_type": "MatMul"}),
        span("relu_c", TraceLevel.FRAMEWORK, 40, 60, parent=root.span_id,
             attributes={"layer_index": "9", "layer_type": "Relu"}),
    ]
    kernels = []
    if with_kernels:
        kernels = [
            span("kern_z", TraceLevel.SYSTEM, 10, 19, parent=layers[1].span_id),
            span("kern_a", TraceLevel.SYSTEM, 19, 28, parent=layers[1].span_id),
            span("kern_small", TraceLevel.SYSTEM, 28, 30, parent=layers[1].span_id),
            span("kern_only", TraceLevel.SYSTEM, 41, 55, parent=layers[2].span_id),
        ]
    return assemble([root] + layers + kernels)


class TestLayerReport:
    def test_rows_sorted_by_latency_descending(self):
        rows = layer_report(layered_timeline(), top_k=5)
        assert [row.layer_name for row in rows] == ["gemm_b", "relu_c", "conv_a"]
        assert [row.latency_ms for row in rows] == [30.0, 20.0, 10.0]
        assert [row.layer_index for row in rows] == [7, 9, 3]
        assert [row.layer_type for row in rows] == ["MatMul", "Relu", "Conv2D"]

    def test_top_k_truncates(self):
        rows = layer_report(layered_timeline(), top_k=2)
        assert [row.layer_name for row in rows] == ["gemm_b", "relu_c"]

    def test_top_k_larger_than_layer_count(self):
        assert len(layer_report(layered_timeline(), top_k=99)) == 3

    def test_kernel_breakdown_and_dominant(self):
        rows = layer_report(layered_timeline(), top_k=1)
        [row] = rows
        # equal 9 ms kernels tie → lexicographically smaller name dominates
        assert row.dominant_kernel == "kern_a"
        assert [name for name, _ in row.kernels] == \
            ["kern_a", "kern_z", "kern_small"]
        assert [duration for _, duration in row.kernels] == [9.0, 9.0, 2.0]

    def test_no_system_spans(self):
        rows = layer_report(layered_timeline(with_kernels=False), top_k=5)
        assert all(row.kernels == () for row in rows)
        assert all(row.dominant_kernel == "" for row in rows)

    def test_latencies_bounded_by_root_duration(self):
        timeline = layered_timeline()
        rows = layer_report(timeline, top_k=99)
        root_ms = timeline.roots[0].span.duration_ns / 1e6
        assert sum(row.latency_ms for row in rows) <= root_ms + 1e-6

    def test_no_framework_spans(self):
        timeline = assemble([span("evaluation", TraceLevel.MODEL, 0, 5)])
        assert layer_report(timeline, top_k=5) == []


# ---------------------------------------------------------------------------
# Reports


def report_inputs():
    results = [
        batched_result(model="alpha", batch_size=1, evaluation_id="eval-a1",
                       measurements=measurements_over(4, 1, 2_000_000)),
        batched_result(model="alpha", batch_size=4, evaluation_id="eval-a4",
                       measurements=measurements_over(8, 4, 4_000_000)),
        batched_result(model="beta", batch_size=1, evaluation_id="eval-b1",
                       trace_id="d" * 32,
                       measurements=measurements_over(2, 1, 1_000_000)),
    ]
    return results, [layered_timeline()]


class TestGenerateReport:
    def test_versioned_and_complete(self):
        results, timelines = report_inputs()
        report = generate_report(results, timelines)
        assert report["report_version"] == 1
        assert report["trim_fraction"] == 0.2

        models = {entry["model"]: entry for entry in report["models"]}
        assert set(models) == {"alpha@1.0.0", "beta@1.0.0"}
        assert models["alpha@1.0.0"]["sample_count"] == 12
        assert models["alpha@1.0.0"]["latency"]["count"] == 12
        throughput = models["alpha@1.0.0"]["throughput"]
        assert [tuple(point) for point in throughput["points"]] == \
            [(1, 500.0), (4, 1000.0)]

        speedup = report["speedup"]
        assert speedup["batch_sizes"] == [1, 4]
        assert speedup["model_ids"] == ["alpha@1.0.0", "beta@1.0.0"]

        [layers] = report["layers"]
        assert layers["trace_id"] == TRACE
        assert layers["rows"][0]["layer_name"] == "gemm_b"

        agents = report["environment"]["agents"]
        assert [a["agent_id"] for a in agents] == ["agent-1"]
        assert report["evaluations"] == ["eval-a1", "eval-a4", "eval-b1"]

    def test_byte_deterministic(self):
        first = generate_report(*report_inputs())
        second = generate_report(*report_inputs())
        assert report_json(first) == report_json(second)

    def test_no_data(self):
        with pytest.raises(NoData):
            generate_report([], [])

    def test_html_is_self_contained(self):
        results, timelines = report_inputs()
        html = render_report_html(generate_report(results, timelines))
        assert html.lstrip().lower().startswith("<!doctype html>")
        assert "alpha@1.0.0" in html
        assert "gemm_b" in html
        for marker in ("http://", "https://", "<script src", "<link"):
            assert marker not in html

    def test_html_escapes_model_names(self):
        result = batched_result(model="<script>alert(1)</script>",
                                measurements=measurements_over(2, 4, 1_000_000))
        html = render_report_html(generate_report([result], []))
        assert "<script>alert(1)</script>" not in html
        assert "&lt;script&gt;" in html
