"""Workload planning: arrival schedules, batch partitioning, plan execution.

The Poisson generator is validated statistically — exponential gaps have
mean 1/λ and coefficient of variation 1 — and for bit-exact replay under a
fixed seed.
"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from benchrig.errors import (
    AgentError,
    EmptyWorkload,
    PipelineError,
    ValidationError,
    error_from_code,
)
from benchrig.evaldb import Measurement
from benchrig.protocol import Arrival, BenchmarkScenario, InputItem, ResultItem
from benchrig.scenarios import (
    ArrivalSchedule,
    build_plan,
    execute_plan,
    gen_fixed,
    gen_poisson,
    gen_uniform,
    measurements_from_results,
    plan_batched,
)


def gaps(offsets):
    return [b - a for a, b in zip((0.0,) + tuple(offsets), offsets)]


class TestPoisson:
    def test_mean_and_cv_at_rate_100(self):
        schedule = gen_poisson(rate=100.0, count=100_000, seed=42)
        deltas = gaps(schedule.offsets)
        mean = sum(deltas) / len(deltas)
        variance = sum((d - mean) ** 2 for d in deltas) / len(deltas)
        cv = math.sqrt(variance) / mean
        assert abs(mean - 0.010) <= 0.010 * 0.03   # ±3% of the 10ms mean gap
        assert abs(cv - 1.0) <= 0.05               # ±5% of CV 1.0

    def test_same_seed_replays_identically(self):
        a = gen_poisson(rate=100.0, count=5_000, seed=7)
        b = gen_poisson(rate=100.0, count=5_000, seed=7)
        assert a.offsets == b.offsets

    def test_different_seeds_differ(self):
        a = gen_poisson(rate=100.0, count=100, seed=1)
        b = gen_poisson(rate=100.0, count=100, seed=2)
        assert a.offsets != b.offsets

    def test_offsets_strictly_positive_and_increasing(self):
        schedule = gen_poisson(rate=50.0, count=1_000, seed=3)
        assert schedule.offsets[0] > 0
        assert all(b > a for a, b in zip(schedule.offsets, schedule.offsets[1:]))

    def test_rate_scales_mean(self):
        fast = gen_poisson(rate=1000.0, count=20_000, seed=5)
        mean = fast.offsets[-1] / len(fast.offsets)
        assert abs(mean - 0.001) <= 0.001 * 0.05

    def test_invalid_rate_and_count(self):
        with pytest.raises(ValidationError):
            gen_poisson(rate=0.0, count=10, seed=0)
        with pytest.raises(ValidationError):
            gen_poisson(rate=10.0, count=0, seed=0)


class TestFixedAndUniform:
    def test_fixed_constant_gap(self):
        schedule = gen_fixed(rate=200.0, count=5)
        assert schedule.offsets == (0.0, 0.005, 0.010, 0.015, 0.020)

    def test_fixed_first_arrival_immediate(self):
        assert gen_fixed(rate=1.0, count=1).offsets == (0.0,)

    def test_uniform_gaps_bounded_and_centred(self):
        schedule = gen_uniform(rate=100.0, count=20_000, seed=9)
        deltas = gaps(schedule.offsets)
        assert all(0.0 <= d < 0.02 for d in deltas)
        mean = sum(deltas) / len(deltas)
        assert abs(mean - 0.010) <= 0.010 * 0.05

    def test_uniform_deterministic(self):
        assert gen_uniform(100.0, 50, seed=4).offsets == \
            gen_uniform(100.0, 50, seed=4).offsets


class TestArrivalSchedule:
    def test_rejects_negative_offsets(self):
        with pytest.raises(ValidationError):
            ArrivalSchedule(offsets=(-0.1, 0.2))

    def test_rejects_decreasing_offsets(self):
        with pytest.raises(ValidationError):
            ArrivalSchedule(offsets=(0.2, 0.1))

    def test_offsets_ns_rounds(self):
        schedule = ArrivalSchedule(offsets=(0.0, 0.0000000015))
        assert schedule.offsets_ns() == (0, 2)  # round-half-even at 1.5ns

    def test_equal_offsets_allowed(self):
        ArrivalSchedule(offsets=(0.5, 0.5, 0.5))  # simultaneous arrivals are legal


class TestPlanBatched:
    def test_partitions_order_preserving(self):
        plan = plan_batched(10, 4)
        assert plan.partitions == (4, 4, 2)
        assert plan.item_count == 10
        assert plan.scenario.kind == "batched"

    def test_exact_division(self):
        assert plan_batched(12, 4).partitions == (4, 4, 4)

    def test_single_short_batch(self):
        assert plan_batched(3, 8).partitions == (3,)

    def test_zero_items_rejected(self):
        with pytest.raises(EmptyWorkload):
            plan_batched(0, 4)

    def test_bad_batch_size(self):
        with pytest.raises(ValidationError):
            plan_batched(10, 0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=1, max_value=10_000),
           st.integers(min_value=1, max_value=512))
    def test_partition_invariants(self, count, batch_size):
        plan = plan_batched(count, batch_size)
        parts = plan.partitions
        assert sum(parts) == count
        assert len(parts) == -(-count // batch_size)  # ceil division
        assert all(p == batch_size for p in parts[:-1])
        assert 1 <= parts[-1] <= batch_size


class TestBuildPlan:
    def test_batched_passthrough(self):
        scenario = BenchmarkScenario(kind="batched", batch_size=8,
                                     request_count=20)
        plan = build_plan(scenario, item_count=5)
        assert plan.partitions == (8, 8, 4)

    def test_online_count_based(self):
        scenario = BenchmarkScenario(
            kind="online", arrival=Arrival("poisson", 100.0), request_count=50)
        plan = build_plan(scenario, item_count=10, seed=11)
        assert plan.item_count == 50
        assert len(plan.schedule.offsets) == 50
        assert plan.schedule.distribution == "poisson"

    def test_online_duration_based(self):
        scenario = BenchmarkScenario(
            kind="online", arrival=Arrival("fixed", 100.0),
            duration_seconds=0.25)
        plan = build_plan(scenario, item_count=1, seed=0)
        assert all(offset <= 0.25 for offset in plan.schedule.offsets)
        assert plan.item_count == len(plan.schedule.offsets) >= 1
        # the concretized scenario becomes count-based
        assert plan.scenario.request_count == plan.item_count

    def test_duration_seed_determinism(self):
        scenario = BenchmarkScenario(
            kind="online", arrival=Arrival("poisson", 200.0),
            duration_seconds=0.1)
        a = build_plan(scenario, item_count=1, seed=5)
        b = build_plan(scenario, item_count=1, seed=5)
        assert a.schedule.offsets == b.schedule.offsets

    def test_no_items_rejected(self):
        scenario = BenchmarkScenario(kind="batched", batch_size=2,
                                     request_count=4)
        with pytest.raises(EmptyWorkload):
            build_plan(scenario, item_count=0)


class FakeStream:
    """Stand-in for a client predict stream: records sends, replays results."""

    def __init__(self, results=(), error=None):
        self.sent = []
        self.finished = False
        self._results = list(results)
        self._error = error

    def send_item(self, item):
        self.sent.append(item)

    def finish_sending(self):
        self.finished = True

    def items(self):
        yield from self._results

    def result(self):
        if self._error is not None:
            raise self._error
        return None


def batch_result(index, sequences, start_ns, end_ns, warmup=False):
    return ResultItem(sequence=index, item_sequences=tuple(sequences),
                      batch_size=len(sequences), start_ns=start_ns,
                      end_ns=end_ns, warmup=warmup)


class TestExecutePlan:
    def test_sends_every_item_with_schedule_and_warmup(self):
        scenario = BenchmarkScenario(
            kind="online", arrival=Arrival("fixed", 1000.0), request_count=6,
            warmup_count=2)
        plan = build_plan(scenario, item_count=3)
        stream = FakeStream(results=[
            batch_result(i, [i], start_ns=i * 1_000_000,
                         end_ns=i * 1_000_000 + 500) for i in range(6)])
        measurements = execute_plan(plan, stream, [b"a", b"b", b"c"])

        assert stream.finished
        assert [item.sequence for item in stream.sent] == list(range(6))
        assert [item.warmup for item in stream.sent] == [True, True] + [False] * 4
        assert [item.scheduled_ns for item in stream.sent] == \
            list(plan.schedule.offsets_ns())
        # items reused cyclically: payloads repeat a, b, c, a, b, c
        assert stream.sent[0].payload_b64 == stream.sent[3].payload_b64
        assert len(measurements) == 6

    def test_tensor_bodies_pass_through(self):
        plan = plan_batched(2, 2)
        stream = FakeStream(results=[batch_result(0, [0, 1], 0, 10)])
        execute_plan(plan, stream, [{"element_type": "float32",
                                     "shape": [1], "data_b64": "AACAPw=="}])
        assert stream.sent[0].tensor == {"element_type": "float32",
                                         "shape": [1], "data_b64": "AACAPw=="}

    def test_pipeline_error_becomes_agent_error_with_index(self):
        plan = plan_batched(4, 2)
        stream = FakeStream(error=PipelineError("predict", 2, "exploded"))
        with pytest.raises(AgentError) as info:
            execute_plan(plan, stream, [b"x"])
        assert info.value.request_index == 2

    def test_wire_decoded_pipeline_error_still_becomes_agent_error(self):
        # Errors that crossed the wire carry only the rendered message, not
        # the structured sequence attribute.
        plan = plan_batched(4, 2)
        decoded = error_from_code("pipeline",
                                  "operator 'predict' failed on item 0: boom")
        stream = FakeStream(error=decoded)
        with pytest.raises(AgentError) as info:
            execute_plan(plan, stream, [b"x"])
        assert info.value.request_index is None
        assert "failed on item 0: boom" in str(info.value)

    def test_empty_inputs_rejected(self):
        plan = plan_batched(4, 2)
        with pytest.raises(EmptyWorkload):
            execute_plan(plan, FakeStream(), [])


class TestMeasurements:
    def test_batched_expansion(self):
        results = [
            batch_result(0, [0, 1], start_ns=100, end_ns=300),
            batch_result(1, [2], start_ns=300, end_ns=450),
        ]
        rows = measurements_from_results(results, warmup_count=1)
        assert [m.sequence for m in rows] == [0, 1, 2]
        assert [m.warmup for m in rows] == [True, False, False]
        assert rows[0].issue_time_ns == 100 and rows[0].latency_ns == 200
        assert rows[0].batch_size == 2
        assert rows[2].issue_time_ns == 300 and rows[2].latency_ns == 150
        assert rows[2].batch_size == 1
        assert all(m.lateness_ns == 0 for m in rows)  # batched: no schedule

    def test_lateness_anchored_at_first_issue(self):
        offsets = (0, 10, 20)
        results = [
            batch_result(0, [0], start_ns=5, end_ns=6),     # origin = 5
            batch_result(1, [1], start_ns=15, end_ns=16),   # on time
            batch_result(2, [2], start_ns=40, end_ns=41),   # 15ns late
        ]
        rows = measurements_from_results(results, warmup_count=0,
                                         offsets_ns=offsets)
        assert [m.lateness_ns for m in rows] == [0, 0, 15]

    def test_early_issue_clamps_to_zero(self):
        offsets = (0, 1_000_000)
        results = [
            batch_result(0, [0], start_ns=100, end_ns=101),
            batch_result(1, [1], start_ns=100, end_ns=102),  # early vs schedule
        ]
        rows = measurements_from_results(results, warmup_count=0,
                                         offsets_ns=offsets)
        assert rows[1].lateness_ns == 0

    def test_results_sorted_before_expansion(self):
        results = [
            batch_result(1, [2, 3], start_ns=200, end_ns=250),
            batch_result(0, [0, 1], start_ns=100, end_ns=150),
        ]
        rows = measurements_from_results(results, warmup_count=0)
        assert [m.sequence for m in rows] == [0, 1, 2, 3]
        assert rows[0].issue_time_ns == 100

    def test_failure_rows_keep_success_flag(self):
        failed = ResultItem(sequence=0, item_sequences=(0,), batch_size=1,
                            start_ns=0, end_ns=10, success=False, error="boom")
        rows = measurements_from_results([failed], warmup_count=0)
        assert rows[0].success is False

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(min_value=1, max_value=8), min_size=1,
                    max_size=12))
    def test_row_count_matches_item_count(self, batch_sizes):
        results = []
        sequence = 0
        clock = 0
        for index, size in enumerate(batch_sizes):
            sequences = list(range(sequence, sequence + size))
            results.append(batch_result(index, sequences, clock, clock + 7))
            sequence += size
            clock += 10
        rows = measurements_from_results(results, warmup_count=0)
        assert len(rows) == sum(batch_sizes)
        assert [m.sequence for m in rows] == list(range(sum(batch_sizes)))
        assert all(m.latency_ns == 7 for m in rows)
