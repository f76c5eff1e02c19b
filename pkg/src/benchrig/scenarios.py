"""Workload generation and execution.

The load generator owns the *shape* of an evaluation: batched closed-loop
(fixed batch size, batches back-to-back) or online open-loop (items issued
on a seeded arrival schedule). Schedules come from a deterministic 64-bit
generator (SplitMix64; exponential gaps via inverse CDF −ln(1−u)/λ), so a
fixed (rate, count, seed) triple always produces the identical schedule.

``execute_plan`` drives one agent predict stream: it sends every input item
(with its schedule offset and warmup flag), then collects per-batch results
and turns them into per-request :class:`~benchrig.evaldb.Measurement` rows.
Issue timing is enforced at the agent's source operator, so a slow
predictor can never delay arrival generation (open-loop non-coordination);
if the pipeline falls behind schedule the lateness is recorded per request,
never dropped. Lateness is anchored at the first actual issue: request i
is late by ``issue_i − (origin + offset_i)`` where ``origin`` is the first
request's issue minus its offset.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import AgentError, BenchrigError, EmptyWorkload, PipelineError, ValidationError
from .evaldb import Measurement
from .protocol import BenchmarkScenario, InputItem, ResultItem
from .rng import SplitMix64

__all__ = [
    "ArrivalSchedule",
    "WorkloadPlan",
    "gen_poisson",
    "gen_fixed",
    "gen_uniform",
    "plan_batched",
    "build_plan",
    "execute_plan",
    "measurements_from_results",
]


@dataclass(frozen=True)
class ArrivalSchedule:
    """Arrival offsets in seconds from evaluation start, plus provenance."""

    offsets: tuple[float, ...]
    seed: int = 0
    distribution: str = "fixed"
    rate: float = 0.0

    def __post_init__(self):
        if any(offset < 0 for offset in self.offsets):
            raise ValidationError("offsets", "must be >= 0")
        if any(b < a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValidationError("offsets", "must be nondecreasing")

    def offsets_ns(self) -> tuple[int, ...]:
        return tuple(int(round(offset * 1e9)) for offset in self.offsets)

    def to_body(self) -> dict:
        return {"offsets": list(self.offsets), "seed": self.seed,
                "distribution": self.distribution, "rate": self.rate}


@dataclass(frozen=True)
class WorkloadPlan:
    """How a concrete workload will be issued."""

    scenario: BenchmarkScenario
    item_count: int
    partitions: tuple[int, ...] = ()            # batched: batch sizes, in order
    schedule: ArrivalSchedule | None = None     # online: arrival offsets


def _positive_rate(rate: float) -> float:
    if not rate > 0:
        raise ValidationError("rate", f"must be > 0, got {rate}")
    return float(rate)


def _positive_count(count: int) -> int:
    if count < 1:
        raise ValidationError("count", f"must be >= 1, got {count}")
    return int(count)


def gen_poisson(rate: float, count: int, seed: int) -> ArrivalSchedule:
    """Poisson arrivals: i.i.d. Exponential(rate) gaps, prefix-summed."""
    rate = _positive_rate(rate)
    count = _positive_count(count)
    rng = SplitMix64(seed)
    offsets = []
    elapsed = 0.0
    for _ in range(count):
        elapsed += rng.next_exponential(rate)
        offsets.append(elapsed)
    return ArrivalSchedule(tuple(offsets), seed=seed,
                           distribution="poisson", rate=rate)


def gen_fixed(rate: float, count: int) -> ArrivalSchedule:
    """Constant-gap arrivals at 1/rate seconds; the first issues immediately."""
    rate = _positive_rate(rate)
    count = _positive_count(count)
    offsets = tuple(i / rate for i in range(count))
    return ArrivalSchedule(offsets, seed=0, distribution="fixed", rate=rate)


def gen_uniform(rate: float, count: int, seed: int) -> ArrivalSchedule:
    """Uniform gaps on [0, 2/rate), giving mean gap 1/rate."""
    rate = _positive_rate(rate)
    count = _positive_count(count)
    rng = SplitMix64(seed)
    offsets = []
    elapsed = 0.0
    for _ in range(count):
        elapsed += 2.0 * rng.next_float() / rate
        offsets.append(elapsed)
    return ArrivalSchedule(tuple(offsets), seed=seed,
                           distribution="uniform", rate=rate)


def plan_batched(items, batch_size: int, warmup_count: int = 0) -> WorkloadPlan:
    """Partition items into ⌈n/batch_size⌉ order-preserving batches."""
    count = items if isinstance(items, int) else len(items)
    if count == 0:
        raise EmptyWorkload("cannot plan a batched workload over zero items")
    if batch_size < 1:
        raise ValidationError("batch_size", f"must be >= 1, got {batch_size}")
    full, remainder = divmod(count, batch_size)
    partitions = (batch_size,) * full + ((remainder,) if remainder else ())
    scenario = BenchmarkScenario(kind="batched", batch_size=batch_size,
                                 request_count=count, warmup_count=warmup_count)
    return WorkloadPlan(scenario=scenario, item_count=count,
                        partitions=partitions)


def build_plan(scenario: BenchmarkScenario, item_count: int,
               seed: int = 0) -> WorkloadPlan:
    """Concretize a scenario against an available item count.

    Count-based scenarios use their request_count; duration-based online
    scenarios generate arrivals until the duration elapses. Items are
    reused cyclically by the sender if the dataset is shorter than the
    request count, so item_count only needs to be ≥ 1.
    """
    if item_count < 1:
        raise EmptyWorkload("no input items available")
    if scenario.kind == "batched":
        if scenario.request_count is None:
            raise ValidationError(
                "scenario", "batched scenarios are count-based; "
                            "duration_seconds is only supported online")
        return plan_batched(scenario.request_count, scenario.batch_size,
                            warmup_count=scenario.warmup_count)

    arrival = scenario.arrival
    if scenario.request_count is not None:
        count = scenario.request_count
        schedule = _generate(arrival, count, seed)
    else:
        # Generate until the duration elapses (at least one request).
        duration = float(scenario.duration_seconds)
        count = max(1, int(arrival.rate * duration * 2) + 16)
        schedule = _generate(arrival, count, seed)
        kept = [o for o in schedule.offsets if o <= duration] or [schedule.offsets[0]]
        schedule = ArrivalSchedule(tuple(kept), seed=schedule.seed,
                                   distribution=schedule.distribution,
                                   rate=schedule.rate)
        count = len(kept)
    scenario_out = BenchmarkScenario(kind="online", arrival=arrival,
                                     request_count=count,
                                     warmup_count=scenario.warmup_count)
    return WorkloadPlan(scenario=scenario_out, item_count=count,
                        schedule=schedule)


def _generate(arrival, count: int, seed: int) -> ArrivalSchedule:
    if arrival.distribution == "poisson":
        return gen_poisson(arrival.rate, count, seed)
    if arrival.distribution == "uniform":
        return gen_uniform(arrival.rate, count, seed)
    return gen_fixed(arrival.rate, count)


# ---------------------------------------------------------------------------
# Plan execution


def execute_plan(plan: WorkloadPlan, stream, items: Sequence[Mapping | bytes],
                 warmup_count: int | None = None) -> list[Measurement]:
    """Send a plan's items down an open predict stream and collect results.

    ``stream`` is a client stream call (``send_item`` / ``finish_sending`` /
    ``items()`` / ``result()``). ``items`` supplies the raw inputs — bytes
    payloads or TensorValue bodies — reused cyclically when shorter than
    the plan. Returns per-request measurements in sequence order.
    """
    if plan.item_count < 1:
        raise EmptyWorkload("plan contains no items")
    if not items:
        raise EmptyWorkload("no input items supplied")
    if warmup_count is None:
        warmup_count = plan.scenario.warmup_count
    offsets = plan.schedule.offsets_ns() if plan.schedule is not None else None

    for sequence in range(plan.item_count):
        payload = items[sequence % len(items)]
        fields: dict = {"sequence": sequence,
                        "warmup": sequence < warmup_count}
        if offsets is not None:
            fields["scheduled_ns"] = offsets[sequence]
        if isinstance(payload, (bytes, bytearray)):
            fields["payload_b64"] = base64.b64encode(bytes(payload)).decode("ascii")
        else:
            fields["tensor"] = dict(payload)
        stream.send_item(InputItem(**fields))
    stream.finish_sending()

    results: list[ResultItem] = []
    try:
        for msg in stream.items():
            if isinstance(msg, ResultItem):
                results.append(msg)
        stream.result()  # the final response; raises on typed errors
    except PipelineError as exc:
        # Wire-decoded errors carry only the rendered message, not the
        # structured sequence attribute.
        raise AgentError(str(exc),
                         request_index=getattr(exc, "sequence", None)) from exc
    except AgentError:
        raise
    except BenchrigError as exc:
        raise AgentError(str(exc)) from exc
    return measurements_from_results(results, warmup_count, offsets)


def measurements_from_results(results: Iterable[ResultItem],
                              warmup_count: int,
                              offsets_ns: Sequence[int] | None = None
                              ) -> list[Measurement]:
    """Expand per-batch results into per-request measurement rows.

    Lateness (online only) is anchored at the first issue: the schedule
    origin is taken to be ``first_issue − first_offset``.
    """
    rows: list[Measurement] = []
    origin_ns: int | None = None
    ordered = sorted(results, key=lambda r: r.sequence)
    for result in ordered:
        for seq in result.item_sequences:
            lateness = 0
            if offsets_ns is not None and seq < len(offsets_ns):
                if origin_ns is None:
                    origin_ns = result.start_ns - offsets_ns[seq]
                expected = origin_ns + offsets_ns[seq]
                lateness = max(0, result.start_ns - expected)
            rows.append(Measurement(
                sequence=seq,
                issue_time_ns=result.start_ns,
                latency_ns=max(0, result.end_ns - result.start_ns),
                batch_size=result.batch_size,
                lateness_ns=lateness,
                warmup=seq < warmup_count,
                success=result.success,
            ))
    rows.sort(key=lambda m: m.sequence)
    return rows
