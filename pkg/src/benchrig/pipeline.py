"""The evaluation pipeline: a chain of concurrent operators.

One evaluation runs input items through

    source → input steps (decode, resize, ...) → batcher → predict
           → output steps (argsort, ...) → sink

Every operator runs on its own thread; neighbors are connected by bounded
queues (capacity 2) so a fast producer overlaps with, but never outruns,
its consumer — except admission for online scenarios, which is unbounded so
that issuing request *i+1* never waits on downstream progress (open-loop
integrity; lateness is recorded, work is never dropped).

Timestamps live in one of two clock domains:

* ``wall`` — operators stamp real clock readings around real work.
* ``virtual`` — logical time: each operator keeps a ``free`` cursor and
  schedules work at ``max(free, item_ready)`` plus a configured cost
  (source cost, predictor latency model). Thread interleaving cannot
  perturb virtual timestamps, so a fixed configuration replays to a
  byte-identical timeline.

With tracing at MODEL level or above, each (item, stage) pair emits exactly
one model-level span, parented on the evaluation root span with the item's
``sequence`` and ``batch_index`` as attributes; the predict stage emits one
span per batch covering its items. Operator failures abort the evaluation
with :class:`~benchrig.errors.PipelineError` naming the operator and the
item sequence being processed.
"""

from __future__ import annotations

import base64
import queue
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

import numpy as np

from .clock import Clock, WallClock
from .errors import BenchrigError, PipelineError, ValidationError
from .ids import derive_span_id
from .predictor import ModelHandle, PredictCall, Predictor
from .protocol import (
    BenchmarkScenario,
    InputItem,
    PredictOptions,
    ResultItem,
    TraceLevel,
)
from .tensors import TensorValue
from .tracer import SpanRecorder, TraceSpan

__all__ = ["PipelineRun", "BUFFER_CAPACITY"]

BUFFER_CAPACITY = 2

_DONE = object()  # end-of-stream sentinel flowing through operator queues


@dataclass
class _WorkItem:
    sequence: int
    scheduled_ns: int
    warmup: bool
    batch_index: int
    value: Any = None            # bytes → ndarray → per-item output
    ready_ns: int = 0            # completion time of the last finished stage
    issue_ns: int = 0
    batch_start_ns: int = 0
    batch_end_ns: int = 0
    final_end_ns: int = 0
    output_summary: Any = None


@dataclass
class _Batch:
    index: int
    items: list


class PipelineRun:
    """One evaluation's operator chain over a loaded model handle."""

    def __init__(self, *,
                 predictor: Predictor,
                 handle: ModelHandle,
                 options: PredictOptions,
                 scenario: BenchmarkScenario,
                 input_steps: list[tuple[str, Callable]],
                 output_steps: list[tuple[str, Callable]],
                 element_type: str,
                 trace_id: str,
                 root_span_id: str,
                 recorder: SpanRecorder | None,
                 captures: frozenset,
                 clock_domain: str,
                 t0_ns: int,
                 clock: Clock | None = None,
                 source_cost_ns: int = 0):
        self._predictor = predictor
        self._handle = handle
        self._options = options
        self._scenario = scenario
        self._input_steps = _dedupe_stage_names(input_steps)
        self._output_steps = _dedupe_stage_names(output_steps)
        self._element_type = element_type
        self._trace_id = trace_id
        self._root_span_id = root_span_id
        self._recorder = recorder
        self._captures = captures
        self._domain = clock_domain
        self._clock = clock or WallClock()
        self._t0_ns = t0_ns
        self._source_cost_ns = source_cost_ns
        self._virtual = clock_domain == "virtual"
        self._online = scenario.kind == "online"
        self._batch_size = scenario.batch_size if scenario.kind == "batched" else 1

        self._stop = threading.Event()
        self._errors: list[BenchrigError] = []
        self._error_lock = threading.Lock()

        self.item_count = 0
        self.batch_count = 0
        self.last_end_ns = t0_ns

    # -- public -----------------------------------------------------------

    @property
    def stage_names(self) -> list[str]:
        """MODEL-level stages, in flow order, that emit per-item spans."""
        return (["source"] + [name for name, _ in self._input_steps]
                + ["predict"] + [name for name, _ in self._output_steps])

    def run(self, items: Iterable[InputItem]) -> Iterator[ResultItem]:
        """Drive the chain; yields ResultItems in batch order.

        Raises the first operator failure as PipelineError after all
        operator threads have stopped.
        """
        # Admission for online scenarios is unbounded: issue timing must
        # never be backpressured by downstream stages (open-loop contract).
        first_capacity = 0 if self._online else BUFFER_CAPACITY
        to_steps = queue.Queue(maxsize=first_capacity)
        to_batcher = queue.Queue(maxsize=BUFFER_CAPACITY)
        to_predict = queue.Queue(maxsize=BUFFER_CAPACITY)
        to_post = queue.Queue(maxsize=BUFFER_CAPACITY)
        to_sink = queue.Queue(maxsize=BUFFER_CAPACITY)
        results: queue.Queue = queue.Queue()

        threads = [
            threading.Thread(target=self._source_op, args=(items, to_steps),
                             name="pipeline-source", daemon=True),
            threading.Thread(target=self._steps_op, args=(to_steps, to_batcher),
                             name="pipeline-steps", daemon=True),
            threading.Thread(target=self._batcher_op, args=(to_batcher, to_predict),
                             name="pipeline-batcher", daemon=True),
            threading.Thread(target=self._predict_op, args=(to_predict, to_post),
                             name="pipeline-predict", daemon=True),
            threading.Thread(target=self._post_op, args=(to_post, to_sink),
                             name="pipeline-post", daemon=True),
            threading.Thread(target=self._sink_op, args=(to_sink, results),
                             name="pipeline-sink", daemon=True),
        ]
        for thread in threads:
            thread.start()
        try:
            while True:
                out = results.get()
                if out is _DONE:
                    break
                yield out
        finally:
            self._stop.set()
            for thread in threads:
                thread.join(timeout=30.0)
        if self._errors:
            raise self._errors[0]

    # -- shared plumbing ----------------------------------------------------

    def _fail(self, operator: str, sequence: int, exc: Exception) -> None:
        error = exc if isinstance(exc, PipelineError) else PipelineError(
            operator, sequence, f"{type(exc).__name__}: {exc}")
        with self._error_lock:
            self._errors.append(error)
        self._stop.set()

    def _put(self, target: queue.Queue, item) -> bool:
        while not self._stop.is_set():
            try:
                target.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def _get(self, source: queue.Queue):
        while not self._stop.is_set():
            try:
                return source.get(timeout=0.05)
            except queue.Empty:
                continue
        return _DONE

    def _emit_stage_span(self, stage: str, item: _WorkItem,
                         start_ns: int, end_ns: int) -> None:
        if self._recorder is None or TraceLevel.MODEL not in self._captures:
            return
        self._recorder.record(TraceSpan(
            trace_id=self._trace_id,
            span_id=derive_span_id(self._trace_id, "stage", stage, item.sequence),
            parent_span_id=self._root_span_id,
            name=stage,
            level=TraceLevel.MODEL,
            start_ns=start_ns,
            end_ns=end_ns,
            clock_domain=self._domain,
            attributes={"sequence": str(item.sequence),
                        "batch_index": str(item.batch_index)},
        ))

    # -- operators ----------------------------------------------------------

    def _source_op(self, items: Iterable[InputItem], downstream: queue.Queue) -> None:
        sequence = -1
        free_ns = self._t0_ns
        try:
            for raw in items:
                if self._stop.is_set():
                    return
                sequence = raw.sequence
                work = _WorkItem(
                    sequence=raw.sequence,
                    scheduled_ns=raw.scheduled_ns,
                    warmup=raw.warmup,
                    batch_index=(raw.sequence // self._batch_size
                                 if not self._online else raw.sequence),
                )
                scheduled_abs = self._t0_ns + raw.scheduled_ns
                if self._virtual:
                    start = max(free_ns, scheduled_abs)
                    end = start + self._source_cost_ns
                    free_ns = end
                else:
                    if raw.scheduled_ns > 0:
                        self._clock.sleep_until_ns(scheduled_abs)
                    start = self._clock.now_ns()
                    end = start
                work.value = _materialize(raw)
                if not self._virtual:
                    end = self._clock.now_ns()
                work.issue_ns = start
                work.ready_ns = end
                self._emit_stage_span("source", work, start, end)
                if not self._put(downstream, work):
                    return
            self._put(downstream, _DONE)
        except Exception as exc:
            self._fail("source", sequence, exc)

    def _steps_op(self, upstream: queue.Queue, downstream: queue.Queue) -> None:
        free_ns = self._t0_ns
        sequence = -1
        try:
            while True:
                work = self._get(upstream)
                if work is _DONE:
                    self._put(downstream, _DONE)
                    return
                sequence = work.sequence
                for stage, fn in self._input_steps:
                    if self._virtual:
                        start = max(free_ns, work.ready_ns)
                        end = start
                        free_ns = end
                        work.value = fn(work.value)
                    else:
                        start = self._clock.now_ns()
                        work.value = fn(work.value)
                        end = self._clock.now_ns()
                    work.ready_ns = end
                    self._emit_stage_span(stage, work, start, end)
                if not self._put(downstream, work):
                    return
        except Exception as exc:
            self._fail("steps", sequence, exc)

    def _batcher_op(self, upstream: queue.Queue, downstream: queue.Queue) -> None:
        pending: list[_WorkItem] = []
        batch_index = 0
        try:
            while True:
                work = self._get(upstream)
                if work is _DONE:
                    if pending:
                        if not self._put(downstream, _Batch(batch_index, pending)):
                            return
                    self._put(downstream, _DONE)
                    return
                pending.append(work)
                if len(pending) >= self._batch_size:
                    if not self._put(downstream, _Batch(batch_index, pending)):
                        return
                    pending = []
                    batch_index += 1
        except Exception as exc:
            seq = pending[-1].sequence if pending else -1
            self._fail("batcher", seq, exc)

    def _predict_op(self, upstream: queue.Queue, downstream: queue.Queue) -> None:
        free_ns = self._t0_ns
        sequence = -1
        try:
            while True:
                batch = self._get(upstream)
                if batch is _DONE:
                    self._put(downstream, _DONE)
                    return
                sequence = batch.items[0].sequence
                stacked = np.stack([item.value for item in batch.items])
                stacked = _cast(stacked, self._element_type)
                tensor = TensorValue.from_numpy(stacked)
                span_id = derive_span_id(self._trace_id, "predict", "batch",
                                         batch.index)
                if self._virtual:
                    start = max(free_ns, max(i.ready_ns for i in batch.items))
                else:
                    start = self._clock.now_ns()
                call = PredictCall(parent_span_id=span_id,
                                   sequence_key=f"batch{batch.index}",
                                   start_ns=start)
                self._handle.call = call
                try:
                    output = self._predictor.predict(self._handle, tensor,
                                                     self._options)
                finally:
                    self._handle.call = None
                if self._virtual:
                    end = call.end_ns
                    if end is None:
                        latency = self._predictor.virtual_latency_ns(
                            self._handle, len(batch.items))
                        end = start + (latency or 0)
                    free_ns = end
                else:
                    end = max(self._clock.now_ns(), start)
                rows = output.to_numpy()
                if rows.shape[0] != len(batch.items):
                    raise ValidationError(
                        "predict", f"predictor returned {rows.shape[0]} rows "
                                   f"for a batch of {len(batch.items)}")
                for row_index, item in enumerate(batch.items):
                    item.value = rows[row_index]
                    item.batch_start_ns = start
                    item.batch_end_ns = end
                    item.ready_ns = end
                self.batch_count += 1
                if self._recorder is not None and TraceLevel.MODEL in self._captures:
                    self._recorder.record(TraceSpan(
                        trace_id=self._trace_id,
                        span_id=span_id,
                        parent_span_id=self._root_span_id,
                        name="predict",
                        level=TraceLevel.MODEL,
                        start_ns=start,
                        end_ns=end,
                        clock_domain=self._domain,
                        attributes={
                            "batch_index": str(batch.index),
                            "batch_size": str(len(batch.items)),
                            "sequences": ",".join(
                                str(i.sequence) for i in batch.items),
                        },
                    ))
                if not self._put(downstream, batch):
                    return
        except Exception as exc:
            self._fail("predict", sequence, exc)

    def _post_op(self, upstream: queue.Queue, downstream: queue.Queue) -> None:
        free_ns = self._t0_ns
        sequence = -1
        try:
            while True:
                batch = self._get(upstream)
                if batch is _DONE:
                    self._put(downstream, _DONE)
                    return
                for item in batch.items:
                    sequence = item.sequence
                    for stage, fn in self._output_steps:
                        if self._virtual:
                            start = max(free_ns, item.ready_ns)
                            end = start
                            free_ns = end
                            item.value = fn(item.value)
                        else:
                            start = self._clock.now_ns()
                            item.value = fn(item.value)
                            end = self._clock.now_ns()
                        item.ready_ns = end
                        self._emit_stage_span(stage, item, start, end)
                    item.final_end_ns = item.ready_ns
                    item.output_summary = _summarize_output(item.value)
                if not self._put(downstream, batch):
                    return
        except Exception as exc:
            self._fail("postprocess", sequence, exc)

    def _sink_op(self, upstream: queue.Queue, results: queue.Queue) -> None:
        try:
            while True:
                batch = self._get(upstream)
                if batch is _DONE:
                    results.put(_DONE)
                    return
                items = batch.items
                end_ns = max(i.final_end_ns for i in items)
                self.item_count += len(items)
                self.last_end_ns = max(self.last_end_ns, end_ns)
                # Online: latency is measured from the item's issue, so
                # queueing behind a busy predictor counts against it.
                # Batched (closed loop): from the batch dispatch.
                start_ns = (items[0].issue_ns if self._online
                            else items[0].batch_start_ns)
                results.put(ResultItem(
                    sequence=batch.index,
                    item_sequences=tuple(i.sequence for i in items),
                    batch_size=len(items),
                    start_ns=start_ns,
                    end_ns=end_ns,
                    warmup=all(i.warmup for i in items),
                    success=True,
                    outputs=tuple(i.output_summary for i in items),
                ))
        except Exception as exc:
            self._fail("sink", -1, exc)
            results.put(_DONE)


# ---------------------------------------------------------------------------
# Helpers


def _dedupe_stage_names(steps: list[tuple[str, Callable]]) -> list[tuple[str, Callable]]:
    """Suffix repeated stage names so span ids stay unique per (item, stage)."""
    seen: dict[str, int] = {}
    out = []
    for name, fn in steps:
        seen[name] = seen.get(name, 0) + 1
        out.append((name if seen[name] == 1 else f"{name}_{seen[name]}", fn))
    return out


def _materialize(raw: InputItem):
    if raw.tensor is not None:
        return TensorValue.from_body(raw.tensor).to_numpy()
    if raw.payload_b64:
        return base64.b64decode(raw.payload_b64.encode("ascii"))
    raise ValidationError(
        "input_item", f"item {raw.sequence} carries neither payload nor tensor")


def _cast(stacked: np.ndarray, element_type: str) -> np.ndarray:
    dtype = np.float32 if element_type == "float32" else np.uint8
    if stacked.dtype != dtype:
        stacked = stacked.astype(dtype)
    return stacked


def _summarize_output(value) -> Any:
    """JSON-safe per-item output: ranked labels stay (top 5), tensors digest."""
    if isinstance(value, list):  # ranked (label, score) pairs from argsort
        return [[label, float(score)] for label, score in value[:5]]
    array = np.asarray(value)
    return {"shape": [int(d) for d in array.shape],
            "element_type": str(array.dtype)}
