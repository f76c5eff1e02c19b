"""Tracing server: span ingestion and hierarchical timeline aggregation.

Agents (and any other publisher) asynchronously publish TraceSpans; the
tracer aggregates all spans sharing a trace_id into one hierarchical
Timeline. Publishing is idempotent on (trace_id, span_id) — first write
wins. A trace lives entirely in one clock domain ("wall" or "virtual");
publishing a span in the other domain is rejected as MalformedSpan.

Containment: a child whose interval escapes its parent's interval by more
than epsilon (1 µs wall, 0 virtual) is flagged "overflow", not rejected —
asynchronous device activity legitimately outlives the span that launched it.

Spans whose parent never arrives are attached to a synthetic "unparented"
root (span id 16 zeros) and flagged orphaned.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Mapping

from .errors import MalformedSpan, UnknownTrace, ValidationError
from .ids import ZERO_SPAN_ID
from .protocol import TraceLevel, register_message

__all__ = [
    "TraceSpan",
    "TimelineNode",
    "Timeline",
    "PublishResult",
    "TraceStore",
    "filter_level",
    "correlate",
    "WALL_CONTAINMENT_EPSILON_NS",
    "TracerService",
    "TracerClient",
    "start_tracer_server",
]

WALL_CONTAINMENT_EPSILON_NS = 1_000  # 1 µs; virtual clocks get 0

_TRACE_ID_RE = re.compile(r"[0-9a-f]{32}")
_SPAN_ID_RE = re.compile(r"[0-9a-f]{16}")
_SPAN_LEVELS = (TraceLevel.MODEL, TraceLevel.FRAMEWORK, TraceLevel.SYSTEM)
_CLOCK_DOMAINS = ("wall", "virtual")


@dataclass(frozen=True)
class TraceSpan:
    """One timed, attributed interval at a level within a trace."""

    trace_id: str            # 128-bit id, 32 lowercase hex chars
    span_id: str             # 64-bit id, 16 lowercase hex chars
    name: str
    level: TraceLevel        # MODEL, FRAMEWORK, or SYSTEM
    start_ns: int
    end_ns: int
    clock_domain: str = "wall"
    parent_span_id: str | None = None
    attributes: Mapping[str, str] = field(default_factory=dict)

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns

    def validate(self) -> None:
        if not isinstance(self.trace_id, str) or _TRACE_ID_RE.fullmatch(self.trace_id) is None:
            raise MalformedSpan(f"trace_id must be 32 lowercase hex chars, got {self.trace_id!r}")
        if not isinstance(self.span_id, str) or _SPAN_ID_RE.fullmatch(self.span_id) is None:
            raise MalformedSpan(f"span_id must be 16 lowercase hex chars, got {self.span_id!r}")
        if self.span_id == ZERO_SPAN_ID:
            raise MalformedSpan("the all-zero span id is reserved for synthetic roots")
        if self.parent_span_id is not None:
            if not isinstance(self.parent_span_id, str) \
                    or _SPAN_ID_RE.fullmatch(self.parent_span_id) is None:
                raise MalformedSpan(f"parent_span_id malformed: {self.parent_span_id!r}")
            if self.parent_span_id == self.span_id:
                raise MalformedSpan("span cannot be its own parent")
        if not isinstance(self.name, str) or not self.name:
            raise MalformedSpan("span name must be a nonempty string")
        if self.level not in _SPAN_LEVELS:
            raise MalformedSpan(f"span level must be MODEL, FRAMEWORK, or SYSTEM, got {self.level}")
        if not isinstance(self.start_ns, int) or not isinstance(self.end_ns, int):
            raise MalformedSpan("span timestamps must be integers (nanoseconds)")
        if self.end_ns < self.start_ns:
            raise MalformedSpan(f"span end {self.end_ns} precedes start {self.start_ns}")
        if self.clock_domain not in _CLOCK_DOMAINS:
            raise MalformedSpan(f"clock_domain must be wall or virtual, got {self.clock_domain!r}")
        for key, value in self.attributes.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise MalformedSpan("attributes must map strings to strings")

    def to_body(self) -> dict:
        body: dict[str, Any] = {
            "trace_id": self.trace_id,
            "span_id": self.span_id,
            "name": self.name,
            "level": int(self.level),
            "start_ns": self.start_ns,
            "end_ns": self.end_ns,
            "clock_domain": self.clock_domain,
            "attributes": dict(self.attributes),
        }
        if self.parent_span_id is not None:
            body["parent_span_id"] = self.parent_span_id
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "TraceSpan":
        return cls(
            trace_id=body["trace_id"],
            span_id=body["span_id"],
            name=body["name"],
            level=TraceLevel(int(body["level"])),
            start_ns=int(body["start_ns"]),
            end_ns=int(body["end_ns"]),
            clock_domain=body.get("clock_domain", "wall"),
            parent_span_id=body.get("parent_span_id"),
            attributes=dict(body.get("attributes", {})),
        )


@dataclass
class TimelineNode:
    span: TraceSpan
    children: list["TimelineNode"] = field(default_factory=list)
    orphaned: bool = False
    overflow: bool = False

    def to_body(self) -> dict:
        body = self.span.to_body()
        body["children"] = [child.to_body() for child in self.children]
        if self.orphaned:
            body["orphaned"] = True
        if self.overflow:
            body["overflow"] = True
        return body


@dataclass
class Timeline:
    """Forest of spans for one trace, children ordered by start time."""

    trace_id: str
    clock_domain: str
    roots: list[TimelineNode]
    span_count: int
    total_duration_ns: int

    def iter_nodes(self) -> Iterator[TimelineNode]:
        stack = list(reversed(self.roots))
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def spans_at_level(self, level: TraceLevel) -> list[TraceSpan]:
        return [node.span for node in self.iter_nodes() if node.span.level is level]

    def to_body(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "clock_domain": self.clock_domain,
            "span_count": self.span_count,
            "total_duration_ns": self.total_duration_ns,
            "roots": [root.to_body() for root in self.roots],
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "Timeline":
        def node_from(entry: Mapping) -> TimelineNode:
            span = TraceSpan.from_body(entry)
            node = TimelineNode(span=span,
                                orphaned=bool(entry.get("orphaned", False)),
                                overflow=bool(entry.get("overflow", False)))
            node.children = [node_from(child) for child in entry.get("children", [])]
            return node

        return cls(
            trace_id=body["trace_id"],
            clock_domain=body["clock_domain"],
            roots=[node_from(entry) for entry in body.get("roots", [])],
            span_count=int(body["span_count"]),
            total_duration_ns=int(body["total_duration_ns"]),
        )


@dataclass(frozen=True)
class PublishResult:
    stored: int
    duplicates: int
    rejected: tuple[tuple[int, str], ...] = ()  # (index in batch, reason)


class SpanRecorder:
    """Buffers spans locally; a sink (TracerClient or TraceStore) receives them
    in batches. Publication is fire-and-forget from the pipeline's viewpoint:
    recording never blocks on the network."""

    def __init__(self, sink=None, flush_threshold: int = 512):
        self._sink = sink
        self._flush_threshold = flush_threshold
        self._lock = threading.Lock()
        self._pending: list[TraceSpan] = []
        self._recorded: list[TraceSpan] = []

    def record(self, span: TraceSpan) -> None:
        flush_now = False
        with self._lock:
            self._pending.append(span)
            self._recorded.append(span)
            flush_now = len(self._pending) >= self._flush_threshold
        if flush_now:
            self.flush()

    @property
    def recorded_count(self) -> int:
        with self._lock:
            return len(self._recorded)

    def recorded_spans(self) -> list[TraceSpan]:
        with self._lock:
            return list(self._recorded)

    def flush(self) -> int:
        with self._lock:
            pending, self._pending = self._pending, []
        if not pending or self._sink is None:
            return len(pending)
        self._sink.publish(pending)
        return len(pending)


# ---------------------------------------------------------------------------
# Store


class TraceStore:
    """Append-only span store with an optional JSON-lines snapshot file."""

    def __init__(self, snapshot_path: str | Path | None = None):
        self._lock = threading.Lock()
        self._traces: dict[str, dict[str, TraceSpan]] = {}
        self._domains: dict[str, str] = {}
        self._snapshot_path = Path(snapshot_path) if snapshot_path is not None else None
        if self._snapshot_path is not None and self._snapshot_path.exists():
            self._replay_snapshot()

    def _replay_snapshot(self) -> None:
        with self._snapshot_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    span = TraceSpan.from_body(json.loads(line))
                    span.validate()
                except (ValueError, KeyError, MalformedSpan):
                    continue  # skip corrupt lines rather than refuse to start
                self._insert(span)

    def _insert(self, span: TraceSpan) -> bool:
        """Store a validated span; returns False for an idempotent duplicate."""
        domain = self._domains.get(span.trace_id)
        if domain is None:
            self._domains[span.trace_id] = span.clock_domain
        elif domain != span.clock_domain:
            raise MalformedSpan(
                f"trace {span.trace_id} is {domain}-clock; span {span.span_id} "
                f"uses {span.clock_domain}")
        spans = self._traces.setdefault(span.trace_id, {})
        if span.span_id in spans:
            return False
        spans[span.span_id] = span
        return True

    def publish(self, spans: list[TraceSpan]) -> PublishResult:
        stored = 0
        duplicates = 0
        rejected: list[tuple[int, str]] = []
        appended: list[TraceSpan] = []
        with self._lock:
            for index, span in enumerate(spans):
                try:
                    span.validate()
                    if self._insert(span):
                        stored += 1
                        appended.append(span)
                    else:
                        duplicates += 1
                except MalformedSpan as exc:
                    rejected.append((index, str(exc)))
            if appended and self._snapshot_path is not None:
                with self._snapshot_path.open("a", encoding="utf-8") as fh:
                    for span in appended:
                        fh.write(json.dumps(span.to_body(), sort_keys=True) + "\n")
        return PublishResult(stored=stored, duplicates=duplicates, rejected=tuple(rejected))

    def trace_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._traces)

    def span_count(self, trace_id: str) -> int:
        with self._lock:
            return len(self._traces.get(trace_id, {}))

    def assemble(self, trace_id: str) -> Timeline:
        """Build the hierarchical timeline for a trace from a consistent snapshot."""
        with self._lock:
            spans = dict(self._traces.get(trace_id, {}))
            domain = self._domains.get(trace_id)
        if not spans:
            raise UnknownTrace(f"no spans published for trace {trace_id!r}")
        return _build_timeline(trace_id, domain, list(spans.values()))


def _sort_key(span: TraceSpan) -> tuple:
    return (span.start_ns, span.span_id)


def _epsilon_for(domain: str) -> int:
    return 0 if domain == "virtual" else WALL_CONTAINMENT_EPSILON_NS


def _build_timeline(trace_id: str, domain: str, spans: list[TraceSpan]) -> Timeline:
    by_id = {span.span_id: span for span in spans}
    nodes = {span.span_id: TimelineNode(span=span) for span in spans}
    roots: list[TimelineNode] = []
    orphans: list[TimelineNode] = []

    for span in sorted(spans, key=_sort_key):
        node = nodes[span.span_id]
        if span.parent_span_id is None:
            roots.append(node)
        elif span.parent_span_id in by_id:
            nodes[span.parent_span_id].children.append(node)
        else:
            node.orphaned = True
            orphans.append(node)

    # Anything unreachable from a root or orphan (a parent cycle) is treated
    # as orphaned too, keeping the result a forest.
    reachable: set[str] = set()
    stack = [node.span.span_id for node in roots + orphans]
    while stack:
        span_id = stack.pop()
        if span_id in reachable:
            continue
        reachable.add(span_id)
        stack.extend(child.span.span_id for child in nodes[span_id].children)
    for span in sorted(spans, key=_sort_key):
        if span.span_id not in reachable:
            node = nodes[span.span_id]
            # Break the cycle: detach this node from its (cyclic) parent and
            # make it an orphan root; the rest of the cycle stays its subtree.
            parent_node = nodes.get(span.parent_span_id)
            if parent_node is not None and node in parent_node.children:
                parent_node.children.remove(node)
            node.orphaned = True
            orphans.append(node)
            stack = [span.span_id]
            while stack:
                sid = stack.pop()
                if sid in reachable:
                    continue
                reachable.add(sid)
                stack.extend(child.span.span_id for child in nodes[sid].children)

    if orphans:
        start = min(node.span.start_ns for node in orphans)
        end = max(node.span.end_ns for node in orphans)
        synthetic = TraceSpan(
            trace_id=trace_id,
            span_id=ZERO_SPAN_ID,
            name="unparented",
            level=TraceLevel.MODEL,
            start_ns=start,
            end_ns=end,
            clock_domain=domain or "wall",
            parent_span_id=None,
            attributes={"synthetic": "true"},
        )
        synthetic_node = TimelineNode(span=synthetic, children=orphans)
        roots.append(synthetic_node)

    epsilon = _epsilon_for(domain or "wall")
    ordered_roots = sorted(roots, key=lambda n: _sort_key(n.span))

    stack = list(ordered_roots)
    while stack:  # iterative so arbitrarily deep traces cannot overflow the stack
        node = stack.pop()
        node.children.sort(key=lambda n: _sort_key(n.span))
        for child in node.children:
            if child.span.start_ns < node.span.start_ns - epsilon \
                    or child.span.end_ns > node.span.end_ns + epsilon:
                child.overflow = True
            stack.append(child)

    all_spans = list(by_id.values())
    total = max(s.end_ns for s in all_spans) - min(s.start_ns for s in all_spans)
    span_count = len(all_spans) + (1 if orphans else 0)
    return Timeline(trace_id=trace_id, clock_domain=domain or "wall",
                    roots=ordered_roots, span_count=span_count,
                    total_duration_ns=total)


# ---------------------------------------------------------------------------
# Level filtering


def filter_level(timeline: Timeline, level: TraceLevel) -> Timeline:
    """Retain spans captured at ``level``; grandchildren of removed spans are
    reparented to their nearest retained ancestor."""
    captured = level.captures()
    kept: list[TraceSpan] = []

    # Synthetic "unparented" roots are an assembly artifact, never kept;
    # their surviving children become plain roots of the filtered forest.
    stack: list[tuple[TimelineNode, str | None]] = [
        (root, None) for root in reversed(timeline.roots)]
    while stack:
        node, nearest_kept = stack.pop()
        if node.span.span_id != ZERO_SPAN_ID and node.span.level in captured:
            kept.append(replace(node.span, parent_span_id=nearest_kept))
            parent_for_children = node.span.span_id
        else:
            parent_for_children = nearest_kept
        stack.extend((child, parent_for_children) for child in reversed(node.children))

    if not kept:
        return Timeline(trace_id=timeline.trace_id, clock_domain=timeline.clock_domain,
                        roots=[], span_count=0, total_duration_ns=0)
    return _build_timeline(timeline.trace_id, timeline.clock_domain, kept)


# ---------------------------------------------------------------------------
# Correlation


def _overlap_ns(child: TraceSpan, parent: TraceSpan) -> int:
    if child.start_ns == child.end_ns:
        # Zero-length child: contained iff the instant lies in the parent.
        return 1 if parent.start_ns <= child.start_ns <= parent.end_ns else 0
    return min(child.end_ns, parent.end_ns) - max(child.start_ns, parent.start_ns)


def correlate(timeline: Timeline, parent_level: TraceLevel,
              child_level: TraceLevel) -> dict[str, list[TraceSpan]]:
    """Assign each child-level span to the parent-level span with maximal
    temporal overlap; ties go to the earlier-starting, then smaller-id parent.
    Zero-overlap children are assigned to no parent."""
    parents = [node.span for node in timeline.iter_nodes()
               if node.span.level is parent_level and node.span.span_id != ZERO_SPAN_ID]
    children = [node.span for node in timeline.iter_nodes()
                if node.span.level is child_level and node.span.span_id != ZERO_SPAN_ID]
    result: dict[str, list[TraceSpan]] = {parent.span_id: [] for parent in parents}
    ordered_parents = sorted(parents, key=_sort_key)
    for child in sorted(children, key=_sort_key):
        best: TraceSpan | None = None
        best_overlap = 0
        for parent in ordered_parents:
            overlap = _overlap_ns(child, parent)
            if overlap > best_overlap:
                best = parent
                best_overlap = overlap
        if best is not None:
            result[best.span_id].append(child)
    return result


def dominant_child(children: list[TraceSpan]) -> TraceSpan | None:
    """Longest child; ties broken by lexicographic name, then span id."""
    if not children:
        return None
    return min(children, key=lambda s: (-s.duration_ns, s.name, s.span_id))


# ---------------------------------------------------------------------------
# Wire service


@register_message("publish_spans_request")
@dataclass(frozen=True)
class PublishSpansRequest:
    """Carries raw span bodies so an undecodable span is rejected
    individually instead of failing the whole batch."""

    span_bodies: tuple[Mapping, ...]

    @classmethod
    def from_spans(cls, spans: list[TraceSpan]) -> "PublishSpansRequest":
        return cls(span_bodies=tuple(span.to_body() for span in spans))

    def to_body(self) -> dict:
        return {"spans": [dict(body) for body in self.span_bodies]}

    @classmethod
    def from_body(cls, body: Mapping) -> "PublishSpansRequest":
        spans = body.get("spans", [])
        if not isinstance(spans, list):
            raise ValidationError("spans", "must be a list of span objects")
        return cls(span_bodies=tuple(spans))


@register_message("publish_spans_response")
@dataclass(frozen=True)
class PublishSpansResponse:
    stored: int
    duplicates: int
    rejected: tuple[tuple[int, str], ...] = ()

    def to_body(self) -> dict:
        return {"stored": self.stored, "duplicates": self.duplicates,
                "rejected": [[index, reason] for index, reason in self.rejected]}

    @classmethod
    def from_body(cls, body: Mapping) -> "PublishSpansResponse":
        return cls(stored=int(body["stored"]), duplicates=int(body["duplicates"]),
                   rejected=tuple((int(i), str(r)) for i, r in body.get("rejected", [])))


@register_message("get_timeline_request")
@dataclass(frozen=True)
class GetTimelineRequest:
    trace_id: str
    level: int | None = None  # optional TraceLevel filter applied server-side

    def to_body(self) -> dict:
        body: dict[str, Any] = {"trace_id": self.trace_id}
        if self.level is not None:
            body["level"] = self.level
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "GetTimelineRequest":
        level = body.get("level")
        return cls(trace_id=body["trace_id"], level=int(level) if level is not None else None)


@register_message("timeline_response")
@dataclass(frozen=True)
class TimelineResponse:
    timeline: Mapping

    def to_body(self) -> dict:
        return {"timeline": dict(self.timeline)}

    @classmethod
    def from_body(cls, body: Mapping) -> "TimelineResponse":
        return cls(timeline=body["timeline"])


@register_message("correlate_request")
@dataclass(frozen=True)
class CorrelateRequest:
    trace_id: str
    parent_level: int
    child_level: int

    def to_body(self) -> dict:
        return {"trace_id": self.trace_id, "parent_level": self.parent_level,
                "child_level": self.child_level}

    @classmethod
    def from_body(cls, body: Mapping) -> "CorrelateRequest":
        return cls(trace_id=body["trace_id"], parent_level=int(body["parent_level"]),
                   child_level=int(body["child_level"]))


@register_message("correlate_response")
@dataclass(frozen=True)
class CorrelateResponse:
    assignments: Mapping  # parent span_id -> list of child span bodies

    def to_body(self) -> dict:
        return {"assignments": dict(self.assignments)}

    @classmethod
    def from_body(cls, body: Mapping) -> "CorrelateResponse":
        return cls(assignments=body.get("assignments", {}))


@register_message("list_traces_request")
@dataclass(frozen=True)
class ListTracesRequest:
    def to_body(self) -> dict:
        return {}

    @classmethod
    def from_body(cls, body: Mapping) -> "ListTracesRequest":
        return cls()


@register_message("list_traces_response")
@dataclass(frozen=True)
class ListTracesResponse:
    trace_ids: tuple[str, ...]

    def to_body(self) -> dict:
        return {"trace_ids": list(self.trace_ids)}

    @classmethod
    def from_body(cls, body: Mapping) -> "ListTracesResponse":
        return cls(trace_ids=tuple(body.get("trace_ids", ())))


class TracerService:
    """RPC handlers over a TraceStore."""

    def __init__(self, store: TraceStore):
        self.store = store

    def handlers(self) -> dict:
        return {
            PublishSpansRequest: self._publish,
            GetTimelineRequest: self._timeline,
            CorrelateRequest: self._correlate,
            ListTracesRequest: self._list_traces,
        }

    def _publish(self, call) -> PublishSpansResponse:
        spans: list[TraceSpan] = []
        positions: list[int] = []
        rejected: list[tuple[int, str]] = []
        for index, body in enumerate(call.request.span_bodies):
            try:
                spans.append(TraceSpan.from_body(body))
                positions.append(index)
            except (KeyError, TypeError, ValueError) as exc:
                rejected.append((index, f"undecodable span: {exc}"))
        result = self.store.publish(spans)
        rejected.extend((positions[i], reason) for i, reason in result.rejected)
        rejected.sort()
        return PublishSpansResponse(stored=result.stored, duplicates=result.duplicates,
                                    rejected=tuple(rejected))

    def _timeline(self, call) -> TimelineResponse:
        timeline = self.store.assemble(call.request.trace_id)
        if call.request.level is not None:
            timeline = filter_level(timeline, TraceLevel(call.request.level))
        return TimelineResponse(timeline=timeline.to_body())

    def _correlate(self, call) -> CorrelateResponse:
        timeline = self.store.assemble(call.request.trace_id)
        assignments = correlate(timeline, TraceLevel(call.request.parent_level),
                                TraceLevel(call.request.child_level))
        return CorrelateResponse(assignments={
            parent: [span.to_body() for span in children]
            for parent, children in assignments.items()
        })

    def _list_traces(self, call) -> ListTracesResponse:
        return ListTracesResponse(trace_ids=tuple(self.store.trace_ids()))


def start_tracer_server(store: TraceStore | None = None, host: str = "127.0.0.1",
                        port: int = 0):
    """Start an RPC tracer server; returns (server, store)."""
    from .protocol import RpcServer

    store = store if store is not None else TraceStore()
    server = RpcServer(TracerService(store).handlers(), host=host, port=port).start()
    return server, store


class TracerClient:
    """Client for the tracer RPC service."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        from .protocol import RpcClient

        self._client = RpcClient.for_endpoint(endpoint, timeout=timeout)

    def publish(self, spans: list[TraceSpan]) -> PublishSpansResponse:
        return self._client.call(PublishSpansRequest.from_spans(spans))

    def timeline(self, trace_id: str, level: TraceLevel | None = None) -> Timeline:
        response = self._client.call(GetTimelineRequest(
            trace_id=trace_id, level=int(level) if level is not None else None))
        return Timeline.from_body(response.timeline)

    def correlate(self, trace_id: str, parent_level: TraceLevel,
                  child_level: TraceLevel) -> dict[str, list[TraceSpan]]:
        response = self._client.call(CorrelateRequest(
            trace_id=trace_id, parent_level=int(parent_level),
            child_level=int(child_level)))
        return {
            parent: [TraceSpan.from_body(entry) for entry in children]
            for parent, children in response.assignments.items()
        }

    def trace_ids(self) -> list[str]:
        return list(self._client.call(ListTracesRequest()).trace_ids)

    def close(self) -> None:
        self._client.close()
