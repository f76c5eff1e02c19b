"""Trace store semantics: idempotent publishing, order independence,
clock-domain purity, containment flags, orphan synthesis, level filtering,
and span correlation."""

import json
import random
import threading

import pytest

from benchrig.errors import MalformedSpan, UnknownTrace
from benchrig.ids import ZERO_SPAN_ID, derive_span_id, derive_trace_id
from benchrig.protocol import TraceLevel
from benchrig.tracer import (
    SpanRecorder,
    TraceSpan,
    TraceStore,
    TracerClient,
    correlate,
    dominant_child,
    filter_level,
    start_tracer_server,
)

TRACE = derive_trace_id("m", "1.0.0", "fp", 7)


def span(sid: str, name: str, level: TraceLevel, start: int, end: int,
         parent: str | None = None, domain: str = "wall",
         trace: str = TRACE, **attrs) -> TraceSpan:
    return TraceSpan(trace_id=trace, span_id=sid, name=name, level=level,
                     start_ns=start, end_ns=end, clock_domain=domain,
                     parent_span_id=parent,
                     attributes={k: str(v) for k, v in attrs.items()})


def sid(n: int) -> str:
    return f"{n:016x}"


# -- validation -------------------------------------------------------------------

def test_span_id_format_enforced():
    with pytest.raises(MalformedSpan):
        span("xyz", "a", TraceLevel.MODEL, 0, 1).validate()
    with pytest.raises(MalformedSpan):
        TraceSpan(trace_id="short", span_id=sid(1), name="a",
                  level=TraceLevel.MODEL, start_ns=0, end_ns=1).validate()


def test_zero_span_id_is_reserved():
    with pytest.raises(MalformedSpan):
        span(ZERO_SPAN_ID, "a", TraceLevel.MODEL, 0, 1).validate()


def test_span_invariants():
    with pytest.raises(MalformedSpan):  # end before start
        span(sid(1), "a", TraceLevel.MODEL, 10, 5).validate()
    with pytest.raises(MalformedSpan):  # empty name
        span(sid(1), "", TraceLevel.MODEL, 0, 1).validate()
    with pytest.raises(MalformedSpan):  # NONE is not a span level
        span(sid(1), "a", TraceLevel.NONE, 0, 1).validate()
    with pytest.raises(MalformedSpan):  # FULL is not a span level either
        span(sid(1), "a", TraceLevel.FULL, 0, 1).validate()
    with pytest.raises(MalformedSpan):  # self-parent
        span(sid(1), "a", TraceLevel.MODEL, 0, 1, parent=sid(1)).validate()
    with pytest.raises(MalformedSpan):  # bad domain
        span(sid(1), "a", TraceLevel.MODEL, 0, 1, domain="cpu").validate()
    span(sid(1), "a", TraceLevel.MODEL, 0, 0).validate()  # zero length is fine


# -- publish ----------------------------------------------------------------------

def _forest() -> list[TraceSpan]:
    root = span(sid(1), "evaluation", TraceLevel.MODEL, 0, 1000)
    layers = [span(sid(10 + i), f"layer_{i}", TraceLevel.FRAMEWORK,
                   i * 100, (i + 1) * 100, parent=sid(1)) for i in range(10)]
    kernels = [span(sid(100 + i), f"kernel_{i}", TraceLevel.SYSTEM,
                    i * 100 + 10, i * 100 + 60, parent=sid(10 + i)) for i in range(10)]
    return [root] + layers + kernels


def test_publish_and_assemble():
    store = TraceStore()
    result = store.publish(_forest())
    assert (result.stored, result.duplicates, result.rejected) == (21, 0, ())
    timeline = store.assemble(TRACE)
    assert timeline.span_count == 21
    assert timeline.total_duration_ns == 1000
    assert len(timeline.roots) == 1
    root = timeline.roots[0]
    assert root.span.name == "evaluation"
    assert [c.span.name for c in root.children] == [f"layer_{i}" for i in range(10)]
    assert root.children[3].children[0].span.name == "kernel_3"


def test_publish_is_idempotent_keep_first():
    store = TraceStore()
    spans = _forest()
    store.publish(spans)
    # Re-publish one span with a different name: first write wins.
    altered = span(sid(1), "evaluation_altered", TraceLevel.MODEL, 0, 1000)
    result = store.publish([altered] + spans[1:3])
    assert result.stored == 0
    assert result.duplicates == 3
    assert store.assemble(TRACE).roots[0].span.name == "evaluation"


def test_malformed_spans_rejected_individually():
    store = TraceStore()
    good = _forest()
    bad = span(sid(999), "bad", TraceLevel.MODEL, 50, 10)  # end < start
    batch = good[:2] + [bad] + good[2:]
    result = store.publish(batch)
    assert result.stored == len(good)
    assert len(result.rejected) == 1
    index, reason = result.rejected[0]
    assert index == 2
    assert "precedes" in reason


def test_clock_domain_purity_per_trace():
    store = TraceStore()
    store.publish([span(sid(1), "a", TraceLevel.MODEL, 0, 10, domain="wall")])
    result = store.publish([span(sid(2), "b", TraceLevel.MODEL, 0, 10, domain="virtual")])
    assert result.stored == 0
    assert len(result.rejected) == 1
    assert "wall" in result.rejected[0][1]
    # A different trace may use the other domain freely.
    other = derive_trace_id("m2", "1.0.0", "fp", 8)
    ok = store.publish([span(sid(1), "a", TraceLevel.MODEL, 0, 10,
                             domain="virtual", trace=other)])
    assert ok.stored == 1


def test_unknown_trace_raises():
    with pytest.raises(UnknownTrace):
        TraceStore().assemble("ab" * 16)


# -- order independence -------------------------------------------------------------

def test_reverse_order_yields_identical_timeline():
    spans = _forest()
    forward, backward = TraceStore(), TraceStore()
    forward.publish(spans)
    backward.publish(list(reversed(spans)))
    assert forward.assemble(TRACE).to_body() == backward.assemble(TRACE).to_body()


def test_ten_thousand_spans_from_four_publishers():
    # 10_000 spans: 100 roots, each with 99 children.
    spans = []
    for r in range(100):
        root_id = sid(1000 + r * 1000)
        base = r * 10_000
        spans.append(span(root_id, f"root_{r}", TraceLevel.MODEL, base, base + 9_999))
        for c in range(99):
            spans.append(span(sid(1001 + r * 1000 + c), f"child_{r}_{c}",
                              TraceLevel.FRAMEWORK, base + c * 100, base + c * 100 + 99,
                              parent=root_id))
    assert len(spans) == 10_000

    reference = TraceStore()
    reference.publish(spans)
    expected = reference.assemble(TRACE).to_body()

    shuffled = spans[:]
    random.Random(42).shuffle(shuffled)
    quarters = [shuffled[i::4] for i in range(4)]
    store = TraceStore()
    threads = [threading.Thread(target=store.publish, args=(q,)) for q in quarters]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    timeline = store.assemble(TRACE)
    assert timeline.span_count == 10_000
    assert timeline.to_body() == expected


# -- containment ---------------------------------------------------------------------

def test_wall_containment_tolerates_one_microsecond():
    store = TraceStore()
    store.publish([
        span(sid(1), "parent", TraceLevel.MODEL, 10_000, 20_000),
        span(sid(2), "inside", TraceLevel.FRAMEWORK, 11_000, 19_000, parent=sid(1)),
        span(sid(3), "at_epsilon", TraceLevel.FRAMEWORK, 11_000, 21_000, parent=sid(1)),
        span(sid(4), "overflowing", TraceLevel.FRAMEWORK, 11_000, 21_001, parent=sid(1)),
        span(sid(5), "early", TraceLevel.FRAMEWORK, 8_999, 19_000, parent=sid(1)),
    ])
    nodes = {n.span.name: n for n in store.assemble(TRACE).iter_nodes()}
    assert not nodes["inside"].overflow
    assert not nodes["at_epsilon"].overflow       # exactly 1 µs beyond: tolerated
    assert nodes["overflowing"].overflow          # 1 ns past the tolerance
    assert nodes["early"].overflow                # starts 1001 ns before the parent


def test_virtual_containment_is_exact():
    store = TraceStore()
    store.publish([
        span(sid(1), "parent", TraceLevel.MODEL, 0, 1000, domain="virtual"),
        span(sid(2), "exact", TraceLevel.FRAMEWORK, 0, 1000, parent=sid(1),
             domain="virtual"),
        span(sid(3), "over", TraceLevel.FRAMEWORK, 0, 1001, parent=sid(1),
             domain="virtual"),
    ])
    nodes = {n.span.name: n for n in store.assemble(TRACE).iter_nodes()}
    assert not nodes["exact"].overflow
    assert nodes["over"].overflow


# -- orphans and cycles ----------------------------------------------------------------

def test_orphans_gain_synthetic_root():
    store = TraceStore()
    store.publish([
        span(sid(1), "real_root", TraceLevel.MODEL, 0, 100),
        span(sid(2), "orphan_a", TraceLevel.FRAMEWORK, 10, 50, parent=sid(777)),
        span(sid(3), "orphan_b", TraceLevel.FRAMEWORK, 40, 90, parent=sid(888)),
    ])
    timeline = store.assemble(TRACE)
    assert timeline.span_count == 4  # 3 stored + 1 synthetic
    synthetic = [r for r in timeline.roots if r.span.span_id == ZERO_SPAN_ID]
    assert len(synthetic) == 1
    root = synthetic[0]
    assert root.span.name == "unparented"
    assert root.span.level is TraceLevel.MODEL
    assert root.span.attributes == {"synthetic": "true"}
    assert (root.span.start_ns, root.span.end_ns) == (10, 90)  # extent of orphans
    assert [c.span.name for c in root.children] == ["orphan_a", "orphan_b"]
    assert all(c.orphaned for c in root.children)


def test_parent_cycle_is_broken_into_orphans():
    store = TraceStore()
    store.publish([
        span(sid(1), "a", TraceLevel.MODEL, 0, 100, parent=sid(2)),
        span(sid(2), "b", TraceLevel.MODEL, 10, 90, parent=sid(1)),
    ])
    timeline = store.assemble(TRACE)
    synthetic = [r for r in timeline.roots if r.span.span_id == ZERO_SPAN_ID]
    assert len(synthetic) == 1
    (a_node,) = synthetic[0].children
    assert a_node.span.name == "a"          # earlier start becomes the orphan root
    assert a_node.orphaned
    (b_node,) = a_node.children             # rest of the cycle hangs beneath it
    assert b_node.span.name == "b"
    assert list(timeline.iter_nodes())      # iteration terminates


# -- filtering ------------------------------------------------------------------------

def _leveled_store() -> TraceStore:
    store = TraceStore()
    store.publish([
        span(sid(1), "evaluation", TraceLevel.MODEL, 0, 1000),
        span(sid(2), "layer", TraceLevel.FRAMEWORK, 100, 600, parent=sid(1)),
        span(sid(3), "kernel", TraceLevel.SYSTEM, 150, 400, parent=sid(2)),
        span(sid(4), "postprocess", TraceLevel.MODEL, 600, 900, parent=sid(1)),
    ])
    return store


def test_filter_to_framework_drops_system():
    timeline = filter_level(_leveled_store().assemble(TRACE), TraceLevel.FRAMEWORK)
    names = sorted(n.span.name for n in timeline.iter_nodes())
    assert names == ["evaluation", "layer", "postprocess"]
    assert timeline.span_count == 3


def test_filter_to_model_reparents_nested_model_spans():
    store = TraceStore()
    store.publish([
        span(sid(1), "root", TraceLevel.MODEL, 0, 1000),
        span(sid(2), "layer", TraceLevel.FRAMEWORK, 100, 900, parent=sid(1)),
        span(sid(3), "inner_step", TraceLevel.MODEL, 200, 800, parent=sid(2)),
    ])
    timeline = filter_level(store.assemble(TRACE), TraceLevel.MODEL)
    assert timeline.span_count == 2
    (root,) = timeline.roots
    assert root.span.name == "root"
    (child,) = root.children
    # The surviving grandchild is reparented to its nearest retained ancestor.
    assert child.span.name == "inner_step"
    assert child.span.parent_span_id == sid(1)


def test_filter_never_keeps_synthetic_roots():
    store = TraceStore()
    store.publish([
        span(sid(2), "orphan", TraceLevel.FRAMEWORK, 10, 50, parent=sid(777)),
    ])
    timeline = filter_level(store.assemble(TRACE), TraceLevel.FRAMEWORK)
    assert timeline.span_count == 1
    (root,) = timeline.roots
    assert root.span.name == "orphan"
    assert root.span.parent_span_id is None
    assert not any(n.span.span_id == ZERO_SPAN_ID for n in timeline.iter_nodes())


def test_filter_to_none_is_empty():
    timeline = filter_level(_leveled_store().assemble(TRACE), TraceLevel.NONE)
    assert timeline.roots == []
    assert timeline.span_count == 0
    assert timeline.total_duration_ns == 0


def test_full_filter_is_identity():
    original = _leveled_store().assemble(TRACE)
    filtered = filter_level(original, TraceLevel.FULL)
    assert filtered.to_body() == original.to_body()


# -- correlation ----------------------------------------------------------------------

def test_correlate_by_maximal_overlap():
    store = TraceStore()
    store.publish([
        span(sid(1), "root", TraceLevel.MODEL, 0, 400),
        span(sid(10), "layer_a", TraceLevel.FRAMEWORK, 0, 100, parent=sid(1)),
        span(sid(11), "layer_b", TraceLevel.FRAMEWORK, 100, 200, parent=sid(1)),
        # Kernels are published as children of the root (the profiler does not
        # know the layer hierarchy); correlation assigns them to layers by time.
        span(sid(20), "k_mostly_a", TraceLevel.SYSTEM, 40, 120, parent=sid(1)),
        span(sid(21), "k_inside_b", TraceLevel.SYSTEM, 120, 180, parent=sid(1)),
        span(sid(22), "k_tie", TraceLevel.SYSTEM, 50, 150, parent=sid(1)),
        span(sid(23), "k_outside", TraceLevel.SYSTEM, 300, 390, parent=sid(1)),
        span(sid(24), "k_instant", TraceLevel.SYSTEM, 100, 100, parent=sid(1)),
    ])
    assignments = correlate(store.assemble(TRACE), TraceLevel.FRAMEWORK,
                            TraceLevel.SYSTEM)
    by_layer = {key: sorted(s.name for s in value) for key, value in assignments.items()}
    # k_mostly_a: 60 ns in a vs 20 in b -> a. k_tie: 50/50 -> earlier parent a.
    # k_instant: zero length at the boundary -> contained by both -> earlier a.
    assert by_layer[sid(10)] == ["k_instant", "k_mostly_a", "k_tie"]
    assert by_layer[sid(11)] == ["k_inside_b"]
    # k_outside overlaps no layer and is assigned nowhere.
    assert "k_outside" not in {n for names in by_layer.values() for n in names}


def test_dominant_child_tie_breaks():
    a = span(sid(1), "beta", TraceLevel.SYSTEM, 0, 100)
    b = span(sid(2), "alpha", TraceLevel.SYSTEM, 0, 100)   # same duration
    c = span(sid(3), "alpha", TraceLevel.SYSTEM, 200, 300)  # same duration + name
    assert dominant_child([a, b]) == b            # name breaks the tie
    assert dominant_child([b, c]) == b            # span id breaks the final tie
    assert dominant_child([a, span(sid(4), "zzz", TraceLevel.SYSTEM, 0, 500)]).name == "zzz"
    assert dominant_child([]) is None


# -- persistence -----------------------------------------------------------------------

def test_snapshot_survives_restart(tmp_path):
    path = tmp_path / "spans.jsonl"
    store = TraceStore(snapshot_path=path)
    store.publish(_forest())
    expected = store.assemble(TRACE).to_body()

    reloaded = TraceStore(snapshot_path=path)
    assert reloaded.assemble(TRACE).to_body() == expected
    # Re-publishing after restart stays idempotent.
    assert reloaded.publish(_forest()).duplicates == 21


def test_snapshot_skips_corrupt_lines(tmp_path):
    path = tmp_path / "spans.jsonl"
    store = TraceStore(snapshot_path=path)
    store.publish(_forest())
    with path.open("a", encoding="utf-8") as fh:
        fh.write("{not json\n")
        fh.write(json.dumps({"trace_id": TRACE}) + "\n")  # missing fields
        fh.write("\n")
    reloaded = TraceStore(snapshot_path=path)
    assert reloaded.span_count(TRACE) == 21


# -- recorder ---------------------------------------------------------------------------

class _ListSink:
    def __init__(self):
        self.batches = []

    def publish(self, spans):
        self.batches.append(list(spans))


def test_recorder_buffers_and_flushes():
    sink = _ListSink()
    recorder = SpanRecorder(sink, flush_threshold=4)
    spans = _forest()[:6]
    for s in spans:
        recorder.record(s)
    recorder.flush()
    assert recorder.recorded_count == 6
    assert [len(b) for b in sink.batches] == [4, 2]
    assert [s for batch in sink.batches for s in batch] == spans


# -- wire service -------------------------------------------------------------------------

def test_tracer_service_over_tcp():
    server, store = start_tracer_server()
    try:
        client = TracerClient(server.endpoint)
        spans = _forest()
        response = client.publish(spans)
        assert (response.stored, response.duplicates) == (21, 0)
        # Duplicates and malformed spans are reported per-index over the wire.
        bad = span(sid(999), "bad", TraceLevel.MODEL, 50, 10)
        response = client.publish([spans[0], bad])
        assert response.duplicates == 1
        assert response.rejected[0][0] == 1

        timeline = client.timeline(TRACE)
        assert timeline.to_body() == store.assemble(TRACE).to_body()
        filtered = client.timeline(TRACE, level=TraceLevel.MODEL)
        assert filtered.span_count == 1

        assignments = client.correlate(TRACE, TraceLevel.FRAMEWORK, TraceLevel.SYSTEM)
        assert sum(len(v) for v in assignments.values()) == 10

        assert client.trace_ids() == [TRACE]
        client.close()
    finally:
        server.stop()
