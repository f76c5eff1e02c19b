"""Summary statistics and reports over evaluation results and timelines.

Everything here is pure computation: measurements and timelines in,
summary types / report documents out. The numeric definitions are kept
deliberately primitive so they can be re-derived by hand:

* ``trimmed_mean`` — sort ascending, drop the outer 20% (⌊0.2·n⌋ from
  each end), average the remainder with a plain left-to-right sum.
* ``percentile`` — nearest-rank: the value at 1-indexed rank
  ⌈p/100 · n⌉ of the ascending sort. Rank arithmetic uses rationals so
  that p = 100·r/n never rounds past rank r.
* throughput — successful non-warmup items divided by busy time, where
  busy time spans first issue to last completion of non-warmup requests
  (failed requests keep the device busy; warmups are outside the
  window).

Reports serialize with canonical JSON so identical inputs produce
byte-identical documents ("report_version": 1).
"""

from __future__ import annotations

import html
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import EmptyInput, MissingBaseline, NoData, ValidationError
from .evaldb import EvaluationResult
from .manifest import parse_model_manifest
from .protocol import TraceLevel, canonical_json
from .tracer import Timeline, TraceSpan, correlate, dominant_child

__all__ = [
    "TRIM_FRACTION",
    "REPORT_VERSION",
    "LatencySummary",
    "ThroughputCurve",
    "SpeedupMatrix",
    "LayerReportRow",
    "trimmed_mean",
    "percentile",
    "latency_summary",
    "throughput_curve",
    "speedup_matrix",
    "layer_report",
    "generate_report",
    "report_json",
    "render_report_html",
]

TRIM_FRACTION = 0.2
REPORT_VERSION = 1


# ---------------------------------------------------------------------------
# Scalar statistics


def trimmed_mean(xs: Sequence[float], *, trim: float = TRIM_FRACTION) -> float:
    """Mean after discarding the smallest and largest ``trim`` fraction.

    The trim count is ⌊trim·n⌋ per side, so nothing is dropped until the
    sample is large enough (n ≥ 5 at the default fraction) and the window
    is never empty for trim < 0.5.
    """
    if not xs:
        raise EmptyInput("trimmed_mean needs at least one value")
    if not 0 <= trim < 0.5:
        raise ValidationError("trim", f"must be in [0, 0.5), got {trim!r}")
    ordered = sorted(xs)
    cut = math.floor(trim * len(ordered))
    window = ordered[cut:len(ordered) - cut]
    if not window:  # unreachable for trim < 0.5, kept as a guard
        window = ordered
    return sum(window) / len(window)


def percentile(xs: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: sorted(xs)[⌈p/100 · n⌉ − 1], p ∈ (0, 100]."""
    if not xs:
        raise EmptyInput("percentile needs at least one value")
    if not 0 < p <= 100:
        raise ValidationError("p", f"must be in (0, 100], got {p!r}")
    ordered = sorted(xs)
    rank = math.ceil(Fraction(p) * len(ordered) / 100)
    return ordered[max(rank, 1) - 1]


@dataclass(frozen=True)
class LatencySummary:
    """Latency distribution digest for one set of requests (milliseconds)."""

    trimmed_mean_ms: float
    p90_ms: float
    min_ms: float
    max_ms: float
    mean_ms: float
    count: int
    trim_fraction: float = TRIM_FRACTION

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("count", "must be >= 1")

    def to_body(self) -> dict:
        return {
            "trimmed_mean_ms": self.trimmed_mean_ms,
            "p90_ms": self.p90_ms,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
            "mean_ms": self.mean_ms,
            "count": self.count,
            "trim_fraction": self.trim_fraction,
        }


def latency_summary(latencies_ms: Sequence[float]) -> LatencySummary:
    if not latencies_ms:
        raise EmptyInput("latency_summary needs at least one latency")
    return LatencySummary(
        trimmed_mean_ms=trimmed_mean(latencies_ms),
        p90_ms=percentile(latencies_ms, 90),
        min_ms=min(latencies_ms),
        max_ms=max(latencies_ms),
        mean_ms=sum(latencies_ms) / len(latencies_ms),
        count=len(latencies_ms),
    )


# ---------------------------------------------------------------------------
# Throughput


@dataclass(frozen=True)
class ThroughputCurve:
    """Throughput (items/s) per batch size; argmax ties go to the smallest
    batch."""

    points: tuple[tuple[int, float], ...]
    max_throughput: float
    optimal_batch_size: int

    def to_body(self) -> dict:
        return {
            "points": [[batch, throughput] for batch, throughput in self.points],
            "max_throughput": self.max_throughput,
            "optimal_batch_size": self.optimal_batch_size,
        }


def throughput_curve(results: Iterable[EvaluationResult]) -> ThroughputCurve:
    """Group batched results by scenario batch size and compute throughput.

    Per batch size: items = successful non-warmup requests; busy time =
    sum over contributing evaluations of (last non-warmup completion −
    first non-warmup issue). Online results carry no batch size and are
    skipped.
    """
    items: dict[int, int] = {}
    busy: dict[int, int] = {}
    for result in results:
        scenario = result.request.benchmark_scenario
        if scenario.kind != "batched":
            continue
        timed = [m for m in result.per_request_measurements if not m.warmup]
        if not timed:
            continue
        window_ns = (max(m.issue_time_ns + m.latency_ns for m in timed)
                     - min(m.issue_time_ns for m in timed))
        if window_ns <= 0:
            continue
        batch = scenario.batch_size
        items[batch] = items.get(batch, 0) + sum(1 for m in timed if m.success)
        busy[batch] = busy.get(batch, 0) + window_ns

    points = tuple(
        (batch, items[batch] * 1e9 / busy[batch])
        for batch in sorted(items)
        if items[batch] > 0
    )
    if not points:
        raise NoData("no successful batched measurements to compute throughput")
    best_batch, best = max(points, key=lambda point: (point[1], -point[0]))
    return ThroughputCurve(points=points, max_throughput=best,
                           optimal_batch_size=best_batch)


@dataclass(frozen=True)
class SpeedupMatrix:
    """Throughput speedup over batch size 1, batch sizes × models.

    ``cells[i][j]`` is the speedup of ``model_ids[j]`` at
    ``batch_sizes[i]``, or None where that model has no measurement."""

    batch_sizes: tuple[int, ...]
    model_ids: tuple[str, ...]
    cells: tuple[tuple[float | None, ...], ...]

    def to_body(self) -> dict:
        return {
            "batch_sizes": list(self.batch_sizes),
            "model_ids": list(self.model_ids),
            "cells": [list(row) for row in self.cells],
        }


def speedup_matrix(curves: Mapping[str, ThroughputCurve]) -> SpeedupMatrix:
    if not curves:
        raise NoData("no throughput curves to compare")
    model_ids = tuple(sorted(curves))
    by_model: dict[str, dict[int, float]] = {
        model: dict(curves[model].points) for model in model_ids
    }
    for model in model_ids:
        if 1 not in by_model[model]:
            raise MissingBaseline(
                f"model {model!r} has no batch-size-1 measurement to "
                f"normalize against")
    batch_sizes = tuple(sorted({batch for table in by_model.values()
                                for batch in table}))
    cells = tuple(
        tuple(
            (by_model[model][batch] / by_model[model][1])
            if batch in by_model[model] else None
            for model in model_ids
        )
        for batch in batch_sizes
    )
    return SpeedupMatrix(batch_sizes=batch_sizes, model_ids=model_ids,
                         cells=cells)


# ---------------------------------------------------------------------------
# Layer reports


@dataclass(frozen=True)
class LayerReportRow:
    """One framework-level span with its correlated system-level kernels."""

    layer_index: int
    layer_name: str
    layer_type: str
    latency_ms: float
    dominant_kernel: str
    kernels: tuple[tuple[str, float], ...] = ()  # (name, duration_ms), longest first

    def to_body(self) -> dict:
        return {
            "layer_index": self.layer_index,
            "layer_name": self.layer_name,
            "layer_type": self.layer_type,
            "latency_ms": self.latency_ms,
            "dominant_kernel": self.dominant_kernel,
            "kernels": [[name, duration] for name, duration in self.kernels],
        }


def _span_rank(span: TraceSpan) -> tuple:
    return (-span.duration_ns, span.name, span.span_id)


def _layer_index(span: TraceSpan) -> int:
    raw = span.attributes.get("layer_index")
    try:
        return int(raw)
    except (TypeError, ValueError):
        return -1


def layer_report(timeline: Timeline, top_k: int = 5) -> list[LayerReportRow]:
    """The ``top_k`` longest framework-level spans, each with the
    system-level kernels that ran under it (assigned by temporal overlap)."""
    layers = sorted(timeline.spans_at_level(TraceLevel.FRAMEWORK),
                    key=_span_rank)
    if not layers:
        return []
    assignments = correlate(timeline, TraceLevel.FRAMEWORK, TraceLevel.SYSTEM)
    rows = []
    for layer in layers[:max(top_k, 0)]:
        kernels = sorted(assignments.get(layer.span_id, ()), key=_span_rank)
        dominant = dominant_child(list(kernels))
        rows.append(LayerReportRow(
            layer_index=_layer_index(layer),
            layer_name=layer.name,
            layer_type=layer.attributes.get("layer_type", ""),
            latency_ms=layer.duration_ns / 1e6,
            dominant_kernel=dominant.name if dominant is not None else "",
            kernels=tuple((k.name, k.duration_ns / 1e6) for k in kernels),
        ))
    return rows


# ---------------------------------------------------------------------------
# Reports


def _model_label(result: EvaluationResult) -> str:
    request = result.request
    name = request.model_name
    if not name and request.model_manifest:
        name = parse_model_manifest(request.model_manifest).name
    return f"{name}@{result.model_version}"


def _model_section(model_id: str, results: list[EvaluationResult]) -> dict:
    latencies = [
        m.latency_ns / 1e6
        for result in results
        for m in result.per_request_measurements
        if not m.warmup and m.success
    ]
    try:
        curve = throughput_curve(results).to_body()
    except NoData:
        curve = None
    return {
        "model": model_id,
        "sample_count": len(latencies),
        "clock_domains": sorted({r.clock_domain for r in results}),
        "latency": latency_summary(latencies).to_body() if latencies else None,
        "throughput": curve,
        "evaluations": sorted(r.evaluation_id for r in results),
    }


def generate_report(results: Sequence[EvaluationResult],
                    timelines: Sequence[Timeline] = (), *,
                    title: str = "Evaluation report",
                    top_k: int = 5) -> dict:
    """Bundle latency, throughput, speedup, and layer tables into one
    deterministic JSON-serializable document.

    Models lacking a batch-size-1 measurement are left out of the speedup
    matrix (their latency/throughput sections still appear); the matrix is
    None when no model has a baseline.
    """
    if not results:
        raise NoData("report needs at least one evaluation result")

    by_model: dict[str, list[EvaluationResult]] = {}
    for result in results:
        by_model.setdefault(_model_label(result), []).append(result)

    model_sections = [
        _model_section(model_id, by_model[model_id])
        for model_id in sorted(by_model)
    ]

    curves: dict[str, ThroughputCurve] = {}
    for model_id in sorted(by_model):
        try:
            curve = throughput_curve(by_model[model_id])
        except NoData:
            continue
        if any(batch == 1 for batch, _ in curve.points):
            curves[model_id] = curve
    speedup = speedup_matrix(curves).to_body() if curves else None

    layer_sections = sorted(
        (
            {
                "trace_id": timeline.trace_id,
                "clock_domain": timeline.clock_domain,
                "rows": [row.to_body() for row in layer_report(timeline, top_k)],
            }
            for timeline in timelines
        ),
        key=lambda section: section["trace_id"],
    )

    agents = {}
    for result in results:
        agent = result.agent
        agents[agent.agent_id] = {
            "agent_id": agent.agent_id,
            "architecture": agent.architecture,
            "devices": [
                {"kind": d.kind, "name": d.name,
                 "memory_bytes": d.memory_bytes, "count": d.count}
                for d in agent.devices
            ],
            "frameworks": [[name, str(version)]
                           for name, version in agent.frameworks],
        }

    return {
        "report_version": REPORT_VERSION,
        "title": title,
        "trim_fraction": TRIM_FRACTION,
        "models": model_sections,
        "speedup": speedup,
        "layers": layer_sections,
        "environment": {
            "agents": [agents[agent_id] for agent_id in sorted(agents)],
        },
        "evaluations": sorted(r.evaluation_id for r in results),
    }


def report_json(report: Mapping) -> bytes:
    """Canonical serialization: identical reports → identical bytes."""
    return canonical_json(report)


# ---------------------------------------------------------------------------
# HTML rendering


_PAGE_STYLE = """
body { font-family: system-ui, sans-serif; margin: 2rem auto; max-width: 60rem;
       color: #1a1a2e; padding: 0 1rem; }
h1 { border-bottom: 2px solid #1a1a2e; padding-bottom: .3rem; }
h2 { margin-top: 2rem; }
table { border-collapse: collapse; margin: .8rem 0; }
th, td { border: 1px solid #aab; padding: .3rem .7rem; text-align: right; }
th:first-child, td:first-child { text-align: left; }
caption { caption-side: top; text-align: left; font-weight: 600;
          padding-bottom: .3rem; }
.meta { color: #556; font-size: .9rem; }
"""


def _esc(value) -> str:
    return html.escape(str(value), quote=True)


def _num(value) -> str:
    if value is None:
        return "—"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def _latency_table(summary: Mapping | None) -> list[str]:
    if summary is None:
        return ["<p class=\"meta\">No successful measurements.</p>"]
    head = "<tr><th>trimmed mean (ms)</th><th>p90 (ms)</th><th>min (ms)</th>" \
           "<th>max (ms)</th><th>mean (ms)</th><th>samples</th></tr>"
    row = ("<tr>"
           f"<td>{_num(summary['trimmed_mean_ms'])}</td>"
           f"<td>{_num(summary['p90_ms'])}</td>"
           f"<td>{_num(summary['min_ms'])}</td>"
           f"<td>{_num(summary['max_ms'])}</td>"
           f"<td>{_num(summary['mean_ms'])}</td>"
           f"<td>{summary['count']}</td>"
           "</tr>")
    caption = (f"<caption>Latency (trim fraction "
               f"{_esc(summary['trim_fraction'])})</caption>")
    return [f"<table>{caption}{head}{row}</table>"]


def _throughput_table(curve: Mapping | None) -> list[str]:
    if curve is None:
        return []
    rows = "".join(
        f"<tr><td>{batch}</td><td>{_num(throughput)}</td></tr>"
        for batch, throughput in curve["points"]
    )
    summary = (f"<p class=\"meta\">max {_num(curve['max_throughput'])} items/s "
               f"at batch size {curve['optimal_batch_size']}</p>")
    return [
        "<table><caption>Throughput</caption>"
        "<tr><th>batch size</th><th>items/s</th></tr>"
        f"{rows}</table>",
        summary,
    ]


def _speedup_table(speedup: Mapping | None) -> list[str]:
    if speedup is None:
        return []
    header = "".join(f"<th>{_esc(model)}</th>" for model in speedup["model_ids"])
    rows = "".join(
        f"<tr><td>{batch}</td>"
        + "".join(f"<td>{_num(cell)}</td>" for cell in row)
        + "</tr>"
        for batch, row in zip(speedup["batch_sizes"], speedup["cells"])
    )
    return [
        "<h2>Speedup over batch size 1</h2>",
        f"<table><tr><th>batch size</th>{header}</tr>{rows}</table>",
    ]


def _layer_tables(sections: Sequence[Mapping]) -> list[str]:
    parts: list[str] = []
    for section in sections:
        if not section["rows"]:
            continue
        parts.append(f"<h2>Layers — trace {_esc(section['trace_id'])}</h2>")
        rows = "".join(
            "<tr>"
            f"<td>{row['layer_index']}</td>"
            f"<td>{_esc(row['layer_name'])}</td>"
            f"<td>{_esc(row['layer_type'])}</td>"
            f"<td>{_num(row['latency_ms'])}</td>"
            f"<td>{_esc(row['dominant_kernel'])}</td>"
            f"<td>{len(row['kernels'])}</td>"
            "</tr>"
            for row in section["rows"]
        )
        parts.append(
            "<table><tr><th>index</th><th>layer</th><th>type</th>"
            "<th>latency (ms)</th><th>dominant kernel</th><th>kernels</th></tr>"
            f"{rows}</table>")
    return parts


def render_report_html(report: Mapping) -> str:
    """A single static page with no scripts and no external assets."""
    parts: list[str] = [
        "<!doctype html>",
        "<html lang=\"en\"><head><meta charset=\"utf-8\">",
        f"<title>{_esc(report['title'])}</title>",
        f"<style>{_PAGE_STYLE}</style>",
        "</head><body>",
        f"<h1>{_esc(report['title'])}</h1>",
        (f"<p class=\"meta\">report version {report['report_version']} · "
         f"trim fraction {_esc(report['trim_fraction'])} · "
         f"{len(report['evaluations'])} evaluation(s)</p>"),
    ]
    for section in report["models"]:
        parts.append(f"<h2>{_esc(section['model'])}</h2>")
        parts.append(
            f"<p class=\"meta\">{section['sample_count']} samples · clock "
            f"{_esc(', '.join(section['clock_domains']))}</p>")
        parts.extend(_latency_table(section["latency"]))
        parts.extend(_throughput_table(section["throughput"]))
    parts.extend(_speedup_table(report["speedup"]))
    parts.extend(_layer_tables(report["layers"]))
    parts.append("<h2>Environment</h2>")
    for agent in report["environment"]["agents"]:
        devices = ", ".join(
            f"{d['count']}× {d['name']} ({d['kind']})" for d in agent["devices"])
        frameworks = ", ".join(
            f"{name} {version}" for name, version in agent["frameworks"])
        parts.append(
            f"<p>{_esc(agent['agent_id'])} — {_esc(agent['architecture'])} — "
            f"{_esc(devices)} — {_esc(frameworks)}</p>")
    parts.append("<h2>Evaluations</h2><ul>")
    parts.extend(f"<li>{_esc(evaluation_id)}</li>"
                 for evaluation_id in report["evaluations"])
    parts.append("</ul></body></html>")
    return "\n".join(parts)
