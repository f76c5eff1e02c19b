"""Layer/kernel profiling: from raw spans to a ranked layer report.

The package ships a realistic GPU profile of one ResNet-50 batch-256
inference: a model-level root span, framework-level layer spans, and the
system-level kernels that ran under each layer.  This demo publishes those
spans to an in-process trace store, assembles the timeline, and prints the
top-5 layer report — the slowest layers, each with its dominant kernel.

The interesting read: the two slowest convolutions are dominated by an
FFT-based complex GEMM kernel (`volta_cgemm_32x32_tn`), not the direct
convolution kernels the mid-ranked layers use — exactly the kind of nested
attribution the three trace levels exist for.

Run with:  python3 demos/layer_profile_report.py
"""

import tempfile
from pathlib import Path

from benchrig.analysis import generate_report, layer_report, render_report_html
from benchrig.sampledata import classification_throughput_results, resnet50_layer_trace
from benchrig.tracer import TraceStore


def main() -> None:
    trace_id, spans = resnet50_layer_trace()
    store = TraceStore()
    published = store.publish(list(spans))
    print(f"published {published.stored} spans to trace {trace_id}")

    timeline = store.assemble(trace_id)
    print(f"timeline: {timeline.span_count} spans, "
          f"{timeline.total_duration_ns / 1e6:.2f} ms total, "
          f"clock domain {timeline.clock_domain}")
    print()

    rows = layer_report(timeline, top_k=5)
    print(f"{'rank':>4} {'idx':>4} {'layer':<18} {'type':<8} "
          f"{'ms':>6}  dominant kernel")
    for rank, row in enumerate(rows, start=1):
        print(f"{rank:>4} {row.layer_index:>4} {row.layer_name:<18} "
              f"{row.layer_type:<8} {row.latency_ms:>6.2f}  {row.dominant_kernel}")
    print()

    top = rows[0]
    print(f"kernels under {top.layer_name} ({len(top.kernels)} total):")
    for name, duration_ms in top.kernels:
        print(f"  {duration_ms:>7.3f} ms  {name}")
    print()

    # A report combines evaluation results with any referenced timelines;
    # here the bundled classification throughput fixtures provide the
    # results half, and the profile timeline fills the layers section.
    report = generate_report(classification_throughput_results(), [timeline],
                             title="Classification sweep with layer profile")
    out = Path(tempfile.mkdtemp(prefix="benchrig-profile-")) / "layer-profile.html"
    out.write_text(render_report_html(report), encoding="utf-8")
    print(f"HTML report written to {out}")


if __name__ == "__main__":
    main()
