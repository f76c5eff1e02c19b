"""Quickstart: a complete benchmark sweep on one machine, no setup.

Boots the in-process development stack (service registry, trace collector,
orchestration server, and one worker agent), sweeps the bundled synthetic
model across batch sizes, and prints the measured throughput curve.

The synthetic predictor runs on a virtual clock — every batch costs exactly
``base_ms + per_item_ms * batch`` of logical time — so the numbers below are
bit-for-bit reproducible on any machine, which is also why the test suite
can assert them exactly.  The final section runs the bundled linear model
(a real matmul timed on the wall clock) for contrast.

Run with:  python3 demos/quickstart_virtual_benchmark.py
"""

import tempfile
from pathlib import Path

from benchrig.devstack import DevStack
from benchrig.protocol import BenchmarkScenario, OpenRequest, PredictOptions, TraceLevel
from benchrig.server import InputSpec


def submit_batched(stack: DevStack, model_name: str, framework: str,
                   batch_size: int, count: int,
                   input_spec: InputSpec | None = None) -> dict:
    """Submit one batched evaluation and return its per-agent summary."""
    request = OpenRequest(
        benchmark_scenario=BenchmarkScenario(
            kind="batched", batch_size=batch_size, request_count=count),
        predict_options=PredictOptions(trace_level=TraceLevel.MODEL),
        model_name=model_name,
        framework_name=framework,
        seed=0,
    )
    job_id = stack.orchestrator.submit_evaluation(request, input_spec=input_spec)
    state = stack.orchestrator.wait(job_id, timeout=60.0)
    if state != "completed":
        raise SystemExit(f"evaluation {job_id} ended in state {state!r}")
    summary = stack.orchestrator.job_summary(job_id)
    (result,) = summary["results"]
    return result


def main() -> None:
    data_dir = Path(tempfile.mkdtemp(prefix="benchrig-quickstart-"))
    with DevStack(agents=1, data_dir=data_dir) as stack:
        print(f"dev stack up: api={stack.url}  agent={stack.agent_ids[0]}")
        print()

        # --- 1. sweep the synthetic model over batch sizes ----------------
        print("synthetic-demo on the virtual clock (base 2 ms + 0.5 ms/item):")
        print(f"{'batch':>6} {'samples':>8} {'mean ms':>9} {'items/s':>10}")
        for batch_size in (1, 2, 4, 8, 16, 32, 64):
            result = submit_batched(stack, "synthetic-demo", "synthetic",
                                    batch_size, count=4 * batch_size)
            latency = result["latency"]
            print(f"{batch_size:>6} {result['sample_count']:>8} "
                  f"{latency['mean_ms']:>9.3f} {result['throughput']:>10.1f}")
        print()
        print("each batch costs 2 + 0.5*b virtual milliseconds, so throughput")
        print("approaches 1/0.5 ms = 2000 items/s as the batch grows.")
        print()

        # --- 2. one wall-clock run of the linear (matmul) model -----------
        # The linear demo model multiplies 3-feature rows, so the generated
        # synthetic inputs must match that width.
        result = submit_batched(stack, "linear-demo", "linear",
                                batch_size=4, count=16,
                                input_spec=InputSpec(shape=(3,)))
        latency = result["latency"]
        print(f"linear-demo on the {result['clock_domain']} clock: "
              f"{result['sample_count']} samples, "
              f"trimmed mean {latency['trimmed_mean_ms']:.4f} ms, "
              f"p90 {latency['p90_ms']:.4f} ms")
        print()

        # --- 3. aggregate everything into a report ------------------------
        report_id = stack.orchestrator.submit_analysis(title="Quickstart sweep")
        report = stack.orchestrator.get_report(report_id)
        for section in report["models"]:
            curve = section["throughput"]
            if curve:
                print(f"{section['model']}: max throughput "
                      f"{curve['max_throughput']:.1f} items/s at batch "
                      f"{curve['optimal_batch_size']}")
        out_html = data_dir / "quickstart-report.html"
        out_html.write_text(stack.orchestrator.get_report_html(report_id),
                            encoding="utf-8")
        print(f"full report written to {out_html}")


if __name__ == "__main__":
    main()
