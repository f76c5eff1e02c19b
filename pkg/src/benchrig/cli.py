"""Command-line client for the evaluation platform.

Commands
--------
``benchrig evaluate``   submit an evaluation, wait for it, print its summary
``benchrig analyze``    generate an analysis report and write its files
``benchrig agents``     list live agents
``benchrig models``     list registered models
``benchrig dev up``     run a seeded one-process development stack

Exit codes are frozen: 0 — the evaluation completed (or the command
succeeded); 1 — the evaluation failed or the server was unreachable;
2 — usage error (bad or missing flags).

``--output json`` emits exactly the server's summary JSON (byte-identical
modulo the trailing newline), so scripts can pipe it.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import urllib.error
import urllib.request
from pathlib import Path

from .errors import ValidationError
from .protocol import (
    Arrival,
    BenchmarkScenario,
    OpenRequest,
    PredictOptions,
    TraceLevel,
    canonical_json,
)

__all__ = ["main"]

_POLL_INTERVAL_SECONDS = 0.25
_HTTP_TIMEOUT_SECONDS = 30.0


class _CommandFailed(Exception):
    """Command-level failure (exit 1): carries the message for stderr."""


# ---------------------------------------------------------------------------
# HTTP plumbing


def _server_url(server: str) -> str:
    server = server.rstrip("/")
    if not server.startswith(("http://", "https://")):
        server = "http://" + server
    return server


def _http(method: str, url: str, body: dict | None = None) -> bytes:
    data = canonical_json(body) if body is not None else None
    headers = {"Content-Type": "application/json"} if data else {}
    request = urllib.request.Request(url, data=data, headers=headers,
                                     method=method)
    try:
        with urllib.request.urlopen(request,
                                    timeout=_HTTP_TIMEOUT_SECONDS) as response:
            return response.read()
    except urllib.error.HTTPError as error:
        payload = error.read()
        try:
            detail = json.loads(payload)["error"]
            message = f"{detail['code']}: {detail['message']}"
        except (ValueError, TypeError, KeyError):
            message = f"HTTP {error.code}"
        raise _CommandFailed(f"server rejected the request ({message})") from None
    except (urllib.error.URLError, OSError, TimeoutError) as error:
        reason = getattr(error, "reason", error)
        raise _CommandFailed(f"server unreachable at {url}: {reason}") from None


def _get_json(url: str) -> dict:
    return json.loads(_http("GET", url))


# ---------------------------------------------------------------------------
# evaluate


def _split_ref(value: str) -> tuple[str, str]:
    """NAME[:VERSION] → (name, version-or-constraint)."""
    name, _sep, version = value.partition(":")
    return name, version


def _build_request(args: argparse.Namespace) -> OpenRequest:
    model_name, model_version = _split_ref(args.model)
    framework_name, framework_version = _split_ref(args.framework)
    manifest_text = ""
    if args.manifest:
        path = Path(args.manifest)
        if not path.is_file():
            raise ValidationError("manifest", f"no such file: {path}")
        manifest_text = path.read_text(encoding="utf-8")

    if args.scenario == "batched":
        scenario = BenchmarkScenario(kind="batched", batch_size=args.batch_size,
                                     request_count=args.count,
                                     warmup_count=args.warmup)
    else:
        scenario = BenchmarkScenario(
            kind="online",
            arrival=Arrival(distribution=args.dist, rate=args.rate),
            request_count=args.count,
            warmup_count=args.warmup)

    return OpenRequest(
        benchmark_scenario=scenario,
        predict_options=PredictOptions(
            trace_level=TraceLevel.from_name(args.trace_level)),
        model_name=model_name,
        model_version=model_version,
        framework_name=framework_name,
        framework_version=framework_version,
        model_manifest=manifest_text,
        seed=args.seed,
    )


def _hw_body(args: argparse.Namespace) -> dict:
    body = {}
    if args.hw_device:
        body["device_kind"] = args.hw_device
    if args.hw_min_memory is not None:
        body["min_memory_bytes"] = args.hw_min_memory
    return body


def _poll_job(base: str, job_id: str) -> dict:
    while True:
        status = _get_json(f"{base}/api/v1/evaluations/{job_id}")
        if status["state"] in ("completed", "failed"):
            return status
        time.sleep(_POLL_INTERVAL_SECONDS)


def _format_ms(value) -> str:
    return f"{value:.3f}" if value is not None else "-"


def _summary_table(summary: dict) -> str:
    lines = [f"{'agent':<16} {'model':<24} {'clock':<8} {'samples':>7} "
             f"{'trimmed-mean':>12} {'p90':>10} {'min':>10} {'max':>10} "
             f"{'items/s':>12}"]
    request = summary.get("request", {})
    model = request.get("model_name") or "(inline manifest)"
    for result in summary["results"]:
        latency = result.get("latency") or {}
        throughput = result.get("throughput")
        lines.append(
            f"{result['agent_id']:<16} "
            f"{model + '@' + result['model_version']:<24} "
            f"{result['clock_domain']:<8} "
            f"{result['sample_count']:>7} "
            f"{_format_ms(latency.get('trimmed_mean_ms')):>12} "
            f"{_format_ms(latency.get('p90_ms')):>10} "
            f"{_format_ms(latency.get('min_ms')):>10} "
            f"{_format_ms(latency.get('max_ms')):>10} "
            f"{f'{throughput:.1f}' if throughput is not None else '-':>12}")
    return "\n".join(lines)


def cmd_evaluate(args: argparse.Namespace) -> int:
    request = _build_request(args)
    base = _server_url(args.server)
    body: dict = {"request": request.to_body(), "fan_out": args.fan_out}
    hw = _hw_body(args)
    if hw:
        body["hw"] = hw

    job_id = json.loads(_http("POST", f"{base}/api/v1/evaluations", body))["job_id"]
    status = _poll_job(base, job_id)
    if status["state"] != "completed":
        error = status.get("error") or {}
        print(f"evaluation failed: {error.get('code', 'unknown')}: "
              f"{error.get('message', 'no detail')}", file=sys.stderr)
        return 1

    summary_bytes = _http("GET", f"{base}/api/v1/evaluations/{job_id}/summary")
    if args.output == "json":
        sys.stdout.buffer.write(summary_bytes)
        if not summary_bytes.endswith(b"\n"):
            sys.stdout.buffer.write(b"\n")
        sys.stdout.buffer.flush()
    else:
        print(_summary_table(json.loads(summary_bytes)))
    return 0


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args: argparse.Namespace) -> int:
    base = _server_url(args.server)
    query_filter: dict = {}
    if args.model:
        name, constraint = _split_ref(args.model)
        query_filter["model_name"] = name
        if constraint:
            query_filter["model_constraint"] = constraint
    if args.framework:
        name, constraint = _split_ref(args.framework)
        query_filter["framework_name"] = name
        if constraint:
            query_filter["framework_constraint"] = constraint
    if args.scenario:
        query_filter["scenario_kind"] = args.scenario

    body: dict = {"title": args.title, "top_k": args.top_k}
    if query_filter:
        body["filter"] = query_filter
    report_id = json.loads(_http("POST", f"{base}/api/v1/analyses", body))["report_id"]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"report-{report_id}.json"
    html_path = out_dir / f"report-{report_id}.html"
    json_path.write_bytes(_http("GET", f"{base}/api/v1/analyses/{report_id}"))
    html_path.write_bytes(_http("GET", f"{base}/api/v1/analyses/{report_id}/html"))
    print(json_path)
    print(html_path)
    return 0


# ---------------------------------------------------------------------------
# agents / models


def cmd_agents(args: argparse.Namespace) -> int:
    base = _server_url(args.server)
    payload = _http("GET", f"{base}/api/v1/agents")
    if args.output == "json":
        sys.stdout.buffer.write(payload + b"\n")
        return 0
    agents = json.loads(payload)["agents"]
    if not agents:
        print("no live agents")
        return 0
    print(f"{'agent':<20} {'architecture':<12} {'endpoint':<22} "
          f"{'devices':<28} frameworks")
    for agent in agents:
        devices = ", ".join(f"{d['count']}x {d['kind']}" for d in agent["devices"])
        frameworks = ", ".join(f"{name} {version}"
                               for name, version in agent["frameworks"])
        print(f"{agent['agent_id']:<20} {agent['architecture']:<12} "
              f"{agent['endpoint']:<22} {devices:<28} {frameworks}")
    return 0


def cmd_models(args: argparse.Namespace) -> int:
    base = _server_url(args.server)
    payload = _http("GET", f"{base}/api/v1/models")
    if args.output == "json":
        sys.stdout.buffer.write(payload + b"\n")
        return 0
    models = json.loads(payload)["models"]
    if not models:
        print("no registered models")
        return 0
    print(f"{'model':<28} {'version':<10} {'framework':<20} description")
    for model in models:
        framework = model["framework"]["name"]
        if model["framework"]["constraint"]:
            framework += " " + model["framework"]["constraint"]
        print(f"{model['name']:<28} {model['version']:<10} {framework:<20} "
              f"{model['description']}")
    return 0


# ---------------------------------------------------------------------------
# dev up


def cmd_dev_up(args: argparse.Namespace) -> int:
    from .devstack import DevStack

    ui_root = None
    if args.ui:
        ui_root = Path(args.ui)
        if not (ui_root / "index.html").is_file():
            raise ValidationError("ui", f"no index.html under {ui_root}")
    else:
        candidate = Path("frontend") / "dist"
        if (candidate / "index.html").is_file():
            ui_root = candidate

    stack = DevStack(agents=args.agents, host=args.host, port=args.port,
                     data_dir=args.data_dir, ui_root=ui_root)
    stack.start()
    try:
        print(f"api       {stack.url}")
        print(f"registry  {stack.registry_endpoint}")
        print(f"tracer    {stack.tracer_endpoint}")
        print(f"data      {stack.data_dir}")
        print(f"agents    {', '.join(stack.agent_ids)}")
        models = ", ".join(f"{name}@{version}"
                           for name, version in stack.model_keys)
        print(f"models    {models}")
        if ui_root is not None:
            print(f"ui        {stack.url}/ui/")
        print("ready — press Ctrl-C to stop", flush=True)
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        print("stopping", file=sys.stderr)
    finally:
        stack.stop()
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_server_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--server", default="http://127.0.0.1:8080",
                        help="evaluation server URL "
                             "(default: %(default)s)")


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return number


def _non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return number


def _seed(value: str) -> int:
    number = int(value)
    if not 0 <= number < 2 ** 64:
        raise argparse.ArgumentTypeError("must fit in an unsigned 64-bit integer")
    return number


def _positive_float(value: str) -> float:
    number = float(value)
    if not number > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="benchrig",
        description="Distributed model-evaluation benchmarking client.")
    commands = parser.add_subparsers(dest="command", metavar="command")

    evaluate = commands.add_parser(
        "evaluate", help="submit an evaluation and print its summary")
    _add_server_flag(evaluate)
    evaluate.add_argument("--model", default="",
                          help="model NAME[:VERSION] to evaluate (default: none; "
                               "either --model or --manifest is required)")
    evaluate.add_argument("--framework", default="",
                          help="framework NAME[:CONSTRAINT] filter "
                               "(default: any framework)")
    evaluate.add_argument("--manifest", default="",
                          help="path to an inline model manifest to evaluate "
                               "(default: none)")
    evaluate.add_argument("--scenario", choices=("batched", "online"),
                          default="batched",
                          help="workload shape (default: %(default)s)")
    evaluate.add_argument("--batch-size", type=_positive_int, default=1,
                          help="batch size for batched scenarios "
                               "(default: %(default)s)")
    evaluate.add_argument("--rate", type=_positive_float, default=10.0,
                          help="arrival rate in requests/s for online scenarios "
                               "(default: %(default)s)")
    evaluate.add_argument("--dist", choices=("poisson", "fixed"),
                          default="poisson",
                          help="online arrival distribution (default: %(default)s)")
    evaluate.add_argument("--count", type=_positive_int, default=64,
                          help="number of requests (default: %(default)s)")
    evaluate.add_argument("--warmup", type=_non_negative_int, default=0,
                          help="untimed warmup requests at the start "
                               "(default: %(default)s)")
    evaluate.add_argument("--trace-level",
                          choices=("none", "model", "framework", "system", "full"),
                          default="model",
                          help="trace capture level (default: %(default)s)")
    evaluate.add_argument("--hw-device", choices=("cpu", "gpu", "fpga"),
                          default=None,
                          help="require agents with this device kind "
                               "(default: any)")
    evaluate.add_argument("--hw-min-memory", type=_positive_int, default=None,
                          metavar="BYTES",
                          help="require a device with at least this much memory "
                               "(default: any)")
    evaluate.add_argument("--fan-out", choices=("one", "all"), default="one",
                          help="evaluate on the least-loaded capable agent or "
                               "on all of them (default: %(default)s)")
    evaluate.add_argument("--seed", type=_seed, default=0,
                          help="workload seed (default: %(default)s)")
    evaluate.add_argument("--output", choices=("json", "table"), default="table",
                          help="summary format; json is the server's summary "
                               "verbatim (default: %(default)s)")
    evaluate.set_defaults(run=cmd_evaluate)

    analyze = commands.add_parser(
        "analyze", help="generate an analysis report over stored results")
    _add_server_flag(analyze)
    analyze.add_argument("--model", default="",
                         help="filter results to model NAME[:CONSTRAINT] "
                              "(default: all models)")
    analyze.add_argument("--framework", default="",
                         help="filter results to framework NAME[:CONSTRAINT] "
                              "(default: all frameworks)")
    analyze.add_argument("--scenario", choices=("batched", "online"), default="",
                         help="filter results by scenario kind (default: all)")
    analyze.add_argument("--title", default="Evaluation report",
                         help="report title (default: %(default)s)")
    analyze.add_argument("--top-k", type=_positive_int, default=5,
                         help="kernels listed per layer (default: %(default)s)")
    analyze.add_argument("--out", default=".",
                         help="directory for the report files "
                              "(default: current directory)")
    analyze.set_defaults(run=cmd_analyze)

    agents = commands.add_parser("agents", help="list live agents")
    _add_server_flag(agents)
    agents.add_argument("--output", choices=("json", "table"), default="table",
                        help="listing format (default: %(default)s)")
    agents.set_defaults(run=cmd_agents)

    models = commands.add_parser("models", help="list registered models")
    _add_server_flag(models)
    models.add_argument("--output", choices=("json", "table"), default="table",
                        help="listing format (default: %(default)s)")
    models.set_defaults(run=cmd_models)

    dev = commands.add_parser("dev", help="development stack")
    dev_commands = dev.add_subparsers(dest="dev_command", metavar="subcommand")
    dev_up = dev_commands.add_parser(
        "up", help="run a seeded registry+tracer+server+agent stack")
    dev_up.add_argument("--host", default="127.0.0.1",
                        help="listen address (default: %(default)s)")
    dev_up.add_argument("--port", type=int, default=8080,
                        help="API port, 0 for an ephemeral one "
                             "(default: %(default)s)")
    dev_up.add_argument("--agents", type=_positive_int, default=1,
                        help="number of local agents (default: %(default)s)")
    dev_up.add_argument("--data-dir", default=None,
                        help="directory for the store, reports, and caches "
                             "(default: a fresh temporary directory)")
    dev_up.add_argument("--ui", default="",
                        help="path to a built web UI bundle to serve under /ui/ "
                             "(default: frontend/dist when present)")
    dev_up.set_defaults(run=cmd_dev_up)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "run"):
        parser.print_help(sys.stderr)
        return 2
    if getattr(args, "command", None) == "evaluate" \
            and not args.model and not args.manifest:
        parser.error("evaluate requires --model or --manifest")
    try:
        return args.run(args)
    except ValidationError as error:
        parser.error(str(error))  # exits 2
    except _CommandFailed as error:
        print(f"error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
