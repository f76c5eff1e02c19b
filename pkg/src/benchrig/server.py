"""Evaluation orchestrator and its REST API.

The orchestrator sits between clients and the fleet: it accepts evaluation
requests, resolves them against the registry to the set of capable agents,
drives the load generator against each chosen agent over the wire protocol,
persists results to the evaluation store, and exposes analysis reports.

Orchestrator instances hold no durable state of their own — jobs are
ephemeral in-memory records, while results and reports live in the shared
evaluation store and spans in the tracer — so several instances can serve
the same deployment behind a load balancer.  Two deliberate consequences:

* Identical submissions (same model, scenario, seed) derive identical trace
  and evaluation ids, so re-running one is idempotent end to end: spans
  deduplicate in the tracer and the result store keeps the first record.
* A job summary contains only derived, reproducible values (no ULIDs, no
  wall-clock timestamps, no endpoints), so a fixed scenario + seed against
  a virtual-clock agent yields byte-identical summary JSON across runs.

Dispatch policy: the registry returns capable agents ordered least-loaded
first; ``fan_out="one"`` takes the head, ``fan_out="all"`` takes them all.
A connection-level failure against an agent is retried once before the job
fails; typed agent errors fail the job immediately (they would only recur).
"""

from __future__ import annotations

import json
import logging
import math
import mimetypes
import re
import threading
import time
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence
from urllib.parse import urlsplit

import numpy as np

from .analysis import generate_report, latency_summary, render_report_html, report_json
from .assets import read_record_file
from .errors import (
    BenchrigError,
    EmptyWorkload,
    JobNotCompleted,
    NoCapableAgent,
    RegistryUnreachable,
    RpcError,
    UnknownJob,
    UnknownReport,
    UnknownTrace,
    ValidationError,
)
from .evaldb import EvalDB, EvaluationResult, QueryFilter
from .ids import derive_evaluation_id, derive_trace_id, new_ulid
from .manifest import ModelManifest, render_model_manifest
from .protocol import (
    CloseRequest,
    OpenRequest,
    PredictStart,
    RpcClient,
    canonical_json,
)
from .registry import AgentRecord, HardwareConstraint, RegistryClient
from .rng import SplitMix64
from .scenarios import build_plan, execute_plan
from .semver import SemVer
from .tensors import TensorValue
from .tracer import Timeline, TracerClient

__all__ = [
    "InputSpec",
    "EvaluationJob",
    "Orchestrator",
    "ApiServer",
    "start_api_server",
    "SUMMARY_VERSION",
]

_LOG = logging.getLogger("benchrig.server")

SUMMARY_VERSION = 1

# Items generated for a duration-bounded scenario, where the request count
# is unknown up front; the sender reuses them cyclically.
_DURATION_ITEM_COUNT = 64


# ---------------------------------------------------------------------------
# Input sources


@dataclass(frozen=True)
class InputSpec:
    """Where a job's input items come from.

    ``synthetic`` generates deterministic float32 tensors of ``shape`` from
    the request seed — one per request by default — so a desk-scale job
    needs no dataset.  ``record_file`` streams raw payload records (e.g.
    image files) from a length-prefixed record file on the server host,
    letting preprocessing manifests run against real inputs.
    """

    kind: str = "synthetic"
    count: int | None = None
    shape: tuple[int, ...] = (4,)
    path: str = ""

    def __post_init__(self):
        if self.kind not in ("synthetic", "record_file"):
            raise ValidationError(
                "input.kind", f"must be synthetic or record_file, got {self.kind!r}")
        if self.kind == "record_file" and not self.path:
            raise ValidationError("input.path", "required for record_file inputs")
        if self.count is not None and (
                not isinstance(self.count, int) or isinstance(self.count, bool)
                or self.count < 1):
            raise ValidationError("input.count", "must be an integer >= 1")
        if not self.shape:
            raise ValidationError("input.shape", "must have at least one dimension")
        for dim in self.shape:
            if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
                raise ValidationError("input.shape", "dimensions must be integers >= 1")

    def to_body(self) -> dict:
        body: dict[str, Any] = {"kind": self.kind, "shape": list(self.shape)}
        if self.count is not None:
            body["count"] = self.count
        if self.path:
            body["path"] = self.path
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "InputSpec":
        shape = body.get("shape")
        return cls(
            kind=body.get("kind", "synthetic"),
            count=body.get("count"),
            shape=tuple(int(d) for d in shape) if shape is not None else (4,),
            path=body.get("path", ""),
        )


def synthetic_items(count: int, shape: Sequence[int], seed: int) -> list[dict]:
    """Deterministic float32 tensor bodies: values in [0, 1) from one seed."""
    rng = SplitMix64(seed)
    size = math.prod(shape)
    items = []
    for _ in range(count):
        values = np.fromiter((rng.next_float() for _ in range(size)),
                             dtype=np.float64, count=size)
        array = values.astype(np.float32).reshape(tuple(shape))
        items.append(TensorValue.from_numpy(array).to_body())
    return items


def _input_payloads(spec: InputSpec, request: OpenRequest) -> list:
    if spec.kind == "record_file":
        payloads = read_record_file(spec.path)
        if not payloads:
            raise EmptyWorkload(f"record file {spec.path} contains no records")
        return payloads
    count = spec.count
    if count is None:
        count = request.benchmark_scenario.request_count or _DURATION_ITEM_COUNT
    return synthetic_items(count, spec.shape, request.seed)


# ---------------------------------------------------------------------------
# Jobs


_LEGAL_TRANSITIONS: dict[str, tuple[str, ...]] = {
    "pending": ("resolving",),
    "resolving": ("dispatched", "failed"),
    "dispatched": ("running", "failed"),
    "running": ("completed", "failed"),
    "completed": (),
    "failed": (),
}


class EvaluationJob:
    """One evaluation request's orchestration record.

    Jobs are ephemeral: the durable artifacts are the results they store.
    State only ever moves along pending → resolving → dispatched → running
    → completed/failed; ``advance`` rejects anything else.
    """

    def __init__(self, job_id: str, request: OpenRequest, hw: HardwareConstraint,
                 fan_out: str, input_spec: InputSpec):
        self.job_id = job_id
        self.request = request
        self.hw = hw
        self.fan_out = fan_out
        self.input_spec = input_spec
        self.state = "pending"
        self.agent_ids: tuple[str, ...] = ()
        self.result_ids: tuple[str, ...] = ()
        self.error: dict | None = None
        self.created_at_ns = time.time_ns()
        self.updated_at_ns = self.created_at_ns
        self._lock = threading.Lock()
        self._done = threading.Event()

    def advance(self, new_state: str) -> None:
        with self._lock:
            if new_state not in _LEGAL_TRANSITIONS.get(self.state, ()):
                raise ValidationError(
                    "job.state",
                    f"illegal transition {self.state} -> {new_state}")
            self.state = new_state
            self.updated_at_ns = time.time_ns()
        if new_state in ("completed", "failed"):
            self._done.set()

    def fail(self, error: BenchrigError) -> None:
        with self._lock:
            if self.state in ("completed", "failed"):
                return
            self.error = {"code": error.code, "message": str(error)}
        try:
            self.advance("failed")
        except ValidationError:
            pass  # lost a terminal-state race; the first outcome stands

    def assign(self, agent_ids: Sequence[str]) -> None:
        with self._lock:
            self.agent_ids = tuple(agent_ids)
            self.updated_at_ns = time.time_ns()

    def add_result(self, evaluation_id: str) -> None:
        with self._lock:
            self.result_ids = self.result_ids + (evaluation_id,)
            self.updated_at_ns = time.time_ns()

    def wait(self, timeout: float | None = None) -> bool:
        """Block until the job is terminal; False if the timeout elapsed first."""
        return self._done.wait(timeout)

    def snapshot(self) -> tuple[str, tuple[str, ...]]:
        with self._lock:
            return self.state, self.result_ids

    def status_body(self) -> dict:
        with self._lock:
            return {
                "job_id": self.job_id,
                "state": self.state,
                "fan_out": self.fan_out,
                "model_name": self.request.model_name,
                "scenario_kind": self.request.benchmark_scenario.kind,
                "agents": list(self.agent_ids),
                "expected_results": len(self.agent_ids),
                "completed_results": len(self.result_ids),
                "result_ids": list(self.result_ids),
                "error": dict(self.error) if self.error else None,
                "created_at_ns": self.created_at_ns,
                "updated_at_ns": self.updated_at_ns,
            }


# ---------------------------------------------------------------------------
# Orchestrator


class Orchestrator:
    """Accepts evaluations, dispatches them to agents, and serves results.

    Configuration is exactly the deployment's shared services: the registry
    endpoint, the tracer endpoint, and the evaluation store (an
    :class:`~benchrig.evaldb.EvalDB` instance or its directory path).
    """

    def __init__(self, registry_endpoint: str, tracer_endpoint: str,
                 evaldb: EvalDB | str | Path, *, rpc_timeout: float = 30.0):
        self.registry_endpoint = registry_endpoint
        self.tracer_endpoint = tracer_endpoint
        self.evaldb = evaldb if isinstance(evaldb, EvalDB) else EvalDB(evaldb)
        self._rpc_timeout = rpc_timeout
        self._jobs: dict[str, EvaluationJob] = {}
        self._jobs_lock = threading.Lock()
        self._reports: dict[str, dict] = {}
        self._reports_lock = threading.Lock()
        self._reports_root = self.evaldb.root / "reports"

    # -- service clients (fresh per call: thread-safe, restart-tolerant) ----

    def _with_registry(self, fn: Callable[[RegistryClient], Any]) -> Any:
        try:
            client = RegistryClient(self.registry_endpoint, timeout=self._rpc_timeout)
            try:
                return fn(client)
            finally:
                client.close()
        except OSError as exc:
            raise RegistryUnreachable(
                f"registry at {self.registry_endpoint}: {exc}") from exc

    def _with_tracer(self, fn: Callable[[TracerClient], Any]) -> Any:
        try:
            client = TracerClient(self.tracer_endpoint, timeout=self._rpc_timeout)
            try:
                return fn(client)
            finally:
                client.close()
        except OSError as exc:
            raise RpcError(f"tracer at {self.tracer_endpoint}: {exc}") from exc

    # -- evaluations ---------------------------------------------------------

    def submit_evaluation(self, request: OpenRequest,
                          hw: HardwareConstraint | None = None,
                          fan_out: str = "one",
                          input_spec: InputSpec | None = None) -> str:
        """Create a job, resolve it, and dispatch it; returns the job id.

        Resolution happens before this returns, so a request no live agent
        can serve is already ``failed`` (NoCapableAgent) when the caller
        first polls.  Execution runs in a background thread per job.
        """
        if not isinstance(request, OpenRequest):
            raise ValidationError("request", "must be an OpenRequest")
        if fan_out not in ("one", "all"):
            raise ValidationError("fan_out", f"must be one or all, got {fan_out!r}")
        hw = hw if hw is not None else HardwareConstraint()
        spec = input_spec if input_spec is not None else InputSpec()
        if spec.kind == "record_file" and not Path(spec.path).is_file():
            raise ValidationError("input.path", f"record file not found: {spec.path}")

        job = EvaluationJob(new_ulid(), request, hw, fan_out, spec)
        with self._jobs_lock:
            self._jobs[job.job_id] = job
        job.advance("resolving")
        try:
            records = self._with_registry(lambda reg: reg.resolve(
                framework_name=request.framework_name,
                framework_constraint=request.framework_version,
                model_name=request.model_name,
                model_constraint=request.model_version,
                hw=hw,
            ))
        except BenchrigError as exc:
            job.fail(exc)
            return job.job_id
        if not records:
            job.fail(NoCapableAgent(
                "no live agent satisfies the model/framework/hardware constraints"))
            return job.job_id

        chosen = records[:1] if fan_out == "one" else list(records)
        job.assign([record.agent_id for record in chosen])
        job.advance("dispatched")
        worker = threading.Thread(target=self._run_job, args=(job, chosen),
                                  name=f"job-{job.job_id}", daemon=True)
        worker.start()
        return job.job_id

    def _run_job(self, job: EvaluationJob, records: list[AgentRecord]) -> None:
        try:
            job.advance("running")
            payloads = _input_payloads(job.input_spec, job.request)
            plan = build_plan(job.request.benchmark_scenario, len(payloads),
                              seed=job.request.seed)
            for record in records:
                request = self._request_for_agent(job, record)
                result = self._run_with_retry(record, request, plan, payloads)
                self.evaldb.store(result)
                job.add_result(result.evaluation_id)
            job.advance("completed")
        except BenchrigError as exc:
            job.fail(exc)
        except OSError as exc:
            job.fail(RpcError(f"agent connection failed: {exc}"))
        except Exception as exc:  # a job must never take the server down
            _LOG.exception("job %s crashed", job.job_id)
            job.fail(RpcError(f"evaluation dispatch failed: {exc}"))

    def _request_for_agent(self, job: EvaluationJob,
                           record: AgentRecord) -> OpenRequest:
        # Fanned-out evaluations need distinct traces per agent; salt the
        # derived trace id with the agent id so each stays reproducible.
        request = job.request
        if job.fan_out != "all" or request.trace_id:
            return request
        fingerprint = canonical_json(
            request.benchmark_scenario.fingerprint_body()).decode("utf-8")
        trace_id = derive_trace_id(
            request.model_name or "inline-manifest", request.model_version,
            f"{fingerprint}@{record.agent_id}", request.seed)
        return replace(request, trace_id=trace_id)

    def _run_with_retry(self, record: AgentRecord, request: OpenRequest,
                        plan, payloads) -> EvaluationResult:
        try:
            return self._run_remote(record, request, plan, payloads)
        except (OSError, RpcError) as exc:
            _LOG.warning("agent %s connection failure, retrying once: %s",
                         record.agent_id, exc)
            return self._run_remote(record, request, plan, payloads)

    def _run_remote(self, record: AgentRecord, request: OpenRequest,
                    plan, payloads) -> EvaluationResult:
        started_at = time.time_ns()
        client = RpcClient.for_endpoint(record.endpoint, timeout=self._rpc_timeout)
        try:
            response = client.call(request)
            try:
                stream = client.open_stream(PredictStart(handle=response.handle))
                measurements = execute_plan(plan, stream, payloads)
                done = stream.result()
                client.finish_call(stream)
            finally:
                try:
                    client.call(CloseRequest(handle=response.handle))
                except (BenchrigError, OSError):
                    pass  # the evaluation outcome stands regardless of close
        finally:
            client.close()
        finished_at = time.time_ns()
        return EvaluationResult(
            evaluation_id=derive_evaluation_id(done.trace_id, record.agent_id),
            request=request,
            agent=record,
            started_at_ns=started_at,
            finished_at_ns=finished_at,
            per_request_measurements=tuple(measurements),
            model_version=SemVer.parse(response.model_version),
            framework_version=SemVer.parse(response.framework_version),
            trace_id=done.trace_id,
            clock_domain=done.clock_domain,
        )

    # -- job inspection ------------------------------------------------------

    def _job(self, job_id: str) -> EvaluationJob:
        with self._jobs_lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise UnknownJob(f"no such job: {job_id}")
        return job

    def job_status(self, job_id: str) -> dict:
        return self._job(job_id).status_body()

    def wait(self, job_id: str, timeout: float | None = None) -> str:
        """Block until the job is terminal (or the timeout elapses); returns its state."""
        job = self._job(job_id)
        job.wait(timeout)
        return job.snapshot()[0]

    def job_summary(self, job_id: str) -> dict:
        """Condensed per-agent metrics for a completed job.

        Every value is derived from stored measurements — no job ids, wall
        timestamps, or endpoints — so the same scenario, seed, and
        virtual-clock agent reproduce the summary byte for byte.
        """
        job = self._job(job_id)
        state, result_ids = job.snapshot()
        if state != "completed":
            raise JobNotCompleted(f"job {job_id} is {state}")
        results = [self.evaldb.get(evaluation_id) for evaluation_id in result_ids]
        present = sorted((r for r in results if r is not None),
                         key=lambda r: r.agent.agent_id)
        return {
            "summary_version": SUMMARY_VERSION,
            "state": state,
            "fan_out": job.fan_out,
            "request": job.request.to_body(),
            "hw": job.hw.to_body(),
            "input": job.input_spec.to_body(),
            "results": [_result_summary(result) for result in present],
        }

    # -- analysis ------------------------------------------------------------

    def submit_analysis(self, query_filter: QueryFilter | None = None, *,
                        title: str = "Evaluation report", top_k: int = 5,
                        include_timelines: bool = True) -> str:
        """Run the analysis pipeline over matching stored results.

        Queries the evaluation store, fetches any referenced timelines from
        the tracer, renders the report (JSON + HTML), and persists both
        under the store's ``reports/`` directory.  Returns the report id.
        """
        results = self.evaldb.query(query_filter)
        timelines: list[Timeline] = []
        if include_timelines and results:
            trace_ids = sorted({r.trace_id for r in results if r.trace_id})

            def fetch(client: TracerClient) -> None:
                for trace_id in trace_ids:
                    try:
                        timeline = client.timeline(trace_id)
                    except BenchrigError:
                        continue
                    if timeline.span_count and timeline.roots:
                        timelines.append(timeline)

            self._with_tracer(fetch)
        report = generate_report(results, timelines, title=title, top_k=top_k)
        report_id = new_ulid()
        self._persist_report(report_id, report_json(report), render_report_html(report))
        return report_id

    def _persist_report(self, report_id: str, json_bytes: bytes, html: str) -> None:
        self._reports_root.mkdir(parents=True, exist_ok=True)
        (self._reports_root / f"{report_id}.json").write_bytes(json_bytes)
        (self._reports_root / f"{report_id}.html").write_text(html, encoding="utf-8")
        with self._reports_lock:
            self._reports[report_id] = {"json": json_bytes, "html": html}

    def _report_entry(self, report_id: str) -> dict:
        with self._reports_lock:
            entry = self._reports.get(report_id)
        if entry is not None:
            return entry
        # Reports persist under the shared store, so one instance can serve
        # a report produced by another.
        if re.fullmatch(r"[0-9A-Za-z_-]+", report_id or ""):
            json_path = self._reports_root / f"{report_id}.json"
            html_path = self._reports_root / f"{report_id}.html"
            if json_path.is_file() and html_path.is_file():
                entry = {"json": json_path.read_bytes(),
                         "html": html_path.read_text(encoding="utf-8")}
                with self._reports_lock:
                    self._reports.setdefault(report_id, entry)
                return entry
        raise UnknownReport(f"no such report: {report_id}")

    def get_report_json(self, report_id: str) -> bytes:
        return self._report_entry(report_id)["json"]

    def get_report(self, report_id: str) -> dict:
        return json.loads(self.get_report_json(report_id))

    def get_report_html(self, report_id: str) -> str:
        return self._report_entry(report_id)["html"]

    # -- registry and tracer pass-throughs ------------------------------------

    def list_agents(self) -> list[AgentRecord]:
        return self._with_registry(lambda reg: reg.list_agents())

    def list_models(self) -> list[ModelManifest]:
        return self._with_registry(lambda reg: reg.list_models())

    def get_timeline(self, trace_id: str) -> Timeline:
        return self._with_tracer(lambda tracer: tracer.timeline(trace_id))


def _result_summary(result: EvaluationResult) -> dict:
    measurements = result.per_request_measurements
    timed = [m for m in measurements if not m.warmup]
    successes = [m for m in timed if m.success]
    latencies = [m.latency_ns / 1e6 for m in successes]
    body: dict[str, Any] = {
        "agent_id": result.agent.agent_id,
        "evaluation_id": result.evaluation_id,
        "trace_id": result.trace_id,
        "clock_domain": result.clock_domain,
        "model_version": str(result.model_version),
        "framework_version": str(result.framework_version),
        "request_count": len(measurements),
        "warmup_count": sum(1 for m in measurements if m.warmup),
        "sample_count": len(successes),
        "failure_count": len(timed) - len(successes),
        "latency": latency_summary(latencies).to_body() if latencies else None,
        "busy_ns": None,
        "throughput": None,
    }
    if timed:
        window = (max(m.issue_time_ns + m.latency_ns for m in timed)
                  - min(m.issue_time_ns for m in timed))
        if window > 0:
            body["busy_ns"] = window
            body["throughput"] = len(successes) * 1e9 / window
    return body


def _parse_body(from_body: Callable[[Mapping], Any], body: Mapping, what: str) -> Any:
    if not isinstance(body, Mapping):
        raise ValidationError(what, "must be a JSON object")
    try:
        return from_body(body)
    except BenchrigError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ValidationError(what, f"malformed: {exc}") from None


def _model_catalog_entry(manifest: ModelManifest) -> dict:
    return {
        "name": manifest.name,
        "version": str(manifest.version),
        "description": manifest.description,
        "framework": {"name": manifest.framework.name,
                      "constraint": str(manifest.framework.constraint)},
        "attributes": dict(manifest.attributes),
        "inputs": [{"modality": io.modality, "element_type": io.element_type}
                   for io in manifest.inputs],
        "outputs": [{"modality": io.modality, "element_type": io.element_type}
                    for io in manifest.outputs],
        "manifest_text": render_model_manifest(manifest),
    }


# ---------------------------------------------------------------------------
# REST API


_HTTP_STATUS_BY_CODE = {
    "validation": 400,
    "syntax": 400,
    "decode": 400,
    "empty_input": 400,
    "empty_workload": 400,
    "unknown_job": 404,
    "unknown_report": 404,
    "unknown_trace": 404,
    "not_found": 404,
    "job_not_completed": 409,
    "no_data": 409,
    "no_capable_agent": 409,
    "missing_baseline": 409,
    "version_conflict": 409,
    "registry_unreachable": 502,
    "rpc": 502,
}

_MAX_BODY_BYTES = 64 << 20


class _ApiHandler(BaseHTTPRequestHandler):
    server_version = "benchrig"
    protocol_version = "HTTP/1.1"

    # These attributes live on the server object (set by ApiServer).
    server: "_HttpServer"

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib name
        _LOG.debug("%s %s", self.address_string(), format % args)

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def _dispatch(self, method: str) -> None:
        try:
            self._route(method)
        except _Handled:
            pass  # the response was already written
        except BenchrigError as exc:
            status = _HTTP_STATUS_BY_CODE.get(exc.code, 500)
            self._send_json(status, {"error": {"code": exc.code, "message": str(exc)}})
        except Exception as exc:  # never leak a traceback as a broken socket
            _LOG.exception("unhandled error serving %s %s", method, self.path)
            self._send_json(500, {"error": {"code": "internal", "message": str(exc)}})

    # -- routing -------------------------------------------------------------

    def _route(self, method: str) -> None:
        path = urlsplit(self.path).path
        orch = self.server.orchestrator

        if path == "/api/v1/evaluations":
            self._require_method(method, "POST")
            body = self._read_json()
            request_body = body.get("request")
            if not isinstance(request_body, Mapping):
                raise ValidationError("request", "body must carry a request object")
            request = _parse_body(OpenRequest.from_body, request_body, "request")
            hw_body = body.get("hw")
            hw = (_parse_body(HardwareConstraint.from_body, hw_body, "hw")
                  if hw_body else None)
            input_body = body.get("input")
            spec = (_parse_body(InputSpec.from_body, input_body, "input")
                    if input_body else None)
            job_id = orch.submit_evaluation(request, hw,
                                            fan_out=body.get("fan_out", "one"),
                                            input_spec=spec)
            self._send_json(202, {"job_id": job_id})
            return

        match = re.fullmatch(r"/api/v1/evaluations/([^/]+)", path)
        if match:
            self._require_method(method, "GET")
            self._send_json(200, orch.job_status(match.group(1)))
            return

        match = re.fullmatch(r"/api/v1/evaluations/([^/]+)/summary", path)
        if match:
            self._require_method(method, "GET")
            self._send_json(200, canonical_json(orch.job_summary(match.group(1))))
            return

        if path == "/api/v1/analyses":
            self._require_method(method, "POST")
            body = self._read_json()
            filter_body = body.get("filter")
            query_filter = (_parse_body(QueryFilter.from_body, filter_body, "filter")
                            if filter_body else None)
            top_k = body.get("top_k", 5)
            if not isinstance(top_k, int) or isinstance(top_k, bool) or top_k < 1:
                raise ValidationError("top_k", "must be an integer >= 1")
            report_id = orch.submit_analysis(
                query_filter,
                title=str(body.get("title", "Evaluation report")),
                top_k=top_k,
                include_timelines=bool(body.get("include_timelines", True)))
            self._send_json(201, {"report_id": report_id})
            return

        match = re.fullmatch(r"/api/v1/analyses/([^/]+)", path)
        if match:
            self._require_method(method, "GET")
            self._send_json(200, orch.get_report_json(match.group(1)))
            return

        match = re.fullmatch(r"/api/v1/analyses/([^/]+)/html", path)
        if match:
            self._require_method(method, "GET")
            html = orch.get_report_html(match.group(1))
            self._send_bytes(200, html.encode("utf-8"), "text/html; charset=utf-8")
            return

        if path == "/api/v1/agents":
            self._require_method(method, "GET")
            records = orch.list_agents()
            self._send_json(200, {"agents": [r.to_body() for r in records]})
            return

        if path == "/api/v1/models":
            self._require_method(method, "GET")
            manifests = orch.list_models()
            self._send_json(200, {"models": [_model_catalog_entry(m)
                                             for m in manifests]})
            return

        match = re.fullmatch(r"/api/v1/traces/([^/]+)", path)
        if match:
            self._require_method(method, "GET")
            timeline = orch.get_timeline(match.group(1))
            if timeline.span_count == 0:
                raise UnknownTrace(f"no spans recorded for trace {match.group(1)}")
            self._send_json(200, timeline.to_body())
            return

        if path == "/" and self.server.ui_root is not None:
            self.send_response(302)
            self.send_header("Location", "/ui/")
            self.send_header("Content-Length", "0")
            self.end_headers()
            return

        if path == "/ui" or path.startswith("/ui/"):
            self._require_method(method, "GET")
            self._serve_static(path)
            return

        self._send_json(404, {"error": {"code": "not_found",
                                        "message": f"no route for {path}"}})

    def _require_method(self, method: str, expected: str) -> None:
        if method != expected:
            self._send_json(405, {"error": {"code": "method_not_allowed",
                                            "message": f"use {expected}"}})
            raise _Handled()

    # -- static UI -----------------------------------------------------------

    def _serve_static(self, path: str) -> None:
        root = self.server.ui_root
        if root is None:
            self._send_json(404, {"error": {"code": "not_found",
                                            "message": "no UI bundle configured"}})
            return
        relative = path[len("/ui"):].lstrip("/") or "index.html"
        target = (root / relative).resolve()
        root_resolved = root.resolve()
        if root_resolved != target and root_resolved not in target.parents:
            self._send_json(404, {"error": {"code": "not_found", "message": path}})
            return
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            # Client-side routes resolve to the SPA shell.
            target = root_resolved / "index.html"
            if not target.is_file():
                self._send_json(404, {"error": {"code": "not_found", "message": path}})
                return
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        if content_type.startswith("text/") or content_type in (
                "application/javascript", "application/json", "image/svg+xml"):
            content_type += "; charset=utf-8"
        self._send_bytes(200, target.read_bytes(), content_type)

    # -- I/O helpers -----------------------------------------------------------

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length <= 0:
            return {}
        if length > _MAX_BODY_BYTES:
            raise ValidationError("body", "request body too large")
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationError("body", f"malformed JSON: {exc}") from None
        if not isinstance(body, dict):
            raise ValidationError("body", "request body must be a JSON object")
        return body

    def _send_json(self, status: int, body) -> None:
        payload = body if isinstance(body, bytes) else canonical_json(body)
        self._send_bytes(status, payload, "application/json; charset=utf-8")

    def _send_bytes(self, status: int, payload: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


class _Handled(Exception):
    """Internal sentinel: the handler already wrote a response."""


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    orchestrator: Orchestrator
    ui_root: Path | None


class ApiServer:
    """Threaded HTTP front end for one :class:`Orchestrator`."""

    def __init__(self, orchestrator: Orchestrator, host: str = "127.0.0.1",
                 port: int = 0, ui_root: str | Path | None = None):
        self._http = _HttpServer((host, port), _ApiHandler)
        self._http.orchestrator = orchestrator
        self._http.ui_root = Path(ui_root) if ui_root is not None else None
        self.host, self.port = self._http.server_address[:2]
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(target=self._http.serve_forever,
                                        daemon=True, name=f"api-server-{self.port}")
        self._thread.start()
        return self

    def stop(self) -> None:
        self._http.shutdown()
        self._http.server_close()


def start_api_server(orchestrator: Orchestrator, host: str = "127.0.0.1",
                     port: int = 0, ui_root: str | Path | None = None) -> ApiServer:
    return ApiServer(orchestrator, host=host, port=port, ui_root=ui_root).start()
