"""The agent: a worker that serves evaluations on one system under test.

An agent advertises its hardware/software stack (architecture, devices,
predictor frameworks, built-in models) to the registry under a heartbeat
lease, and serves the evaluation protocol:

* ``Open`` — resolve the model manifest (inline or built-in), pick the
  predictor plug-in for the requested framework, fetch assets, load the
  model, and decide the evaluation's clock domain (virtual when the
  predictor models time, wall otherwise).
* ``Predict`` (streamed) — run the input items through the operator
  pipeline, streaming per-batch results back, then report trace totals.
* ``Close`` — unload the model and drop the handle.

Spans are recorded locally and published to the tracer in batches
(fire-and-forget with a final flush). The evaluation root span and the
model-load span (the cold-start cost) are emitted by the agent around
the pipeline's own per-stage spans.
"""

from __future__ import annotations

import platform
import threading
import time
import uuid
from typing import Iterable, Iterator, Sequence

from .assets import AssetCache
from .clock import Clock, WallClock
from .errors import (
    HandleClosed,
    IncompatibleManifest,
    RegistryUnreachable,
    UnsupportedFeature,
    ValidationError,
)
from .evaldb import EvaluationResult
from .ids import derive_evaluation_id, derive_span_id, derive_trace_id
from .manifest import ModelManifest, parse_model_manifest
from .pipeline import PipelineRun
from .predictor import (
    ModelHandle,
    Predictor,
    TraceBinding,
    available_frameworks,
    get_predictor,
)
from .protocol import (
    CloseRequest,
    CloseResponse,
    InputItem,
    OpenRequest,
    OpenResponse,
    PredictDone,
    PredictStart,
    RpcServer,
    ServerCall,
    TraceLevel,
    canonical_json,
)
from .registry import AgentRecord, Device, RegistryClient
from .scenarios import measurements_from_results
from .semver import SemVer, parse_constraint
from .tracer import SpanRecorder, TraceSpan

__all__ = [
    "AgentService",
    "AgentRuntime",
    "start_agent_server",
    "run_evaluation",
]


class _Session:
    """State for one open predictor handle."""

    def __init__(self, *, handle: ModelHandle, predictor: Predictor,
                 manifest: ModelManifest, request: OpenRequest,
                 trace_id: str, root_span_id: str,
                 recorder: SpanRecorder | None, captures: frozenset,
                 clock_domain: str, load_start_ns: int, load_end_ns: int,
                 input_steps, output_steps, element_type: str,
                 source_cost_ns: int):
        self.handle = handle
        self.predictor = predictor
        self.manifest = manifest
        self.request = request
        self.trace_id = trace_id
        self.root_span_id = root_span_id
        self.recorder = recorder
        self.captures = captures
        self.clock_domain = clock_domain
        self.load_start_ns = load_start_ns
        self.load_end_ns = load_end_ns
        self.input_steps = input_steps
        self.output_steps = output_steps
        self.element_type = element_type
        self.source_cost_ns = source_cost_ns
        self.busy = False
        self.done: PredictDone | None = None


class AgentService:
    """Evaluation protocol implementation over local predictor plug-ins."""

    def __init__(self, *,
                 agent_id: str | None = None,
                 architecture: str | None = None,
                 devices: Sequence[Device] = (),
                 frameworks: Sequence[str] = (),
                 builtin_manifests: Sequence[str] = (),
                 assets: AssetCache | None = None,
                 tracer_client=None,
                 interconnect: str | None = None,
                 clock: Clock | None = None):
        self.agent_id = agent_id or f"agent-{uuid.uuid4().hex[:12]}"
        self.architecture = architecture or platform.machine() or "unknown"
        self.devices = tuple(devices) or (
            Device(kind="cpu", name="host-cpu", memory_bytes=1 << 30, count=1),)
        self.framework_names = tuple(frameworks) or available_frameworks()
        self.interconnect = interconnect
        self.assets = assets
        self.tracer_client = tracer_client
        self.clock = clock or WallClock()
        self.endpoint = "127.0.0.1:0"  # updated once the server binds

        self._builtins: dict[str, dict[str, ModelManifest]] = {}
        for text in builtin_manifests:
            manifest = parse_model_manifest(text)
            self._builtins.setdefault(manifest.name, {})[str(manifest.version)] = manifest
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()

    # -- registry-facing ----------------------------------------------------

    def agent_record(self) -> AgentRecord:
        frameworks = []
        for name in self.framework_names:
            spec = get_predictor(name).spec()
            frameworks.append((spec.framework_name, spec.framework_version))
        builtin_models = tuple(
            (name, SemVer.parse(version))
            for name, versions in sorted(self._builtins.items())
            for version in sorted(versions, key=SemVer.parse)
        )
        return AgentRecord(
            agent_id=self.agent_id,
            endpoint=self.endpoint,
            architecture=self.architecture,
            devices=self.devices,
            frameworks=tuple(frameworks),
            builtin_models=builtin_models,
            interconnect=self.interconnect,
        )

    def active_sessions(self) -> int:
        with self._lock:
            return len(self._sessions)

    # -- protocol handlers ----------------------------------------------------

    def handlers(self) -> dict:
        return {
            OpenRequest: self._handle_open,
            PredictStart: self._handle_predict,
            CloseRequest: self._handle_close,
        }

    def _handle_open(self, call: ServerCall) -> OpenResponse:
        return self.open(call.request)

    def _handle_close(self, call: ServerCall) -> CloseResponse:
        return self.close(call.request.handle)

    def _handle_predict(self, call: ServerCall) -> PredictDone:
        def stream_items() -> Iterator[InputItem]:
            while True:
                msg = call.recv_item()
                if msg is None:
                    return
                if not isinstance(msg, InputItem):
                    raise ValidationError(
                        "predict", f"unexpected stream message "
                                   f"{type(msg).__name__}")
                yield msg

        for result in self.predict_stream(call.request.handle, stream_items()):
            call.send_item(result)
        call.end_items()
        return self.predict_done(call.request.handle)

    # -- core operations (also used in-process) -------------------------------

    def open(self, request: OpenRequest) -> OpenResponse:
        manifest = self._resolve_manifest(request)
        if len(manifest.inputs) != 1:
            raise UnsupportedFeature(
                f"model {manifest.name} declares {len(manifest.inputs)} inputs; "
                f"only single-input models are supported")
        if manifest.preprocess is not None or manifest.postprocess is not None:
            raise UnsupportedFeature(
                "custom preprocessing/postprocessing code is not executed; "
                "use declarative steps")

        framework_name = request.framework_name or manifest.framework.name
        predictor = get_predictor(framework_name)
        spec = predictor.spec()
        if request.framework_version:
            constraint = parse_constraint(request.framework_version)
            if not constraint.allows(spec.framework_version):
                raise IncompatibleManifest(
                    f"framework {spec.framework_name} {spec.framework_version} "
                    f"does not satisfy requested constraint "
                    f"{request.framework_version!r}")

        from .preprocess import compile_input_steps, compile_output_steps
        input_steps = compile_input_steps(manifest.inputs[0])
        labels = self._resolve_labels(manifest)
        output_steps = compile_output_steps(manifest.outputs[0], labels) \
            if manifest.outputs else []

        load_start_ns = self.clock.now_ns()
        handle = predictor.model_load(manifest, self.assets,
                                      request.predict_options)
        load_end_ns = self.clock.now_ns()

        virtual = predictor.virtual_latency_ns(handle, 1) is not None
        clock_domain = "virtual" if virtual else "wall"
        if virtual:
            load_start_ns = 0
            load_end_ns = predictor.virtual_load_ns(handle) or 0

        scenario = request.benchmark_scenario
        trace_id = request.trace_id or derive_trace_id(
            manifest.name, str(manifest.version),
            canonical_json(scenario.fingerprint_body()).decode("utf-8"),
            request.seed)
        captures = request.predict_options.trace_level.captures()
        recorder = SpanRecorder(sink=self.tracer_client) if captures else None
        root_span_id = derive_span_id(trace_id, "evaluation")
        handle.tracing = TraceBinding(
            trace_id=trace_id, recorder=recorder, captures=captures,
            clock_domain=clock_domain, clock=self.clock)

        source_cost_ns = _int_opt(request.predict_options.options,
                                  "source_cost_ns", 0)
        session = _Session(
            handle=handle, predictor=predictor, manifest=manifest,
            request=request, trace_id=trace_id, root_span_id=root_span_id,
            recorder=recorder, captures=captures, clock_domain=clock_domain,
            load_start_ns=load_start_ns, load_end_ns=load_end_ns,
            input_steps=input_steps, output_steps=output_steps,
            element_type=manifest.inputs[0].element_type,
            source_cost_ns=source_cost_ns)
        with self._lock:
            self._sessions[handle.handle_id] = session
        return OpenResponse(
            handle=handle.handle_id,
            clock_domain=clock_domain,
            model_version=str(manifest.version),
            framework_version=str(spec.framework_version),
        )

    def predict_stream(self, handle_id: str,
                       items: Iterable[InputItem]):
        """Run the pipeline for one evaluation; yields ResultItems."""
        session = self._session(handle_id)
        with self._lock:
            if session.busy:
                raise ValidationError(
                    "handle", "an evaluation is already running on this handle")
            session.busy = True
        try:
            t0_ns = (session.load_end_ns if session.clock_domain == "virtual"
                     else self.clock.now_ns())
            run = PipelineRun(
                predictor=session.predictor,
                handle=session.handle,
                options=session.request.predict_options,
                scenario=session.request.benchmark_scenario,
                input_steps=list(session.input_steps),
                output_steps=list(session.output_steps),
                element_type=session.element_type,
                trace_id=session.trace_id,
                root_span_id=session.root_span_id,
                recorder=session.recorder,
                captures=session.captures,
                clock_domain=session.clock_domain,
                t0_ns=t0_ns,
                clock=self.clock,
                source_cost_ns=session.source_cost_ns,
            )
            yield from run.run(items)
            self._finish_trace(session, run)
            session.done = PredictDone(
                trace_id=session.trace_id,
                clock_domain=session.clock_domain,
                item_count=run.item_count,
                batch_count=run.batch_count,
                span_count=(session.recorder.recorded_count
                            if session.recorder else 0),
            )
        finally:
            session.busy = False

    def predict_done(self, handle_id: str) -> PredictDone:
        session = self._session(handle_id)
        if session.done is None:
            raise ValidationError("handle", "no completed evaluation on this handle")
        return session.done

    def close(self, handle_id: str) -> CloseResponse:
        with self._lock:
            session = self._sessions.pop(handle_id, None)
        if session is None:
            raise ValidationError("handle", f"unknown handle {handle_id!r}")
        session.predictor.model_unload(session.handle)
        return CloseResponse(handle=handle_id)

    # -- internals ------------------------------------------------------------

    def _session(self, handle_id: str) -> _Session:
        with self._lock:
            session = self._sessions.get(handle_id)
        if session is None:
            raise ValidationError("handle", f"unknown handle {handle_id!r}")
        if session.handle.closed:
            raise HandleClosed(f"handle {handle_id} is closed")
        return session

    def _resolve_manifest(self, request: OpenRequest) -> ModelManifest:
        if request.model_manifest:
            return parse_model_manifest(request.model_manifest)
        versions = self._builtins.get(request.model_name)
        if not versions:
            raise ValidationError(
                "model_name",
                f"agent has no built-in model {request.model_name!r}")
        constraint = parse_constraint(request.model_version or "")
        matching = [SemVer.parse(v) for v in versions
                    if constraint.allows(SemVer.parse(v))]
        if not matching:
            raise ValidationError(
                "model_version",
                f"no version of {request.model_name} satisfies "
                f"{request.model_version!r}")
        return versions[str(max(matching))]

    def _resolve_labels(self, manifest: ModelManifest) -> dict[str, list[str]]:
        labels: dict[str, list[str]] = {}
        for output in manifest.outputs:
            for step in output.steps:
                if step.op != "argsort":
                    continue
                url = step.params["labels_url"]
                if self.assets is None:
                    raise ValidationError(
                        "labels_url", "agent has no asset cache to fetch labels")
                path = self.assets.fetch_asset(url)
                text = path.read_text(encoding="utf-8")
                labels[url] = [line for line in text.splitlines() if line]
        return labels

    def _finish_trace(self, session: _Session, run: PipelineRun) -> None:
        """Emit the model-load and evaluation-root spans, then flush."""
        recorder = session.recorder
        if recorder is not None and TraceLevel.MODEL in session.captures:
            root_start = (0 if session.clock_domain == "virtual"
                          else session.load_start_ns)
            root_end = max(run.last_end_ns, session.load_end_ns)
            recorder.record(TraceSpan(
                trace_id=session.trace_id,
                span_id=derive_span_id(session.trace_id, "model_load"),
                parent_span_id=session.root_span_id,
                name="model_load",
                level=TraceLevel.MODEL,
                start_ns=session.load_start_ns,
                end_ns=session.load_end_ns,
                clock_domain=session.clock_domain,
                attributes={"model": session.manifest.name,
                            "version": str(session.manifest.version)},
            ))
            recorder.record(TraceSpan(
                trace_id=session.trace_id,
                span_id=session.root_span_id,
                parent_span_id=None,
                name="evaluation",
                level=TraceLevel.MODEL,
                start_ns=root_start,
                end_ns=root_end,
                clock_domain=session.clock_domain,
                attributes={"model": session.manifest.name,
                            "scenario": session.request.benchmark_scenario.kind},
            ))
        if recorder is not None:
            recorder.flush()


def _int_opt(options, key: str, default: int) -> int:
    raw = options.get(key)
    if raw is None:
        return default
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"options.{key}", f"must be an integer, got {raw!r}")
    if value < 0:
        raise ValidationError(f"options.{key}", "must be >= 0")
    return value


def start_agent_server(service: AgentService, host: str = "127.0.0.1",
                       port: int = 0) -> RpcServer:
    server = RpcServer(service.handlers(), host=host, port=port).start()
    service.endpoint = server.endpoint
    return server


class AgentRuntime:
    """Keeps an agent registered: lease registration plus heartbeats.

    Heartbeats run every ttl/3 and carry the current in-flight session
    count. If the registry is unreachable the runtime retries with
    exponential backoff and stays unregistered in between.
    """

    def __init__(self, service: AgentService, registry_endpoint: str,
                 ttl_seconds: float = 10.0):
        self.service = service
        self.registry_endpoint = registry_endpoint
        self.ttl_seconds = ttl_seconds
        self.lease_id: str | None = None
        self._client: RegistryClient | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> "AgentRuntime":
        self._thread = threading.Thread(target=self._loop, daemon=True,
                                        name=f"agent-runtime-{self.service.agent_id}")
        self._thread.start()
        return self

    def wait_registered(self, timeout: float = 10.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.lease_id is not None:
                return True
            time.sleep(0.01)
        return self.lease_id is not None

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
        if self._client is not None and self.lease_id is not None:
            try:
                self._client.deregister(self.lease_id)
            except Exception:
                pass
        if self._client is not None:
            self._client.close()

    def _loop(self) -> None:
        backoff = 0.2
        while not self._stop.is_set():
            try:
                if self._client is None:
                    self._client = RegistryClient(self.registry_endpoint)
                if self.lease_id is None:
                    lease_id, _ = self._client.register(
                        self.service.agent_record(), self.ttl_seconds)
                    self.lease_id = lease_id
                    backoff = 0.2
                self._stop.wait(self.ttl_seconds / 3.0)
                if self._stop.is_set():
                    return
                self._client.heartbeat(self.lease_id,
                                       inflight=self.service.active_sessions())
            except Exception:
                # Registry unreachable or lease lost: retry from scratch.
                self.lease_id = None
                if self._client is not None:
                    try:
                        self._client.close()
                    except Exception:
                        pass
                    self._client = None
                self._stop.wait(backoff)
                backoff = min(backoff * 2, 5.0)


def run_evaluation(service: AgentService, request: OpenRequest,
                   items: Sequence[InputItem]) -> EvaluationResult:
    """Run one evaluation in-process and assemble its result record."""
    started_at = time.time_ns()
    response = service.open(request)
    try:
        results = list(service.predict_stream(response.handle, iter(items)))
        done = service.predict_done(response.handle)
    finally:
        try:
            service.close(response.handle)
        except Exception:
            pass
    finished_at = time.time_ns()
    scenario = request.benchmark_scenario
    offsets = None
    if scenario.kind == "online":
        offsets = [item.scheduled_ns for item in sorted(items, key=lambda i: i.sequence)]
    measurements = measurements_from_results(
        results, scenario.warmup_count, offsets)
    record = service.agent_record()
    return EvaluationResult(
        evaluation_id=derive_evaluation_id(done.trace_id, service.agent_id),
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
