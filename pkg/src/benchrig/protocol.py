"""Wire protocol shared by server, agents, registry, and tracer.

Frame layout (bit-exact, all integers big-endian)::

    [u32 length][u64 request_id][u8 frame_kind][JSON body]

``length`` counts every byte after the length field itself (8 + 1 +
len(body)). Frame kinds: 0=request, 1=response, 2=stream_item,
3=end_of_stream, 4=error. Bodies are canonical JSON (sorted keys, compact
separators, UTF-8) carrying a snake_case ``type`` discriminator; unknown
fields are ignored on decode for forward compatibility.

Trace levels are frozen to the published enum: NONE=0, MODEL=1, FRAMEWORK=2,
SYSTEM=3, FULL=4.

Transport: one persistent TCP connection per peer with request-id
multiplexing. A unary call is REQUEST -> RESPONSE|ERROR. A streaming call
interleaves STREAM_ITEM frames in both directions under one request id; each
direction terminates its stream with END_OF_STREAM, and the callee ends the
call with a final RESPONSE (or ERROR at any point).
"""

from __future__ import annotations

import itertools
import json
import queue
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Iterator, Mapping

from .errors import (
    BenchrigError,
    DecodeError,
    RpcError,
    ValidationError,
    error_from_code,
)

__all__ = [
    "TraceLevel",
    "Arrival",
    "BenchmarkScenario",
    "PredictOptions",
    "OpenRequest",
    "OpenResponse",
    "InputItem",
    "ResultItem",
    "PredictStart",
    "PredictDone",
    "CloseRequest",
    "CloseResponse",
    "FRAME_REQUEST",
    "FRAME_RESPONSE",
    "FRAME_STREAM_ITEM",
    "FRAME_END_OF_STREAM",
    "FRAME_ERROR",
    "encode_frame",
    "encode_message",
    "decode_message",
    "canonical_json",
    "register_message",
    "FrameConnection",
    "RpcClient",
    "RpcServer",
    "ServerCall",
    "StreamCall",
]


class TraceLevel(IntEnum):
    """Capture granularity. Numeric values are frozen; renumbering is a protocol break."""

    NONE = 0
    MODEL = 1       # steps in the evaluation pipeline
    FRAMEWORK = 2   # layers within the framework and above
    SYSTEM = 3      # the system profilers and above
    FULL = 4        # includes all of the above

    def captures(self) -> frozenset["TraceLevel"]:
        """The set of span levels recorded when capturing at this level."""
        if self is TraceLevel.NONE:
            return frozenset()
        if self is TraceLevel.MODEL:
            return frozenset({TraceLevel.MODEL})
        if self is TraceLevel.FRAMEWORK:
            return frozenset({TraceLevel.MODEL, TraceLevel.FRAMEWORK})
        return frozenset({TraceLevel.MODEL, TraceLevel.FRAMEWORK, TraceLevel.SYSTEM})

    @classmethod
    def from_name(cls, name: str) -> "TraceLevel":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValidationError("trace_level", f"unknown level {name!r}") from None


# ---------------------------------------------------------------------------
# Canonical JSON + message registry

_MESSAGE_TYPES: dict[str, type] = {}


def canonical_json(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")


def register_message(type_name: str):
    """Class decorator registering a message dataclass under its wire type name."""

    def decorate(cls):
        cls.TYPE = type_name
        _MESSAGE_TYPES[type_name] = cls
        return cls

    return decorate


def encode_message(msg: Any) -> bytes:
    body = msg.to_body()
    body["type"] = msg.TYPE
    return canonical_json(body)


def decode_message(data: bytes) -> Any:
    try:
        body = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"malformed message body: {exc}") from exc
    if not isinstance(body, dict):
        raise DecodeError("message body must be a JSON object")
    type_name = body.get("type")
    cls = _MESSAGE_TYPES.get(type_name)
    if cls is None:
        raise DecodeError(f"unknown message type {type_name!r}")
    try:
        return cls.from_body(body)
    except BenchrigError as exc:
        raise DecodeError(f"invalid {type_name} message: {exc}") from exc
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DecodeError(f"invalid {type_name} message: {exc}") from exc


def _require_str(value: Any, name: str, *, allow_empty: bool = True) -> str:
    if not isinstance(value, str) or (not allow_empty and not value):
        raise ValidationError(name, "must be a string" + ("" if allow_empty else " (nonempty)"))
    return value


# ---------------------------------------------------------------------------
# Core protocol types (field names mirror the published RPC contract)


@register_message("arrival")
@dataclass(frozen=True)
class Arrival:
    """Online arrival process: distribution in {poisson, uniform, fixed}, rate req/s."""

    distribution: str
    rate: float

    def __post_init__(self):
        if self.distribution not in ("poisson", "uniform", "fixed"):
            raise ValidationError("arrival.distribution",
                                  f"must be poisson, uniform, or fixed, got {self.distribution!r}")
        if not isinstance(self.rate, (int, float)) or isinstance(self.rate, bool) or self.rate <= 0:
            raise ValidationError("arrival.rate", "must be a positive number")

    def to_body(self) -> dict:
        return {"distribution": self.distribution, "rate": float(self.rate)}

    @classmethod
    def from_body(cls, body: Mapping) -> "Arrival":
        return cls(distribution=body["distribution"], rate=body["rate"])


@register_message("benchmark_scenario")
@dataclass(frozen=True)
class BenchmarkScenario:
    """Workload shape: batched closed-loop or online open-loop.

    Exactly one of batch_size (batched) / arrival (online) is populated, and
    exactly one of request_count / duration_seconds bounds the run.
    """

    kind: str
    batch_size: int | None = None
    arrival: Arrival | None = None
    request_count: int | None = None
    duration_seconds: float | None = None
    warmup_count: int = 0

    def __post_init__(self):
        if self.kind not in ("batched", "online"):
            raise ValidationError("scenario.kind", f"must be batched or online, got {self.kind!r}")
        if self.kind == "batched":
            if not isinstance(self.batch_size, int) or isinstance(self.batch_size, bool) \
                    or self.batch_size < 1:
                raise ValidationError("scenario.batch_size", "must be a positive integer")
            if self.arrival is not None:
                raise ValidationError("scenario.arrival", "not allowed for batched scenarios")
        else:
            if self.arrival is None:
                raise ValidationError("scenario.arrival", "required for online scenarios")
            if self.batch_size is not None:
                raise ValidationError("scenario.batch_size", "not allowed for online scenarios")
        has_count = self.request_count is not None
        has_duration = self.duration_seconds is not None
        if has_count == has_duration:
            raise ValidationError("scenario",
                                  "exactly one of request_count / duration_seconds is required")
        if has_count and (not isinstance(self.request_count, int)
                          or isinstance(self.request_count, bool) or self.request_count < 1):
            raise ValidationError("scenario.request_count", "must be an integer >= 1")
        if has_duration and (not isinstance(self.duration_seconds, (int, float))
                             or isinstance(self.duration_seconds, bool)
                             or self.duration_seconds <= 0):
            raise ValidationError("scenario.duration_seconds", "must be positive")
        if not isinstance(self.warmup_count, int) or isinstance(self.warmup_count, bool) \
                or self.warmup_count < 0:
            raise ValidationError("scenario.warmup_count", "must be a non-negative integer")

    def fingerprint_body(self) -> dict:
        return self.to_body()

    def to_body(self) -> dict:
        body: dict[str, Any] = {"kind": self.kind, "warmup_count": self.warmup_count}
        if self.batch_size is not None:
            body["batch_size"] = self.batch_size
        if self.arrival is not None:
            body["arrival"] = self.arrival.to_body()
        if self.request_count is not None:
            body["request_count"] = self.request_count
        if self.duration_seconds is not None:
            body["duration_seconds"] = float(self.duration_seconds)
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "BenchmarkScenario":
        arrival = body.get("arrival")
        return cls(
            kind=body["kind"],
            batch_size=body.get("batch_size"),
            arrival=Arrival.from_body(arrival) if arrival is not None else None,
            request_count=body.get("request_count"),
            duration_seconds=body.get("duration_seconds"),
            warmup_count=body.get("warmup_count", 0),
        )


@register_message("predict_options")
@dataclass(frozen=True)
class PredictOptions:
    trace_level: TraceLevel = TraceLevel.NONE
    options: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.trace_level, TraceLevel):
            raise ValidationError("trace_level", "must be a TraceLevel")
        for key, value in self.options.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise ValidationError("options", "must be a string-to-string map")

    def to_body(self) -> dict:
        return {"trace_level": int(self.trace_level), "options": dict(self.options)}

    @classmethod
    def from_body(cls, body: Mapping) -> "PredictOptions":
        return cls(trace_level=TraceLevel(int(body.get("trace_level", 0))),
                   options=dict(body.get("options", {})))


@register_message("open_request")
@dataclass(frozen=True)
class OpenRequest:
    """Opens a predictor on an agent for one evaluation."""

    benchmark_scenario: BenchmarkScenario
    predict_options: PredictOptions
    model_name: str = ""
    model_version: str = ""
    framework_name: str = ""
    framework_version: str = ""
    model_manifest: str = ""  # optional inline manifest text
    trace_id: str = ""
    seed: int = 0

    def __post_init__(self):
        if not self.model_name and not self.model_manifest:
            raise ValidationError(
                "open_request", "either model_name or an inline model_manifest is required")

    def to_body(self) -> dict:
        return {
            "model_name": self.model_name,
            "model_version": self.model_version,
            "framework_name": self.framework_name,
            "framework_version": self.framework_version,
            "model_manifest": self.model_manifest,
            "benchmark_scenario": self.benchmark_scenario.to_body(),
            "predict_options": self.predict_options.to_body(),
            "trace_id": self.trace_id,
            "seed": self.seed,
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "OpenRequest":
        return cls(
            benchmark_scenario=BenchmarkScenario.from_body(body["benchmark_scenario"]),
            predict_options=PredictOptions.from_body(body["predict_options"]),
            model_name=_require_str(body.get("model_name", ""), "model_name"),
            model_version=_require_str(body.get("model_version", ""), "model_version"),
            framework_name=_require_str(body.get("framework_name", ""), "framework_name"),
            framework_version=_require_str(body.get("framework_version", ""), "framework_version"),
            model_manifest=_require_str(body.get("model_manifest", ""), "model_manifest"),
            trace_id=_require_str(body.get("trace_id", ""), "trace_id"),
            seed=int(body.get("seed", 0)),
        )


@register_message("open_response")
@dataclass(frozen=True)
class OpenResponse:
    handle: str  # PredictorHandle: opaque, unique per open predictor within an agent
    clock_domain: str = "wall"
    model_version: str = ""
    framework_version: str = ""

    def to_body(self) -> dict:
        return {"handle": self.handle, "clock_domain": self.clock_domain,
                "model_version": self.model_version,
                "framework_version": self.framework_version}

    @classmethod
    def from_body(cls, body: Mapping) -> "OpenResponse":
        return cls(handle=body["handle"],
                   clock_domain=body.get("clock_domain", "wall"),
                   model_version=body.get("model_version", ""),
                   framework_version=body.get("framework_version", ""))


@register_message("predict_start")
@dataclass(frozen=True)
class PredictStart:
    """Starts the streamed Predict call for an open handle."""

    handle: str

    def to_body(self) -> dict:
        return {"handle": self.handle}

    @classmethod
    def from_body(cls, body: Mapping) -> "PredictStart":
        return cls(handle=body["handle"])


@register_message("input_item")
@dataclass(frozen=True)
class InputItem:
    """One user-data element streamed to the agent."""

    sequence: int
    payload_b64: str = ""            # raw input bytes (e.g. an image file)
    tensor: Mapping | None = None    # or an already-materialized TensorValue body
    scheduled_ns: int = 0            # intended issue time (schedule offset)
    issued_ns: int = 0               # actual client issue time
    warmup: bool = False

    def to_body(self) -> dict:
        body: dict[str, Any] = {
            "sequence": self.sequence,
            "scheduled_ns": self.scheduled_ns,
            "issued_ns": self.issued_ns,
            "warmup": self.warmup,
        }
        if self.payload_b64:
            body["payload_b64"] = self.payload_b64
        if self.tensor is not None:
            body["tensor"] = dict(self.tensor)
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "InputItem":
        return cls(
            sequence=int(body["sequence"]),
            payload_b64=body.get("payload_b64", ""),
            tensor=body.get("tensor"),
            scheduled_ns=int(body.get("scheduled_ns", 0)),
            issued_ns=int(body.get("issued_ns", 0)),
            warmup=bool(body.get("warmup", False)),
        )


@register_message("result_item")
@dataclass(frozen=True)
class ResultItem:
    """Per-batch result streamed back from the agent (online batches have size 1)."""

    sequence: int                    # batch sequence number
    item_sequences: tuple[int, ...]  # input items contained in the batch
    batch_size: int
    start_ns: int                    # service start, agent clock domain
    end_ns: int                      # last completion for the batch
    warmup: bool = False
    success: bool = True
    error: str = ""
    outputs: tuple = ()              # per-item output summaries (JSON-safe)

    def to_body(self) -> dict:
        return {
            "sequence": self.sequence,
            "item_sequences": list(self.item_sequences),
            "batch_size": self.batch_size,
            "start_ns": self.start_ns,
            "end_ns": self.end_ns,
            "warmup": self.warmup,
            "success": self.success,
            "error": self.error,
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "ResultItem":
        return cls(
            sequence=int(body["sequence"]),
            item_sequences=tuple(int(s) for s in body.get("item_sequences", ())),
            batch_size=int(body["batch_size"]),
            start_ns=int(body["start_ns"]),
            end_ns=int(body["end_ns"]),
            warmup=bool(body.get("warmup", False)),
            success=bool(body.get("success", True)),
            error=body.get("error", ""),
            outputs=tuple(body.get("outputs", ())),
        )


@register_message("predict_done")
@dataclass(frozen=True)
class PredictDone:
    """Final response of a Predict stream."""

    trace_id: str
    clock_domain: str
    item_count: int
    batch_count: int
    span_count: int = 0

    def to_body(self) -> dict:
        return {"trace_id": self.trace_id, "clock_domain": self.clock_domain,
                "item_count": self.item_count, "batch_count": self.batch_count,
                "span_count": self.span_count}

    @classmethod
    def from_body(cls, body: Mapping) -> "PredictDone":
        return cls(trace_id=body["trace_id"], clock_domain=body["clock_domain"],
                   item_count=int(body["item_count"]), batch_count=int(body["batch_count"]),
                   span_count=int(body.get("span_count", 0)))


@register_message("close_request")
@dataclass(frozen=True)
class CloseRequest:
    handle: str

    def to_body(self) -> dict:
        return {"handle": self.handle}

    @classmethod
    def from_body(cls, body: Mapping) -> "CloseRequest":
        return cls(handle=body["handle"])


@register_message("close_response")
@dataclass(frozen=True)
class CloseResponse:
    handle: str

    def to_body(self) -> dict:
        return {"handle": self.handle}

    @classmethod
    def from_body(cls, body: Mapping) -> "CloseResponse":
        return cls(handle=body["handle"])


# ---------------------------------------------------------------------------
# Frame codec

FRAME_REQUEST = 0
FRAME_RESPONSE = 1
FRAME_STREAM_ITEM = 2
FRAME_END_OF_STREAM = 3
FRAME_ERROR = 4

_VALID_KINDS = (FRAME_REQUEST, FRAME_RESPONSE, FRAME_STREAM_ITEM,
                FRAME_END_OF_STREAM, FRAME_ERROR)

_HEADER = struct.Struct(">IQB")  # length, request_id, frame_kind
_MAX_FRAME = 64 * 1024 * 1024


def encode_frame(request_id: int, kind: int, body: bytes) -> bytes:
    if kind not in _VALID_KINDS:
        raise ValidationError("frame_kind", f"unknown frame kind {kind}")
    return _HEADER.pack(9 + len(body), request_id, kind) + body


def encode_error_body(code: str, message: str) -> bytes:
    return canonical_json({"type": "error", "code": code, "message": message})


def decode_error_body(body: bytes) -> BenchrigError:
    try:
        doc = json.loads(body.decode("utf-8"))
        return error_from_code(doc.get("code", "rpc"), doc.get("message", ""))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return RpcError("malformed error frame")


class FrameConnection:
    """Blocking frame I/O over a socket; writes are serialized by a lock."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self._wlock = threading.Lock()

    def send(self, request_id: int, kind: int, body: bytes) -> None:
        frame = encode_frame(request_id, kind, body)
        with self._wlock:
            self._sock.sendall(frame)

    def recv(self) -> tuple[int, int, bytes] | None:
        """Next frame, or None on clean EOF."""
        header = self._rfile.read(4)
        if not header:
            return None
        if len(header) < 4:
            raise DecodeError("truncated frame header")
        (length,) = struct.unpack(">I", header)
        if length < 9:
            raise DecodeError(f"frame length {length} shorter than its fixed fields")
        if length > _MAX_FRAME:
            raise DecodeError(f"frame length {length} exceeds the {_MAX_FRAME}-byte limit")
        rest = self._rfile.read(length)
        if len(rest) < length:
            raise DecodeError("truncated frame")
        request_id, kind = struct.unpack(">QB", rest[:9])
        if kind not in _VALID_KINDS:
            raise DecodeError(f"unknown frame kind {kind}")
        return request_id, kind, rest[9:]

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._rfile.close()
        except OSError:
            pass
        self._sock.close()


# ---------------------------------------------------------------------------
# RPC client

_CLOSED = object()


class StreamCall:
    """Client-side handle on one streaming call."""

    def __init__(self, client: "RpcClient", request_id: int):
        self._client = client
        self._request_id = request_id
        self._inbox: "queue.Queue" = queue.Queue()
        self._final: Any = None
        self._finished = False

    # -- sending -----------------------------------------------------------
    def send_item(self, msg: Any) -> None:
        self._client._send(self._request_id, FRAME_STREAM_ITEM, encode_message(msg))

    def finish_sending(self) -> None:
        self._client._send(self._request_id, FRAME_END_OF_STREAM, b"")

    # -- receiving ----------------------------------------------------------
    def items(self, timeout: float | None = None) -> Iterator[Any]:
        """Yield stream items until the peer's END_OF_STREAM (or final response)."""
        while True:
            kind, payload = self._next(timeout)
            if kind == FRAME_STREAM_ITEM:
                yield payload
            elif kind == FRAME_END_OF_STREAM:
                return
            elif kind == FRAME_RESPONSE:
                self._final = payload
                self._finished = True
                return
            else:  # FRAME_ERROR
                self._finished = True
                raise payload

    def result(self, timeout: float | None = None) -> Any:
        """The final response message (consumes any unread items)."""
        if self._finished and self._final is not None:
            return self._final
        while True:
            kind, payload = self._next(timeout)
            if kind == FRAME_RESPONSE:
                self._final = payload
                self._finished = True
                return payload
            if kind == FRAME_ERROR:
                self._finished = True
                raise payload
            # stream items / end-of-stream markers are skipped here

    def _next(self, timeout: float | None):
        try:
            entry = self._inbox.get(timeout=timeout if timeout is not None
                                    else self._client.timeout)
        except queue.Empty:
            raise RpcError("call timed out") from None
        if entry is _CLOSED:
            raise RpcError("connection closed during call")
        return entry


class RpcClient:
    """Persistent connection with request-id multiplexed calls."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.timeout = timeout
        try:
            sock = socket.create_connection((host, port), timeout=10.0)
        except OSError as exc:
            raise RpcError(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._conn = FrameConnection(sock)
        self._calls: dict[int, StreamCall] = {}
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="rpc-client-reader")
        self._reader.start()

    @classmethod
    def for_endpoint(cls, endpoint: str, timeout: float = 30.0) -> "RpcClient":
        host, _, port = endpoint.rpartition(":")
        return cls(host, int(port), timeout=timeout)

    def call(self, msg: Any, timeout: float | None = None) -> Any:
        """Unary call: one request frame, one response (or raised error)."""
        stream = self.open_stream(msg)
        try:
            return stream.result(timeout)
        finally:
            self._forget(stream._request_id)

    def open_stream(self, msg: Any) -> StreamCall:
        if self._closed:
            raise RpcError("client is closed")
        request_id = next(self._ids)
        stream = StreamCall(self, request_id)
        with self._lock:
            self._calls[request_id] = stream
        try:
            self._send(request_id, FRAME_REQUEST, encode_message(msg))
        except Exception:
            self._forget(request_id)
            raise
        return stream

    def finish_call(self, stream: StreamCall) -> None:
        self._forget(stream._request_id)

    def _send(self, request_id: int, kind: int, body: bytes) -> None:
        try:
            self._conn.send(request_id, kind, body)
        except OSError as exc:
            raise RpcError(f"send failed: {exc}") from exc

    def _forget(self, request_id: int) -> None:
        with self._lock:
            self._calls.pop(request_id, None)

    def _read_loop(self) -> None:
        try:
            while True:
                frame = self._conn.recv()
                if frame is None:
                    break
                request_id, kind, body = frame
                with self._lock:
                    stream = self._calls.get(request_id)
                if stream is None:
                    continue  # response for a forgotten call
                if kind == FRAME_ERROR:
                    stream._inbox.put((kind, decode_error_body(body)))
                elif kind == FRAME_END_OF_STREAM:
                    stream._inbox.put((kind, None))
                else:
                    try:
                        stream._inbox.put((kind, decode_message(body)))
                    except DecodeError as exc:
                        stream._inbox.put((FRAME_ERROR, exc))
        except (OSError, DecodeError):
            pass
        finally:
            with self._lock:
                pending = list(self._calls.values())
                self._calls.clear()
            for stream in pending:
                stream._inbox.put(_CLOSED)

    def close(self) -> None:
        self._closed = True
        self._conn.close()


# ---------------------------------------------------------------------------
# RPC server


class ServerCall:
    """Handler-side view of one call: the request, its input stream, an item sink."""

    def __init__(self, request: Any, conn: FrameConnection, request_id: int):
        self.request = request
        self._conn = conn
        self._request_id = request_id
        self._inbox: "queue.Queue" = queue.Queue()
        self._streaming_done = False

    def recv_item(self, timeout: float | None = 300.0) -> Any | None:
        """Next client stream item, or None once the client ends its stream."""
        if self._streaming_done:
            return None
        try:
            entry = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise RpcError("timed out waiting for stream items") from None
        if entry is None or entry is _CLOSED:
            self._streaming_done = True
            return None
        return entry

    def send_item(self, msg: Any) -> None:
        self._conn.send(self._request_id, FRAME_STREAM_ITEM, encode_message(msg))

    def end_items(self) -> None:
        self._conn.send(self._request_id, FRAME_END_OF_STREAM, b"")


Handler = Callable[[ServerCall], Any]


class RpcServer:
    """Threaded frame-protocol server dispatching requests by message class."""

    def __init__(self, handlers: Mapping[type, Handler], host: str = "127.0.0.1",
                 port: int = 0):
        self._handlers = dict(handlers)
        outer = self

        class _ConnHandler(socketserver.BaseRequestHandler):
            def handle(self):  # one thread per connection
                outer._serve_connection(self.request)

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, port), _ConnHandler)
        self.host, self.port = self._server.server_address
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "RpcServer":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True, name=f"rpc-server-{self.port}")
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    # -- connection loop ----------------------------------------------------
    def _serve_connection(self, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn = FrameConnection(sock)
        active: dict[int, ServerCall] = {}
        active_lock = threading.Lock()
        try:
            while True:
                try:
                    frame = conn.recv()
                except DecodeError as exc:
                    # Framing is broken; the connection cannot recover.
                    try:
                        conn.send(0, FRAME_ERROR, encode_error_body(exc.code, str(exc)))
                    except OSError:
                        pass
                    break
                if frame is None:
                    break
                request_id, kind, body = frame
                if kind == FRAME_REQUEST:
                    try:
                        request = decode_message(body)
                    except DecodeError as exc:
                        conn.send(request_id, FRAME_ERROR,
                                  encode_error_body(exc.code, str(exc)))
                        continue
                    call = ServerCall(request, conn, request_id)
                    handler = self._handlers.get(type(request))
                    if handler is None:
                        conn.send(request_id, FRAME_ERROR,
                                  encode_error_body("rpc", f"no handler for "
                                                           f"{type(request).__name__}"))
                        continue
                    with active_lock:
                        active[request_id] = call
                    threading.Thread(
                        target=self._run_handler,
                        args=(handler, call, conn, request_id, active, active_lock),
                        daemon=True, name=f"rpc-handler-{request_id}",
                    ).start()
                elif kind == FRAME_STREAM_ITEM:
                    with active_lock:
                        call = active.get(request_id)
                    if call is not None:
                        try:
                            call._inbox.put(decode_message(body))
                        except DecodeError as exc:
                            conn.send(request_id, FRAME_ERROR,
                                      encode_error_body(exc.code, str(exc)))
                elif kind == FRAME_END_OF_STREAM:
                    with active_lock:
                        call = active.get(request_id)
                    if call is not None:
                        call._inbox.put(None)
                # FRAME_RESPONSE / FRAME_ERROR from a client are ignored.
        except OSError:
            pass
        finally:
            with active_lock:
                pending = list(active.values())
                active.clear()
            for call in pending:
                call._inbox.put(_CLOSED)
            conn.close()

    @staticmethod
    def _run_handler(handler: Handler, call: ServerCall, conn: FrameConnection,
                     request_id: int, active: dict, active_lock: threading.Lock) -> None:
        try:
            response = handler(call)
            conn.send(request_id, FRAME_RESPONSE, encode_message(response))
        except BenchrigError as exc:
            try:
                conn.send(request_id, FRAME_ERROR, encode_error_body(exc.code, str(exc)))
            except OSError:
                pass
        except Exception as exc:  # noqa: BLE001 — surface handler bugs to the caller
            try:
                conn.send(request_id, FRAME_ERROR,
                          encode_error_body("internal", f"{type(exc).__name__}: {exc}"))
            except OSError:
                pass
        finally:
            with active_lock:
                active.pop(request_id, None)
