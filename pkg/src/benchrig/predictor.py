"""Framework predictor plug-ins.

A predictor adapts one ML framework to the platform through a deliberately
small surface: ``model_load``, ``predict``, ``model_unload``, plus a
``spec()`` describing what the plug-in serves. Everything else — tracing,
virtual-time scheduling — rides on optional attributes of the returned
:class:`ModelHandle` that a predictor is free to ignore entirely; a no-op
predictor implementing only the three operations is a valid plug-in.

Two predictors ship in-tree:

* :class:`SimulatedPredictor` — a deterministic latency model (``L(b) =
  base + per_item * b``) running entirely in virtual time. It produces
  byte-identical span timelines for a fixed configuration, which is what
  makes end-to-end determinism testable.
* :class:`LinearPredictor` — a real computation (``logits = X @ W + c``)
  with weights loaded from a binary file, running on the wall clock.

Plug-ins register in a process-wide table keyed by framework name; agents
consult the table to serve open requests.
"""

from __future__ import annotations

import struct
import threading
import uuid
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .assets import join_url
from .clock import Clock
from .errors import (
    HandleClosed,
    IncompatibleManifest,
    ShapeMismatch,
    UnsupportedFeature,
    ValidationError,
)
from .ids import derive_span_id
from .manifest import ModelManifest
from .protocol import PredictOptions, TraceLevel
from .semver import SemVer
from .tensors import TensorValue
from .tracer import SpanRecorder, TraceSpan

__all__ = [
    "PredictorSpec",
    "TraceBinding",
    "PredictCall",
    "ModelHandle",
    "Predictor",
    "SimulatedPredictor",
    "LinearPredictor",
    "register_predictor",
    "unregister_predictor",
    "get_predictor",
    "available_frameworks",
    "read_weights_file",
    "write_weights_file",
]


@dataclass(frozen=True)
class PredictorSpec:
    """What a predictor plug-in serves: one framework version and its reach."""

    framework_name: str
    framework_version: SemVer
    modalities: tuple[str, ...] = ("tensor",)
    device_kinds: tuple[str, ...] = ("cpu",)


@dataclass
class TraceBinding:
    """Tracing context an agent attaches to a handle for one evaluation.

    Predictors that emit framework/system spans read this; predictors that
    do not trace never touch it. ``captures`` is the span-level set implied
    by the request's trace level; ``clock`` is only needed by wall-domain
    predictors (virtual ones compute timestamps from the call context).
    """

    trace_id: str
    recorder: SpanRecorder | None
    captures: frozenset
    clock_domain: str = "wall"
    clock: Clock | None = None


@dataclass
class PredictCall:
    """Per-invocation context the pipeline sets on the handle before predict.

    ``parent_span_id`` is the enclosing per-batch predict span.
    ``sequence_key`` uniquely names the batch within the trace so derived
    span ids never collide. In the virtual domain the pipeline assigns
    ``start_ns`` and the predictor writes back ``end_ns = start + L``.
    """

    parent_span_id: str
    sequence_key: str
    start_ns: int
    end_ns: int | None = None


@dataclass
class ModelHandle:
    """A loaded model instance. ``state`` is predictor-private."""

    framework_name: str
    model_name: str
    model_version: str
    manifest: ModelManifest
    handle_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    state: dict = field(default_factory=dict)
    closed: bool = False
    tracing: TraceBinding | None = None
    call: PredictCall | None = None

    def ensure_open(self) -> None:
        if self.closed:
            raise HandleClosed(f"model handle {self.handle_id} is closed")


class Predictor:
    """Base class for framework plug-ins.

    Required: :meth:`spec`, :meth:`model_load`, :meth:`predict`,
    :meth:`model_unload`. The virtual-time hooks default to ``None``,
    meaning the predictor runs on the wall clock.
    """

    def spec(self) -> PredictorSpec:
        raise NotImplementedError

    def model_load(self, manifest: ModelManifest, assets,
                   options: PredictOptions) -> ModelHandle:
        raise NotImplementedError

    def predict(self, handle: ModelHandle, batch: TensorValue,
                options: PredictOptions) -> TensorValue:
        raise NotImplementedError

    def model_unload(self, handle: ModelHandle) -> None:
        handle.ensure_open()
        handle.closed = True

    # -- optional virtual-time hooks -------------------------------------

    def virtual_latency_ns(self, handle: ModelHandle,
                           batch_size: int) -> int | None:
        """Predict-call duration in virtual nanoseconds, or None if the
        predictor runs on the wall clock."""
        return None

    def virtual_load_ns(self, handle: ModelHandle) -> int | None:
        """Model-load duration in virtual nanoseconds, or None."""
        return None

    # -- shared helpers ---------------------------------------------------

    def check_manifest(self, manifest: ModelManifest) -> None:
        """Raise IncompatibleManifest unless the manifest's framework
        reference admits this predictor."""
        spec = self.spec()
        ref = manifest.framework
        if ref.name and ref.name != spec.framework_name:
            raise IncompatibleManifest(
                f"manifest wants framework {ref.name!r}, predictor serves "
                f"{spec.framework_name!r}")
        if not ref.constraint.allows(spec.framework_version):
            raise IncompatibleManifest(
                f"framework {spec.framework_name} {spec.framework_version} "
                f"does not satisfy constraint {ref.constraint}")


# ---------------------------------------------------------------------------
# Plug-in table


_table_lock = threading.Lock()
_PREDICTORS: dict[str, Predictor] = {}


def register_predictor(predictor: Predictor, replace: bool = False) -> None:
    name = predictor.spec().framework_name
    with _table_lock:
        if name in _PREDICTORS and not replace:
            raise ValidationError(
                "framework_name", f"predictor already registered for {name!r}")
        _PREDICTORS[name] = predictor


def unregister_predictor(framework_name: str) -> bool:
    with _table_lock:
        return _PREDICTORS.pop(framework_name, None) is not None


def get_predictor(framework_name: str) -> Predictor:
    with _table_lock:
        predictor = _PREDICTORS.get(framework_name)
    if predictor is None:
        raise UnsupportedFeature(
            f"no predictor registered for framework {framework_name!r}")
    return predictor


def available_frameworks() -> tuple[str, ...]:
    with _table_lock:
        return tuple(sorted(_PREDICTORS))


# ---------------------------------------------------------------------------
# Option parsing shared by the in-tree predictors


def _float_option(options: Mapping[str, str], attributes: Mapping,
                  key: str, default: float) -> float:
    """Resolve a float knob: per-call option overrides manifest attribute."""
    raw = options.get(key)
    if raw is None:
        raw = attributes.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"options.{key}", f"must be a number, got {raw!r}")


def _int_option(options: Mapping[str, str], attributes: Mapping,
                key: str, default: int, minimum: int = 1) -> int:
    raw = options.get(key)
    if raw is None:
        raw = attributes.get(key)
    if raw is None:
        return default
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"options.{key}", f"must be an integer, got {raw!r}")
    if value < minimum:
        raise ValidationError(f"options.{key}", f"must be >= {minimum}, got {value}")
    return value


def _ms_to_ns(value_ms: float) -> int:
    return int(round(value_ms * 1_000_000))


# ---------------------------------------------------------------------------
# Simulated predictor (virtual clock)


class SimulatedPredictor(Predictor):
    """Deterministic latency-model predictor running in virtual time.

    A predict call over a batch of ``b`` items takes exactly
    ``base_ms + per_item_ms * b`` milliseconds of virtual time, split across
    ``layers`` framework-level stages; each stage, when system-level capture
    is on, divides 75/25 into two kernels. All knobs resolve per call from
    ``PredictOptions.options``, falling back to manifest ``attributes``:

    ============== ======= =====================================
    key            default meaning
    ============== ======= =====================================
    base_ms        2.0     fixed cost per predict call
    per_item_ms    0.5     marginal cost per batched item
    load_ms        40.0    model_load duration (cold start)
    layers         4       framework-level stages per call
    num_classes    4       output feature count
    ============== ======= =====================================

    The output is a float32 zeros tensor of shape ``[b, num_classes]`` —
    this predictor models time, not accuracy.
    """

    def __init__(self, framework_name: str = "synthetic",
                 framework_version: SemVer | str = "1.0.0",
                 device_kinds: tuple[str, ...] = ("cpu", "gpu")):
        if isinstance(framework_version, str):
            framework_version = SemVer.parse(framework_version)
        self._spec = PredictorSpec(
            framework_name=framework_name,
            framework_version=framework_version,
            modalities=("image", "tensor"),
            device_kinds=device_kinds,
        )

    def spec(self) -> PredictorSpec:
        return self._spec

    def model_load(self, manifest: ModelManifest, assets,
                   options: PredictOptions) -> ModelHandle:
        self.check_manifest(manifest)
        attrs = manifest.attributes
        opts = options.options
        handle = ModelHandle(
            framework_name=self._spec.framework_name,
            model_name=manifest.name,
            model_version=str(manifest.version),
            manifest=manifest,
        )
        handle.state["base_ns"] = _ms_to_ns(_float_option(opts, attrs, "base_ms", 2.0))
        handle.state["per_item_ns"] = _ms_to_ns(
            _float_option(opts, attrs, "per_item_ms", 0.5))
        handle.state["load_ns"] = _ms_to_ns(_float_option(opts, attrs, "load_ms", 40.0))
        handle.state["layers"] = _int_option(opts, attrs, "layers", 4)
        handle.state["num_classes"] = _int_option(opts, attrs, "num_classes", 4)
        for key in ("base_ns", "per_item_ns", "load_ns"):
            if handle.state[key] < 0:
                raise ValidationError(f"options.{key[:-3]}_ms", "must be >= 0")
        return handle

    def virtual_latency_ns(self, handle: ModelHandle, batch_size: int) -> int:
        return handle.state["base_ns"] + handle.state["per_item_ns"] * batch_size

    def virtual_load_ns(self, handle: ModelHandle) -> int:
        return handle.state["load_ns"]

    def predict(self, handle: ModelHandle, batch: TensorValue,
                options: PredictOptions) -> TensorValue:
        handle.ensure_open()
        if not batch.shape or batch.shape[0] == 0:
            raise ShapeMismatch("predict batch must contain at least one item")
        b = batch.shape[0]
        self._emit_spans(handle, b)
        out = np.zeros((b, handle.state["num_classes"]), dtype=np.float32)
        return TensorValue.from_numpy(out)

    def _emit_spans(self, handle: ModelHandle, batch_size: int) -> None:
        binding = handle.tracing
        call = handle.call
        total = self.virtual_latency_ns(handle, batch_size)
        if call is not None:
            call.end_ns = call.start_ns + total
        if binding is None or call is None or binding.recorder is None:
            return
        captures = binding.captures
        if TraceLevel.FRAMEWORK not in captures:
            return
        layers = handle.state["layers"]
        start = call.start_ns
        for index in range(layers):
            layer_start = start + (total * index) // layers
            layer_end = start + (total * (index + 1)) // layers
            layer_name = f"layer_{index}"
            layer_id = derive_span_id(binding.trace_id, call.sequence_key,
                                      "layer", index)
            binding.recorder.record(TraceSpan(
                trace_id=binding.trace_id,
                span_id=layer_id,
                parent_span_id=call.parent_span_id,
                name=layer_name,
                level=TraceLevel.FRAMEWORK,
                start_ns=layer_start,
                end_ns=layer_end,
                clock_domain=binding.clock_domain,
                attributes={"layer_index": str(index),
                            "batch_size": str(batch_size)},
            ))
            if TraceLevel.SYSTEM not in captures:
                continue
            split = layer_start + ((layer_end - layer_start) * 3) // 4
            bounds = ((layer_start, split), (split, layer_end))
            for kernel_index, (k_start, k_end) in enumerate(bounds):
                binding.recorder.record(TraceSpan(
                    trace_id=binding.trace_id,
                    span_id=derive_span_id(binding.trace_id, call.sequence_key,
                                           "layer", index, "kernel", kernel_index),
                    parent_span_id=layer_id,
                    name=f"{layer_name}_kernel_{kernel_index}",
                    level=TraceLevel.SYSTEM,
                    start_ns=k_start,
                    end_ns=k_end,
                    clock_domain=binding.clock_domain,
                    attributes={"kernel_index": str(kernel_index)},
                ))


# ---------------------------------------------------------------------------
# Linear predictor (wall clock, real computation)


_WEIGHTS_HEADER = struct.Struct("<II")


def write_weights_file(path, weights: np.ndarray) -> None:
    """Serialize a float32 matrix as [u32 rows][u32 cols][f32 row-major],
    little-endian. The last row is the bias vector."""
    matrix = np.ascontiguousarray(weights, dtype="<f4")
    if matrix.ndim != 2:
        raise ValidationError("weights", f"must be 2-D, got shape {matrix.shape}")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS_HEADER.pack(rows, cols))
        fh.write(matrix.tobytes())


def read_weights_file(path) -> np.ndarray:
    """Parse the weights format written by :func:`write_weights_file`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _WEIGHTS_HEADER.size:
        raise ValidationError("weights", "file too short for header")
    rows, cols = _WEIGHTS_HEADER.unpack_from(blob)
    expected = _WEIGHTS_HEADER.size + rows * cols * 4
    if rows < 2 or cols < 1:
        raise ValidationError(
            "weights", f"matrix must be at least 2x1 (features plus bias row), "
                       f"got {rows}x{cols}")
    if len(blob) != expected:
        raise ValidationError(
            "weights", f"file holds {len(blob)} bytes, {rows}x{cols} float32 "
                       f"needs {expected}")
    matrix = np.frombuffer(blob, dtype="<f4", offset=_WEIGHTS_HEADER.size)
    return matrix.reshape(rows, cols).copy()


class LinearPredictor(Predictor):
    """Affine model: ``logits = X @ W + c`` with real wall-clock timing.

    Weights come from the manifest's model source as a little-endian
    ``[u32 rows][u32 cols][f32 row-major]`` file whose final row is the bias
    vector, so ``rows = in_features + 1``.
    """

    def __init__(self, framework_name: str = "linear",
                 framework_version: SemVer | str = "1.0.0"):
        if isinstance(framework_version, str):
            framework_version = SemVer.parse(framework_version)
        self._spec = PredictorSpec(
            framework_name=framework_name,
            framework_version=framework_version,
            modalities=("tensor",),
            device_kinds=("cpu",),
        )

    def spec(self) -> PredictorSpec:
        return self._spec

    def model_load(self, manifest: ModelManifest, assets,
                   options: PredictOptions) -> ModelHandle:
        self.check_manifest(manifest)
        source = manifest.model_source
        if source is None:
            raise IncompatibleManifest(
                f"model {manifest.name} has no model source; the linear "
                f"predictor needs a weights file")
        if assets is None:
            raise ValidationError("assets", "linear predictor needs an asset cache")
        relative = source.weights_path or source.graph_path
        url = join_url(source.base_url, relative)
        local = assets.fetch_asset(url, source.checksum)
        matrix = read_weights_file(local)
        handle = ModelHandle(
            framework_name=self._spec.framework_name,
            model_name=manifest.name,
            model_version=str(manifest.version),
            manifest=manifest,
        )
        handle.state["weights"] = matrix[:-1, :]
        handle.state["bias"] = matrix[-1, :]
        return handle

    def predict(self, handle: ModelHandle, batch: TensorValue,
                options: PredictOptions) -> TensorValue:
        handle.ensure_open()
        weights = handle.state["weights"]
        if len(batch.shape) != 2:
            raise ShapeMismatch(
                f"linear predictor expects a [batch, features] tensor, "
                f"got shape {list(batch.shape)}")
        if batch.shape[0] == 0:
            raise ShapeMismatch("predict batch must contain at least one item")
        if batch.shape[1] != weights.shape[0]:
            raise ShapeMismatch(
                f"input has {batch.shape[1]} features, weights expect "
                f"{weights.shape[0]}")
        if batch.element_type != "float32":
            raise ShapeMismatch(
                f"linear predictor expects float32 input, got {batch.element_type}")
        inputs = batch.to_numpy()
        with _StageTimer(handle, "matmul"):
            product = inputs @ weights
        with _StageTimer(handle, "bias_add"):
            logits = product + handle.state["bias"]
        return TensorValue.from_numpy(np.asarray(logits, dtype=np.float32))


class _StageTimer:
    """Context manager emitting one wall-clock framework span per stage."""

    def __init__(self, handle: ModelHandle, stage_name: str):
        self._handle = handle
        self._stage_name = stage_name
        self._start_ns = 0
        binding = handle.tracing
        call = handle.call
        self._active = (
            binding is not None and call is not None
            and binding.recorder is not None and binding.clock is not None
            and TraceLevel.FRAMEWORK in binding.captures
        )

    def __enter__(self):
        if self._active:
            self._start_ns = self._handle.tracing.clock.now_ns()
        return self

    def __exit__(self, exc_type, exc, tb):
        if not self._active or exc_type is not None:
            return False
        binding = self._handle.tracing
        call = self._handle.call
        end_ns = binding.clock.now_ns()
        binding.recorder.record(TraceSpan(
            trace_id=binding.trace_id,
            span_id=derive_span_id(binding.trace_id, call.sequence_key,
                                   "stage", self._stage_name),
            parent_span_id=call.parent_span_id,
            name=self._stage_name,
            level=TraceLevel.FRAMEWORK,
            start_ns=self._start_ns,
            end_ns=max(end_ns, self._start_ns),
            clock_domain=binding.clock_domain,
            attributes={},
        ))
        return False
