"""Model and framework manifests: parse, validate, render.

Manifests are YAML-subset documents (plain mappings, sequences, scalars — no
anchors, aliases, or tags). Parsing is total: any byte input yields either a
validated value or a typed error (ManifestSyntaxError, ValidationError with
the offending field path, or UnsupportedStep).

Custom ``preprocess:`` / ``postprocess:`` code fields are parsed and stored
verbatim; executing a manifest that carries them raises UnsupportedFeature
at evaluation time (see the agent module).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from .errors import ManifestSyntaxError, UnsupportedStep, ValidationError
from .semver import SemVer, VersionConstraint, parse_constraint

__all__ = [
    "ProcessingStep",
    "FrameworkRef",
    "TensorIO",
    "ModelSource",
    "ModelManifest",
    "FrameworkManifest",
    "parse_model_manifest",
    "parse_framework_manifest",
    "render_model_manifest",
    "render_framework_manifest",
    "STEP_OPS",
    "INPUT_STEP_OPS",
    "OUTPUT_STEP_OPS",
]

STEP_OPS = ("decode", "resize", "normalize", "argsort")
INPUT_STEP_OPS = ("decode", "resize", "normalize")
OUTPUT_STEP_OPS = ("argsort",)

_ELEMENT_TYPES = ("float32", "uint8")
_CHECKSUM_RE = re.compile(r"(?:[0-9a-f]{2})+")


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that additionally rejects anchors, aliases, and tags."""

    def compose_node(self, parent, index):
        event = self.peek_event()
        if isinstance(event, yaml.events.AliasEvent):
            raise yaml.YAMLError("aliases are not allowed in manifests")
        if getattr(event, "anchor", None) is not None:
            raise yaml.YAMLError("anchors are not allowed in manifests")
        if getattr(event, "tag", None) is not None:
            raise yaml.YAMLError("tags are not allowed in manifests")
        return super().compose_node(parent, index)


def _load_document(text: str | bytes) -> Any:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ManifestSyntaxError(f"manifest is not UTF-8: {exc}") from exc
    if not isinstance(text, str):
        raise ManifestSyntaxError(f"manifest must be text, got {type(text).__name__}")
    try:
        return yaml.load(text, Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        raise ManifestSyntaxError(f"malformed manifest document: {exc}") from exc


@dataclass(frozen=True)
class ProcessingStep:
    """One pipeline step: op in {decode, resize, normalize, argsort} plus params."""

    op: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class FrameworkRef:
    name: str
    constraint: VersionConstraint = VersionConstraint.ANY


@dataclass(frozen=True)
class TensorIO:
    """One model input or output: modality, layer name, element type, steps."""

    modality: str
    element_type: str
    layer_name: str = ""
    steps: tuple[ProcessingStep, ...] = ()


@dataclass(frozen=True)
class ModelSource:
    base_url: str
    graph_path: str
    weights_path: str | None = None
    checksum: str | None = None


@dataclass(frozen=True)
class ModelManifest:
    name: str
    version: SemVer
    framework: FrameworkRef
    inputs: tuple[TensorIO, ...]
    outputs: tuple[TensorIO, ...]
    description: str = ""
    model_source: "ModelSource | None" = None
    attributes: Mapping[str, Any] = field(default_factory=dict)
    preprocess: Any = None
    postprocess: Any = None


@dataclass(frozen=True)
class FrameworkManifest:
    name: str
    version: SemVer
    description: str = ""
    # architecture -> {"cpu"|"gpu" -> image reference, recorded verbatim}
    containers: Mapping[str, Mapping[str, str]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Field helpers


def _require_mapping(value: Any, path: str) -> Mapping:
    if not isinstance(value, dict):
        raise ValidationError(path or "<root>", "must be a mapping")
    return value


def _reject_unknown_keys(mapping: Mapping, allowed: tuple[str, ...], path: str) -> None:
    for key in mapping:
        if not isinstance(key, str) or key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ValidationError(where, "unknown field")


def _string_field(mapping: Mapping, key: str, path: str, *, required: bool,
                  nonempty: bool = False, default: str = "") -> str:
    if key not in mapping or mapping[key] is None:
        if required:
            raise ValidationError(f"{path}{key}", "missing required field")
        return default
    value = mapping[key]
    if not isinstance(value, str):
        raise ValidationError(f"{path}{key}", f"must be a string, got {type(value).__name__}")
    if nonempty and not value:
        raise ValidationError(f"{path}{key}", "must be nonempty")
    return value


def _version_field(value: Any, path: str) -> SemVer:
    if isinstance(value, (int, float)):
        value = repr(value)
    if not isinstance(value, str):
        raise ValidationError(path, f"must be a version string, got {type(value).__name__}")
    try:
        return SemVer.parse(value)
    except ManifestSyntaxError as exc:
        raise ValidationError(path, str(exc)) from exc


def _constraint_field(value: Any, path: str) -> VersionConstraint:
    if isinstance(value, (int, float)):
        value = repr(value)
    if not isinstance(value, str):
        raise ValidationError(path, f"must be a constraint string, got {type(value).__name__}")
    try:
        return parse_constraint(value)
    except ManifestSyntaxError as exc:
        raise ValidationError(path, str(exc)) from exc


def _real_number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, "must be a number")
    return float(value)


# ---------------------------------------------------------------------------
# Processing steps


def _parse_step(entry: Any, path: str, allowed_ops: tuple[str, ...]) -> ProcessingStep:
    entry = _require_mapping(entry, path)
    if len(entry) != 1:
        raise ValidationError(path, "step must be a single-key mapping of op to params")
    op, raw_params = next(iter(entry.items()))
    if not isinstance(op, str) or op not in STEP_OPS:
        raise UnsupportedStep(str(op), path)
    if op not in allowed_ops:
        kind = "output" if op in OUTPUT_STEP_OPS else "input"
        raise ValidationError(path, f"step {op!r} is {kind}-only")
    params = _require_mapping(raw_params if raw_params is not None else {}, path)
    if op == "decode":
        _reject_unknown_keys(params, ("data_layout", "color_mode"), path)
        layout = _string_field(params, "data_layout", f"{path}.", required=True)
        if layout not in ("NHWC", "NCHW"):
            raise ValidationError(f"{path}.data_layout", f"must be NHWC or NCHW, got {layout!r}")
        color = _string_field(params, "color_mode", f"{path}.", required=True)
        if color not in ("RGB", "BGR"):
            raise ValidationError(f"{path}.color_mode", f"must be RGB or BGR, got {color!r}")
        return ProcessingStep("decode", {"data_layout": layout, "color_mode": color})
    if op == "resize":
        _reject_unknown_keys(params, ("dimensions", "method", "keep_aspect_ratio"), path)
        dims = params.get("dimensions")
        if (not isinstance(dims, list) or len(dims) != 3
                or not all(isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in dims)):
            raise ValidationError(
                f"{path}.dimensions", "must be [channels, height, width] positive integers")
        method = _string_field(params, "method", f"{path}.", required=True)
        if method not in ("bilinear", "nearest"):
            raise ValidationError(f"{path}.method", f"must be bilinear or nearest, got {method!r}")
        keep = params.get("keep_aspect_ratio", False)
        if not isinstance(keep, bool):
            raise ValidationError(f"{path}.keep_aspect_ratio", "must be a boolean")
        return ProcessingStep("resize", {
            "dimensions": [int(d) for d in dims],
            "method": method,
            "keep_aspect_ratio": keep,
        })
    if op == "normalize":
        _reject_unknown_keys(params, ("mean", "rescale"), path)
        mean = params.get("mean")
        if not isinstance(mean, list) or not mean:
            raise ValidationError(f"{path}.mean", "must be a nonempty per-channel list")
        mean_values = [_real_number(x, f"{path}.mean") for x in mean]
        rescale = _real_number(params.get("rescale", 1.0), f"{path}.rescale")
        if rescale <= 0:
            raise ValidationError(f"{path}.rescale", "must be positive")
        return ProcessingStep("normalize", {"mean": mean_values, "rescale": rescale})
    # argsort
    _reject_unknown_keys(params, ("labels_url",), path)
    labels_url = _string_field(params, "labels_url", f"{path}.", required=True, nonempty=True)
    return ProcessingStep("argsort", {"labels_url": labels_url})


def _parse_tensor_io(entry: Any, path: str, allowed_ops: tuple[str, ...]) -> TensorIO:
    entry = _require_mapping(entry, path)
    _reject_unknown_keys(entry, ("type", "layer_name", "element_type", "steps"), path)
    modality = _string_field(entry, "type", f"{path}.", required=True, nonempty=True)
    layer_name = _string_field(entry, "layer_name", f"{path}.", required=False)
    element_type = _string_field(entry, "element_type", f"{path}.", required=True)
    if element_type not in _ELEMENT_TYPES:
        raise ValidationError(
            f"{path}.element_type", f"must be one of {_ELEMENT_TYPES}, got {element_type!r}")
    raw_steps = entry.get("steps") or []
    if not isinstance(raw_steps, list):
        raise ValidationError(f"{path}.steps", "must be a sequence of steps")
    steps = tuple(
        _parse_step(step, f"{path}.steps[{i}]", allowed_ops)
        for i, step in enumerate(raw_steps)
    )
    return TensorIO(modality=modality, element_type=element_type,
                    layer_name=layer_name, steps=steps)


# ---------------------------------------------------------------------------
# Model manifest


_MODEL_KEYS = ("name", "version", "description", "framework", "inputs", "outputs",
               "preprocess", "postprocess", "model", "attributes")


def parse_model_manifest(text: str | bytes) -> ModelManifest:
    doc = _load_document(text)
    doc = _require_mapping(doc, "")
    _reject_unknown_keys(doc, _MODEL_KEYS, "")

    name = _string_field(doc, "name", "", required=True, nonempty=True)
    version = _version_field(doc.get("version"), "version")
    description = _string_field(doc, "description", "", required=False)

    framework_map = _require_mapping(doc.get("framework"), "framework")
    _reject_unknown_keys(framework_map, ("name", "version"), "framework")
    fw_name = _string_field(framework_map, "name", "framework.", required=True, nonempty=True)
    if "version" in framework_map and framework_map["version"] is not None:
        fw_constraint = _constraint_field(framework_map["version"], "framework.version")
    else:
        fw_constraint = VersionConstraint.ANY
    framework = FrameworkRef(fw_name, fw_constraint)

    def parse_io_list(key: str, allowed_ops: tuple[str, ...]) -> tuple[TensorIO, ...]:
        raw = doc.get(key)
        if not isinstance(raw, list) or not raw:
            raise ValidationError(key, "must be a nonempty sequence")
        return tuple(
            _parse_tensor_io(entry, f"{key}[{i}]", allowed_ops)
            for i, entry in enumerate(raw)
        )

    inputs = parse_io_list("inputs", INPUT_STEP_OPS)
    outputs = parse_io_list("outputs", OUTPUT_STEP_OPS)

    model_source = None
    if doc.get("model") is not None:
        source_map = _require_mapping(doc["model"], "model")
        _reject_unknown_keys(
            source_map, ("base_url", "graph_path", "weights_path", "checksum"), "model")
        base_url = _string_field(source_map, "base_url", "model.", required=True, nonempty=True)
        graph_path = _string_field(source_map, "graph_path", "model.", required=True, nonempty=True)
        weights_path = source_map.get("weights_path")
        if weights_path is not None and not isinstance(weights_path, str):
            raise ValidationError("model.weights_path", "must be a string")
        checksum = source_map.get("checksum")
        if checksum is not None:
            if not isinstance(checksum, str) or _CHECKSUM_RE.fullmatch(checksum) is None:
                raise ValidationError(
                    "model.checksum", "must be lowercase hex of even length")
        model_source = ModelSource(base_url, graph_path, weights_path, checksum)

    attributes: Mapping[str, Any] = {}
    if doc.get("attributes") is not None:
        attributes = _require_mapping(doc["attributes"], "attributes")
        for key in attributes:
            if not isinstance(key, str):
                raise ValidationError("attributes", f"keys must be strings, got {key!r}")

    return ModelManifest(
        name=name,
        version=version,
        framework=framework,
        inputs=inputs,
        outputs=outputs,
        description=description,
        model_source=model_source,
        attributes=dict(attributes),
        preprocess=doc.get("preprocess"),
        postprocess=doc.get("postprocess"),
    )


# ---------------------------------------------------------------------------
# Framework manifest


_FRAMEWORK_KEYS = ("name", "version", "description", "containers")
_CONTAINER_DEVICES = ("cpu", "gpu")


def parse_framework_manifest(text: str | bytes) -> FrameworkManifest:
    doc = _load_document(text)
    doc = _require_mapping(doc, "")
    _reject_unknown_keys(doc, _FRAMEWORK_KEYS, "")

    name = _string_field(doc, "name", "", required=True, nonempty=True)
    version = _version_field(doc.get("version"), "version")
    description = _string_field(doc, "description", "", required=False)

    containers: dict[str, dict[str, str]] = {}
    if doc.get("containers") is not None:
        raw = _require_mapping(doc["containers"], "containers")
        for arch, devices in raw.items():
            if not isinstance(arch, str) or not arch:
                raise ValidationError("containers", "architecture keys must be nonempty strings")
            devices = _require_mapping(devices, f"containers.{arch}")
            entry: dict[str, str] = {}
            for device, image in devices.items():
                if device not in _CONTAINER_DEVICES:
                    raise ValidationError(
                        f"containers.{arch}.{device}", "device must be cpu or gpu")
                if not isinstance(image, str) or not image:
                    raise ValidationError(
                        f"containers.{arch}.{device}", "image reference must be a nonempty string")
                entry[device] = image
            containers[arch] = entry

    return FrameworkManifest(name=name, version=version,
                             description=description, containers=containers)


# ---------------------------------------------------------------------------
# Rendering (render∘parse is identity up to structural equality)


def _render_step(step: ProcessingStep) -> dict:
    return {step.op: dict(step.params)}


def _render_tensor_io(io: TensorIO) -> dict:
    entry: dict[str, Any] = {"type": io.modality}
    if io.layer_name:
        entry["layer_name"] = io.layer_name
    entry["element_type"] = io.element_type
    if io.steps:
        entry["steps"] = [_render_step(s) for s in io.steps]
    return entry


def render_model_manifest(manifest: ModelManifest) -> str:
    doc: dict[str, Any] = {
        "name": manifest.name,
        "version": str(manifest.version),
    }
    if manifest.description:
        doc["description"] = manifest.description
    framework: dict[str, Any] = {"name": manifest.framework.name}
    if manifest.framework.constraint.clauses:
        framework["version"] = str(manifest.framework.constraint)
    doc["framework"] = framework
    doc["inputs"] = [_render_tensor_io(io) for io in manifest.inputs]
    doc["outputs"] = [_render_tensor_io(io) for io in manifest.outputs]
    if manifest.preprocess is not None:
        doc["preprocess"] = manifest.preprocess
    if manifest.postprocess is not None:
        doc["postprocess"] = manifest.postprocess
    if manifest.model_source is not None:
        source: dict[str, Any] = {
            "base_url": manifest.model_source.base_url,
            "graph_path": manifest.model_source.graph_path,
        }
        if manifest.model_source.weights_path is not None:
            source["weights_path"] = manifest.model_source.weights_path
        if manifest.model_source.checksum is not None:
            source["checksum"] = manifest.model_source.checksum
        doc["model"] = source
    if manifest.attributes:
        doc["attributes"] = dict(manifest.attributes)
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)


def render_framework_manifest(manifest: FrameworkManifest) -> str:
    doc: dict[str, Any] = {
        "name": manifest.name,
        "version": str(manifest.version),
    }
    if manifest.description:
        doc["description"] = manifest.description
    if manifest.containers:
        doc["containers"] = {
            arch: dict(devices) for arch, devices in manifest.containers.items()
        }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False)
