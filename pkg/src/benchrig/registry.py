"""Registry: agents publish capabilities under leases; the server resolves
evaluation constraints to capable agents; model manifests are published and
discovered here.

The registry is a single service holding one logical map with linearizable
single-key operations; resolution runs over a consistent snapshot. Leases
expire unless renewed by heartbeat (renewal extends expiry by the original
ttl from now). The clock is injectable so expiry is testable.

Selection policy note: the registry stores the data (including each agent's
self-reported in-flight evaluation count) and returns matches ordered by
(in-flight ascending, agent_id ascending); picking the head — or fanning out
to all — is the server's decision.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from .clock import Clock, WallClock
from .errors import (
    DuplicateAgentId,
    UnknownLease,
    ValidationError,
    VersionConflict,
)
from .manifest import ModelManifest, parse_model_manifest, render_model_manifest
from .semver import SemVer, VersionConstraint, parse_constraint, satisfies
from .protocol import register_message

__all__ = [
    "Device",
    "AgentRecord",
    "HardwareConstraint",
    "Registry",
    "RegistryService",
    "RegistryClient",
    "start_registry_server",
    "DEVICE_KINDS",
]

DEVICE_KINDS = ("cpu", "gpu", "fpga")


@dataclass(frozen=True)
class Device:
    kind: str  # cpu | gpu | fpga
    name: str
    memory_bytes: int
    count: int = 1

    def __post_init__(self):
        if self.kind not in DEVICE_KINDS:
            raise ValidationError("device.kind", f"must be one of {DEVICE_KINDS}, got {self.kind!r}")
        if not isinstance(self.memory_bytes, int) or self.memory_bytes < 0:
            raise ValidationError("device.memory_bytes", "must be a non-negative integer")
        if not isinstance(self.count, int) or self.count < 1:
            raise ValidationError("device.count", "must be a positive integer")

    def to_body(self) -> dict:
        return {"kind": self.kind, "name": self.name,
                "memory_bytes": self.memory_bytes, "count": self.count}

    @classmethod
    def from_body(cls, body: Mapping) -> "Device":
        return cls(kind=body["kind"], name=body.get("name", ""),
                   memory_bytes=int(body["memory_bytes"]), count=int(body.get("count", 1)))


@dataclass(frozen=True)
class AgentRecord:
    """A registered agent's capabilities."""

    agent_id: str
    endpoint: str  # "host:port"
    architecture: str  # e.g. amd64, ppc64le, arm64
    devices: tuple[Device, ...]
    frameworks: tuple[tuple[str, SemVer], ...]
    builtin_models: tuple[tuple[str, SemVer], ...] = ()
    interconnect: str | None = None
    lease_expiry_ns: int = 0  # filled by the registry

    def __post_init__(self):
        if not self.agent_id:
            raise ValidationError("agent_id", "must be nonempty")
        host, sep, port = self.endpoint.rpartition(":")
        if not sep or not host or not port.isdigit():
            raise ValidationError("endpoint", f"must be host:port, got {self.endpoint!r}")
        if not self.architecture:
            raise ValidationError("architecture", "must be nonempty")

    def to_body(self) -> dict:
        body: dict[str, Any] = {
            "agent_id": self.agent_id,
            "endpoint": self.endpoint,
            "architecture": self.architecture,
            "devices": [d.to_body() for d in self.devices],
            "frameworks": [[name, str(ver)] for name, ver in self.frameworks],
            "builtin_models": [[name, str(ver)] for name, ver in self.builtin_models],
            "lease_expiry_ns": self.lease_expiry_ns,
        }
        if self.interconnect is not None:
            body["interconnect"] = self.interconnect
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "AgentRecord":
        return cls(
            agent_id=body["agent_id"],
            endpoint=body["endpoint"],
            architecture=body["architecture"],
            devices=tuple(Device.from_body(d) for d in body.get("devices", [])),
            frameworks=tuple((name, SemVer.parse(ver))
                             for name, ver in body.get("frameworks", [])),
            builtin_models=tuple((name, SemVer.parse(ver))
                                 for name, ver in body.get("builtin_models", [])),
            interconnect=body.get("interconnect"),
            lease_expiry_ns=int(body.get("lease_expiry_ns", 0)),
        )


@dataclass(frozen=True)
class HardwareConstraint:
    """All-optional conjunction; the empty constraint matches every agent."""

    device_kind: str | None = None
    architecture: str | None = None
    min_memory_bytes: int | None = None
    interconnect: str | None = None

    def __post_init__(self):
        if self.device_kind is not None and self.device_kind not in DEVICE_KINDS:
            raise ValidationError("hw.device_kind",
                                  f"must be one of {DEVICE_KINDS}, got {self.device_kind!r}")
        if self.min_memory_bytes is not None and (
                not isinstance(self.min_memory_bytes, int) or self.min_memory_bytes < 0):
            raise ValidationError("hw.min_memory_bytes", "must be a non-negative integer")

    def matches(self, record: AgentRecord) -> bool:
        if self.architecture is not None and record.architecture != self.architecture:
            return False
        if self.interconnect is not None and record.interconnect != self.interconnect:
            return False
        devices = record.devices
        if self.device_kind is not None:
            devices = tuple(d for d in devices if d.kind == self.device_kind)
            if not devices:
                return False
        if self.min_memory_bytes is not None:
            # Applies to devices of device_kind when given, any device otherwise.
            if not any(d.memory_bytes >= self.min_memory_bytes for d in devices):
                return False
        return True

    def to_body(self) -> dict:
        body: dict[str, Any] = {}
        if self.device_kind is not None:
            body["device_kind"] = self.device_kind
        if self.architecture is not None:
            body["architecture"] = self.architecture
        if self.min_memory_bytes is not None:
            body["min_memory_bytes"] = self.min_memory_bytes
        if self.interconnect is not None:
            body["interconnect"] = self.interconnect
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "HardwareConstraint":
        min_memory = body.get("min_memory_bytes")
        return cls(
            device_kind=body.get("device_kind"),
            architecture=body.get("architecture"),
            min_memory_bytes=int(min_memory) if min_memory is not None else None,
            interconnect=body.get("interconnect"),
        )


@dataclass
class _Lease:
    lease_id: str
    record: AgentRecord
    ttl_ns: int
    expiry_ns: int
    inflight: int = 0


class Registry:
    """In-process registry core. All operations are linearizable under one lock."""

    def __init__(self, clock: Clock | None = None):
        self._clock = clock if clock is not None else WallClock()
        self._lock = threading.Lock()
        self._leases: dict[str, _Lease] = {}          # lease_id -> lease
        self._by_agent: dict[str, str] = {}           # agent_id -> lease_id
        self._models: dict[tuple[str, str], str] = {} # (name, version) -> manifest text

    # -- leases --------------------------------------------------------------
    def register(self, record: AgentRecord, ttl_seconds: float) -> tuple[str, int]:
        """Grant a lease; returns (lease_id, expiry_ns)."""
        if ttl_seconds <= 0:
            raise ValidationError("ttl", "must be positive")
        now = self._clock.now_ns()
        ttl_ns = int(round(ttl_seconds * 1e9))
        with self._lock:
            self._purge_expired(now)
            if record.agent_id in self._by_agent:
                raise DuplicateAgentId(f"agent {record.agent_id!r} already holds a live lease")
            lease_id = uuid.uuid4().hex
            expiry = now + ttl_ns
            stored = replace(record, lease_expiry_ns=expiry)
            self._leases[lease_id] = _Lease(lease_id=lease_id, record=stored,
                                            ttl_ns=ttl_ns, expiry_ns=expiry)
            self._by_agent[record.agent_id] = lease_id
            return lease_id, expiry

    def heartbeat(self, lease_id: str, inflight: int | None = None) -> int:
        """Renew a lease: expiry becomes now + the original ttl. Returns new expiry."""
        now = self._clock.now_ns()
        with self._lock:
            self._purge_expired(now)
            lease = self._leases.get(lease_id)
            if lease is None:
                raise UnknownLease("lease unknown or expired; re-register")
            lease.expiry_ns = now + lease.ttl_ns
            lease.record = replace(lease.record, lease_expiry_ns=lease.expiry_ns)
            if inflight is not None:
                lease.inflight = max(0, int(inflight))
            return lease.expiry_ns

    def deregister(self, lease_id: str) -> None:
        with self._lock:
            lease = self._leases.pop(lease_id, None)
            if lease is not None:
                self._by_agent.pop(lease.record.agent_id, None)

    def _purge_expired(self, now_ns: int) -> None:
        expired = [lease_id for lease_id, lease in self._leases.items()
                   if lease.expiry_ns <= now_ns]
        for lease_id in expired:
            record = self._leases.pop(lease_id).record
            if self._by_agent.get(record.agent_id) == lease_id:
                self._by_agent.pop(record.agent_id, None)

    # -- queries ---------------------------------------------------------------
    def list_agents(self) -> list[AgentRecord]:
        now = self._clock.now_ns()
        with self._lock:
            self._purge_expired(now)
            leases = sorted(self._leases.values(),
                            key=lambda l: (l.inflight, l.record.agent_id))
            return [lease.record for lease in leases]

    def resolve(self, framework_name: str | None,
                framework_constraint: VersionConstraint,
                model_name: str | None,
                model_constraint: VersionConstraint,
                hw: HardwareConstraint) -> list[AgentRecord]:
        """Live agents satisfying every predicate, ordered by
        (in-flight evaluations ascending, agent_id ascending).

        ``model_name`` None/empty means the request carries an inline
        manifest, so the built-in-model predicate is skipped.
        """
        now = self._clock.now_ns()
        with self._lock:
            self._purge_expired(now)
            matches = [
                lease for lease in self._leases.values()
                if _framework_ok(lease.record, framework_name, framework_constraint)
                and _model_ok(lease.record, model_name, model_constraint)
                and hw.matches(lease.record)
            ]
            matches.sort(key=lambda l: (l.inflight, l.record.agent_id))
            return [lease.record for lease in matches]

    # -- model store -------------------------------------------------------------
    def publish_model(self, manifest: ModelManifest | str) -> tuple[str, str]:
        """Store a manifest under (name, version); returns that key.

        Re-publishing identical content is a no-op; different content under
        the same key raises VersionConflict, forcing a version bump.
        """
        if isinstance(manifest, str):
            parsed = parse_model_manifest(manifest)
            text = manifest
        else:
            parsed = manifest
            text = render_model_manifest(manifest)
        key = (parsed.name, str(parsed.version))
        with self._lock:
            existing = self._models.get(key)
            if existing is not None:
                if parse_model_manifest(existing) != parsed:
                    raise VersionConflict(
                        f"model {key[0]} {key[1]} already published with different content")
                return key
            self._models[key] = text
            return key

    def list_models(self, name: str | None = None,
                    constraint: VersionConstraint | None = None) -> list[ModelManifest]:
        with self._lock:
            texts = list(self._models.items())
        manifests = []
        for (model_name, _version), text in sorted(texts):
            manifest = parse_model_manifest(text)
            if name is not None and manifest.name != name:
                continue
            if constraint is not None and not satisfies(manifest.version, constraint):
                continue
            manifests.append(manifest)
        return manifests

    def get_model(self, name: str, version: str | None = None) -> ModelManifest | None:
        """Fetch by exact version, or the latest published version when omitted."""
        with self._lock:
            if version is not None:
                text = self._models.get((name, version))
                return parse_model_manifest(text) if text is not None else None
            candidates = [(SemVer.parse(ver), text)
                          for (n, ver), text in self._models.items() if n == name]
        if not candidates:
            return None
        _, text = max(candidates, key=lambda pair: pair[0])
        return parse_model_manifest(text)

    def latest_builtin_version(self, model_name: str) -> SemVer | None:
        """Max version of a model built into any live agent."""
        versions = [ver for record in self.list_agents()
                    for name, ver in record.builtin_models if name == model_name]
        return max(versions) if versions else None


def _framework_ok(record: AgentRecord, name: str | None,
                  constraint: VersionConstraint) -> bool:
    if not name:
        return True
    return any(fw_name == name and satisfies(fw_ver, constraint)
               for fw_name, fw_ver in record.frameworks)


def _model_ok(record: AgentRecord, name: str | None,
              constraint: VersionConstraint) -> bool:
    if not name:
        return True  # inline manifest travels with the request
    return any(m_name == name and satisfies(m_ver, constraint)
               for m_name, m_ver in record.builtin_models)


# ---------------------------------------------------------------------------
# Wire messages


@register_message("register_request")
@dataclass(frozen=True)
class RegisterRequest:
    record: AgentRecord
    ttl_seconds: float

    def to_body(self) -> dict:
        return {"record": self.record.to_body(), "ttl_seconds": float(self.ttl_seconds)}

    @classmethod
    def from_body(cls, body: Mapping) -> "RegisterRequest":
        return cls(record=AgentRecord.from_body(body["record"]),
                   ttl_seconds=float(body["ttl_seconds"]))


@register_message("register_response")
@dataclass(frozen=True)
class RegisterResponse:
    lease_id: str
    expiry_ns: int

    def to_body(self) -> dict:
        return {"lease_id": self.lease_id, "expiry_ns": self.expiry_ns}

    @classmethod
    def from_body(cls, body: Mapping) -> "RegisterResponse":
        return cls(lease_id=body["lease_id"], expiry_ns=int(body["expiry_ns"]))


@register_message("heartbeat_request")
@dataclass(frozen=True)
class HeartbeatRequest:
    lease_id: str
    inflight: int | None = None

    def to_body(self) -> dict:
        body: dict[str, Any] = {"lease_id": self.lease_id}
        if self.inflight is not None:
            body["inflight"] = self.inflight
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "HeartbeatRequest":
        inflight = body.get("inflight")
        return cls(lease_id=body["lease_id"],
                   inflight=int(inflight) if inflight is not None else None)


@register_message("heartbeat_response")
@dataclass(frozen=True)
class HeartbeatResponse:
    expiry_ns: int

    def to_body(self) -> dict:
        return {"expiry_ns": self.expiry_ns}

    @classmethod
    def from_body(cls, body: Mapping) -> "HeartbeatResponse":
        return cls(expiry_ns=int(body["expiry_ns"]))


@register_message("deregister_request")
@dataclass(frozen=True)
class DeregisterRequest:
    lease_id: str

    def to_body(self) -> dict:
        return {"lease_id": self.lease_id}

    @classmethod
    def from_body(cls, body: Mapping) -> "DeregisterRequest":
        return cls(lease_id=body["lease_id"])


@register_message("deregister_response")
@dataclass(frozen=True)
class DeregisterResponse:
    def to_body(self) -> dict:
        return {}

    @classmethod
    def from_body(cls, body: Mapping) -> "DeregisterResponse":
        return cls()


@register_message("resolve_request")
@dataclass(frozen=True)
class ResolveRequest:
    framework_name: str = ""
    framework_constraint: str = ""
    model_name: str = ""
    model_constraint: str = ""
    hw: HardwareConstraint = HardwareConstraint()

    def to_body(self) -> dict:
        return {
            "framework_name": self.framework_name,
            "framework_constraint": self.framework_constraint,
            "model_name": self.model_name,
            "model_constraint": self.model_constraint,
            "hw": self.hw.to_body(),
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "ResolveRequest":
        return cls(
            framework_name=body.get("framework_name", ""),
            framework_constraint=body.get("framework_constraint", ""),
            model_name=body.get("model_name", ""),
            model_constraint=body.get("model_constraint", ""),
            hw=HardwareConstraint.from_body(body.get("hw", {})),
        )


@register_message("resolve_response")
@dataclass(frozen=True)
class ResolveResponse:
    records: tuple[AgentRecord, ...]

    def to_body(self) -> dict:
        return {"records": [record.to_body() for record in self.records]}

    @classmethod
    def from_body(cls, body: Mapping) -> "ResolveResponse":
        return cls(records=tuple(AgentRecord.from_body(r) for r in body.get("records", [])))


@register_message("publish_model_request")
@dataclass(frozen=True)
class PublishModelRequest:
    manifest_text: str

    def to_body(self) -> dict:
        return {"manifest_text": self.manifest_text}

    @classmethod
    def from_body(cls, body: Mapping) -> "PublishModelRequest":
        return cls(manifest_text=body["manifest_text"])


@register_message("publish_model_response")
@dataclass(frozen=True)
class PublishModelResponse:
    name: str
    version: str

    def to_body(self) -> dict:
        return {"name": self.name, "version": self.version}

    @classmethod
    def from_body(cls, body: Mapping) -> "PublishModelResponse":
        return cls(name=body["name"], version=body["version"])


@register_message("list_agents_request")
@dataclass(frozen=True)
class ListAgentsRequest:
    def to_body(self) -> dict:
        return {}

    @classmethod
    def from_body(cls, body: Mapping) -> "ListAgentsRequest":
        return cls()


@register_message("list_models_request")
@dataclass(frozen=True)
class ListModelsRequest:
    name: str = ""
    constraint: str = ""

    def to_body(self) -> dict:
        return {"name": self.name, "constraint": self.constraint}

    @classmethod
    def from_body(cls, body: Mapping) -> "ListModelsRequest":
        return cls(name=body.get("name", ""), constraint=body.get("constraint", ""))


@register_message("list_models_response")
@dataclass(frozen=True)
class ListModelsResponse:
    manifest_texts: tuple[str, ...]

    def to_body(self) -> dict:
        return {"manifest_texts": list(self.manifest_texts)}

    @classmethod
    def from_body(cls, body: Mapping) -> "ListModelsResponse":
        return cls(manifest_texts=tuple(body.get("manifest_texts", ())))


@register_message("get_model_request")
@dataclass(frozen=True)
class GetModelRequest:
    name: str
    version: str = ""  # empty means "latest published"

    def to_body(self) -> dict:
        return {"name": self.name, "version": self.version}

    @classmethod
    def from_body(cls, body: Mapping) -> "GetModelRequest":
        return cls(name=body["name"], version=body.get("version", ""))


@register_message("get_model_response")
@dataclass(frozen=True)
class GetModelResponse:
    found: bool
    manifest_text: str = ""

    def to_body(self) -> dict:
        return {"found": self.found, "manifest_text": self.manifest_text}

    @classmethod
    def from_body(cls, body: Mapping) -> "GetModelResponse":
        return cls(found=bool(body["found"]), manifest_text=body.get("manifest_text", ""))


# ---------------------------------------------------------------------------
# Service + client


class RegistryService:
    def __init__(self, registry: Registry):
        self.registry = registry

    def handlers(self) -> dict:
        return {
            RegisterRequest: self._register,
            HeartbeatRequest: self._heartbeat,
            DeregisterRequest: self._deregister,
            ResolveRequest: self._resolve,
            PublishModelRequest: self._publish_model,
            ListAgentsRequest: self._list_agents,
            ListModelsRequest: self._list_models,
            GetModelRequest: self._get_model,
        }

    def _register(self, call) -> RegisterResponse:
        lease_id, expiry = self.registry.register(call.request.record,
                                                  call.request.ttl_seconds)
        return RegisterResponse(lease_id=lease_id, expiry_ns=expiry)

    def _heartbeat(self, call) -> HeartbeatResponse:
        expiry = self.registry.heartbeat(call.request.lease_id, call.request.inflight)
        return HeartbeatResponse(expiry_ns=expiry)

    def _deregister(self, call) -> DeregisterResponse:
        self.registry.deregister(call.request.lease_id)
        return DeregisterResponse()

    def _resolve(self, call) -> ResolveResponse:
        request = call.request
        records = self.registry.resolve(
            request.framework_name or None,
            parse_constraint(request.framework_constraint),
            request.model_name or None,
            parse_constraint(request.model_constraint),
            request.hw,
        )
        return ResolveResponse(records=tuple(records))

    def _publish_model(self, call) -> PublishModelResponse:
        name, version = self.registry.publish_model(call.request.manifest_text)
        return PublishModelResponse(name=name, version=version)

    def _list_agents(self, call) -> ResolveResponse:
        return ResolveResponse(records=tuple(self.registry.list_agents()))

    def _list_models(self, call) -> ListModelsResponse:
        request = call.request
        constraint = parse_constraint(request.constraint) if request.constraint else None
        manifests = self.registry.list_models(request.name or None, constraint)
        return ListModelsResponse(
            manifest_texts=tuple(render_model_manifest(m) for m in manifests))

    def _get_model(self, call) -> GetModelResponse:
        manifest = self.registry.get_model(call.request.name,
                                           call.request.version or None)
        if manifest is None:
            return GetModelResponse(found=False)
        return GetModelResponse(found=True, manifest_text=render_model_manifest(manifest))


def start_registry_server(registry: Registry | None = None, host: str = "127.0.0.1",
                          port: int = 0):
    from .protocol import RpcServer

    registry = registry if registry is not None else Registry()
    server = RpcServer(RegistryService(registry).handlers(), host=host, port=port).start()
    return server, registry


class RegistryClient:
    def __init__(self, endpoint: str, timeout: float = 30.0):
        from .protocol import RpcClient

        self._client = RpcClient.for_endpoint(endpoint, timeout=timeout)

    def register(self, record: AgentRecord, ttl_seconds: float) -> tuple[str, int]:
        response = self._client.call(RegisterRequest(record=record, ttl_seconds=ttl_seconds))
        return response.lease_id, response.expiry_ns

    def heartbeat(self, lease_id: str, inflight: int | None = None) -> int:
        return self._client.call(HeartbeatRequest(lease_id=lease_id, inflight=inflight)).expiry_ns

    def deregister(self, lease_id: str) -> None:
        self._client.call(DeregisterRequest(lease_id=lease_id))

    def resolve(self, framework_name: str = "", framework_constraint: str = "",
                model_name: str = "", model_constraint: str = "",
                hw: HardwareConstraint = HardwareConstraint()) -> list[AgentRecord]:
        response = self._client.call(ResolveRequest(
            framework_name=framework_name, framework_constraint=framework_constraint,
            model_name=model_name, model_constraint=model_constraint, hw=hw))
        return list(response.records)

    def publish_model(self, manifest_text: str) -> tuple[str, str]:
        response = self._client.call(PublishModelRequest(manifest_text=manifest_text))
        return response.name, response.version

    def list_agents(self) -> list[AgentRecord]:
        return list(self._client.call(ListAgentsRequest()).records)

    def list_models(self, name: str = "", constraint: str = "") -> list[ModelManifest]:
        response = self._client.call(ListModelsRequest(name=name, constraint=constraint))
        return [parse_model_manifest(text) for text in response.manifest_texts]

    def get_model(self, name: str, version: str = "") -> ModelManifest | None:
        response = self._client.call(GetModelRequest(name=name, version=version))
        return parse_model_manifest(response.manifest_text) if response.found else None

    def close(self) -> None:
        self._client.close()
