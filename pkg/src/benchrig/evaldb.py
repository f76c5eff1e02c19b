"""Evaluation result store.

Results are self-describing: each embeds the full open request, a snapshot
of the agent record that served it, per-request measurements, and the
artifact versions that produced it — so a stored result stays meaningful
even if manifests or agents change later.

Storage is an append-only JSON-lines file per day under one directory, with
an in-memory index rebuilt by scanning the directory on startup. Storing an
evaluation id that already exists is an idempotent no-op (the first stored
record wins), which makes replays and at-least-once delivery safe.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ValidationError
from .protocol import OpenRequest, canonical_json
from .registry import AgentRecord
from .semver import SemVer, VersionConstraint, parse_constraint

__all__ = ["Measurement", "EvaluationResult", "QueryFilter", "EvalDB"]


@dataclass(frozen=True)
class Measurement:
    """One request's timing as observed by the load generator."""

    sequence: int
    issue_time_ns: int
    latency_ns: int
    batch_size: int
    lateness_ns: int = 0
    warmup: bool = False
    success: bool = True

    def __post_init__(self):
        if self.latency_ns < 0:
            raise ValidationError("latency_ns", "must be >= 0")
        if self.lateness_ns < 0:
            raise ValidationError("lateness_ns", "must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size", "must be >= 1")

    def to_body(self) -> dict:
        return {
            "sequence": self.sequence,
            "issue_time_ns": self.issue_time_ns,
            "latency_ns": self.latency_ns,
            "batch_size": self.batch_size,
            "lateness_ns": self.lateness_ns,
            "warmup": self.warmup,
            "success": self.success,
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "Measurement":
        return cls(
            sequence=int(body["sequence"]),
            issue_time_ns=int(body["issue_time_ns"]),
            latency_ns=int(body["latency_ns"]),
            batch_size=int(body["batch_size"]),
            lateness_ns=int(body.get("lateness_ns", 0)),
            warmup=bool(body.get("warmup", False)),
            success=bool(body.get("success", True)),
        )


@dataclass(frozen=True)
class EvaluationResult:
    """One completed evaluation: inputs, provenance, and raw measurements.

    ``clock_domain`` states which clock produced the measurement
    timestamps ("wall" or "virtual") so analysis can label its outputs.
    """

    evaluation_id: str
    request: OpenRequest
    agent: AgentRecord
    started_at_ns: int
    finished_at_ns: int
    per_request_measurements: tuple[Measurement, ...]
    model_version: SemVer
    framework_version: SemVer
    trace_id: str = ""
    clock_domain: str = "wall"

    def __post_init__(self):
        if not self.evaluation_id:
            raise ValidationError("evaluation_id", "must be nonempty")
        if not self.per_request_measurements:
            raise ValidationError("per_request_measurements",
                                  "a successful evaluation has measurements")
        if self.clock_domain not in ("wall", "virtual"):
            raise ValidationError("clock_domain", "must be wall or virtual")

    def to_body(self) -> dict:
        return {
            "evaluation_id": self.evaluation_id,
            "request": self.request.to_body(),
            "agent": self.agent.to_body(),
            "started_at_ns": self.started_at_ns,
            "finished_at_ns": self.finished_at_ns,
            "per_request_measurements": [
                m.to_body() for m in self.per_request_measurements],
            "artifact_versions": {"model": str(self.model_version),
                                  "framework": str(self.framework_version)},
            "trace_id": self.trace_id,
            "clock_domain": self.clock_domain,
        }

    @classmethod
    def from_body(cls, body: Mapping) -> "EvaluationResult":
        versions = body.get("artifact_versions", {})
        return cls(
            evaluation_id=body["evaluation_id"],
            request=OpenRequest.from_body(body["request"]),
            agent=AgentRecord.from_body(body["agent"]),
            started_at_ns=int(body["started_at_ns"]),
            finished_at_ns=int(body["finished_at_ns"]),
            per_request_measurements=tuple(
                Measurement.from_body(m)
                for m in body["per_request_measurements"]),
            model_version=SemVer.parse(versions.get("model", "0.0.0")),
            framework_version=SemVer.parse(versions.get("framework", "0.0.0")),
            trace_id=body.get("trace_id", ""),
            clock_domain=body.get("clock_domain", "wall"),
        )


@dataclass(frozen=True)
class QueryFilter:
    """All-optional conjunction over stored results."""

    model_name: str | None = None
    model_constraint: VersionConstraint | None = None
    framework_name: str | None = None
    framework_constraint: VersionConstraint | None = None
    architecture: str | None = None
    scenario_kind: str | None = None
    started_after_ns: int | None = None
    started_before_ns: int | None = None

    def matches(self, result: EvaluationResult) -> bool:
        if self.model_name is not None and result.request.model_name != self.model_name:
            return False
        if (self.model_constraint is not None
                and not self.model_constraint.allows(result.model_version)):
            return False
        if (self.framework_name is not None
                and result.request.framework_name != self.framework_name):
            return False
        if (self.framework_constraint is not None
                and not self.framework_constraint.allows(result.framework_version)):
            return False
        if (self.architecture is not None
                and result.agent.architecture != self.architecture):
            return False
        if (self.scenario_kind is not None
                and result.request.benchmark_scenario.kind != self.scenario_kind):
            return False
        if (self.started_after_ns is not None
                and result.started_at_ns < self.started_after_ns):
            return False
        if (self.started_before_ns is not None
                and result.started_at_ns > self.started_before_ns):
            return False
        return True

    def to_body(self) -> dict:
        body: dict = {}
        if self.model_name is not None:
            body["model_name"] = self.model_name
        if self.model_constraint is not None:
            body["model_constraint"] = str(self.model_constraint)
        if self.framework_name is not None:
            body["framework_name"] = self.framework_name
        if self.framework_constraint is not None:
            body["framework_constraint"] = str(self.framework_constraint)
        if self.architecture is not None:
            body["architecture"] = self.architecture
        if self.scenario_kind is not None:
            body["scenario_kind"] = self.scenario_kind
        if self.started_after_ns is not None:
            body["started_after_ns"] = self.started_after_ns
        if self.started_before_ns is not None:
            body["started_before_ns"] = self.started_before_ns
        return body

    @classmethod
    def from_body(cls, body: Mapping) -> "QueryFilter":
        def constraint(key: str) -> VersionConstraint | None:
            raw = body.get(key)
            return parse_constraint(raw) if raw is not None else None

        return cls(
            model_name=body.get("model_name"),
            model_constraint=constraint("model_constraint"),
            framework_name=body.get("framework_name"),
            framework_constraint=constraint("framework_constraint"),
            architecture=body.get("architecture"),
            scenario_kind=body.get("scenario_kind"),
            started_after_ns=(int(body["started_after_ns"])
                              if body.get("started_after_ns") is not None else None),
            started_before_ns=(int(body["started_before_ns"])
                               if body.get("started_before_ns") is not None else None),
        )


class EvalDB:
    """Append-only, file-backed result store with an in-memory index."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._by_id: dict[str, EvaluationResult] = {}
        self._load()

    def _load(self) -> None:
        for path in sorted(self.root.glob("results-*.jsonl")):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        result = EvaluationResult.from_body(json.loads(line))
                    except (json.JSONDecodeError, KeyError, ValueError,
                            ValidationError):
                        continue  # skip corrupt lines, keep the rest
                    self._by_id.setdefault(result.evaluation_id, result)

    def store(self, result: EvaluationResult) -> str:
        """Persist a result; storing an existing id is an idempotent no-op."""
        with self._lock:
            if result.evaluation_id in self._by_id:
                return result.evaluation_id
            day = time.strftime("%Y%m%d", time.gmtime())
            path = self.root / f"results-{day}.jsonl"
            line = canonical_json(result.to_body())
            with open(path, "ab") as fh:
                fh.write(line)
                fh.write(b"\n")
            self._by_id[result.evaluation_id] = result
            return result.evaluation_id

    def get(self, evaluation_id: str) -> EvaluationResult | None:
        with self._lock:
            return self._by_id.get(evaluation_id)

    def query(self, query_filter: QueryFilter | None = None) -> list[EvaluationResult]:
        """Matching results, newest first (started_at, then id, descending)."""
        with self._lock:
            snapshot = list(self._by_id.values())
        if query_filter is not None:
            snapshot = [r for r in snapshot if query_filter.matches(r)]
        snapshot.sort(key=lambda r: (r.started_at_ns, r.evaluation_id),
                      reverse=True)
        return snapshot

    def __len__(self) -> int:
        with self._lock:
            return len(self._by_id)
