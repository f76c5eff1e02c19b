"""Typed errors raised across the benchrig package.

Every public failure mode maps to one of these classes. Each class carries a
stable ``code`` string so errors can travel over the wire protocol (error
frames embed the code) and be re-raised as the right type on the other side.
"""

from __future__ import annotations

__all__ = [
    "BenchrigError",
    "ManifestSyntaxError",
    "ValidationError",
    "UnsupportedStep",
    "UnsupportedFeature",
    "DecodeError",
    "DuplicateAgentId",
    "UnknownLease",
    "VersionConflict",
    "AssetMissing",
    "IncompatibleManifest",
    "ShapeMismatch",
    "HandleClosed",
    "RegistryUnreachable",
    "ChecksumMismatch",
    "FetchFailed",
    "PipelineError",
    "EmptyWorkload",
    "AgentError",
    "MalformedSpan",
    "UnknownTrace",
    "EmptyInput",
    "MissingBaseline",
    "NoData",
    "NoCapableAgent",
    "UnknownJob",
    "UnknownReport",
    "JobNotCompleted",
    "RpcError",
    "error_from_code",
]


class BenchrigError(Exception):
    """Base class for all benchrig errors."""

    code = "internal"


class ManifestSyntaxError(BenchrigError):
    """Manifest or constraint text is not a well-formed document."""

    code = "syntax"


class ValidationError(BenchrigError):
    """A schema invariant was violated; carries the offending field path."""

    code = "validation"

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class UnsupportedStep(BenchrigError):
    """A processing step names an op outside {decode, resize, normalize, argsort}."""

    code = "unsupported_step"

    def __init__(self, op: str, path: str = ""):
        where = f" at {path}" if path else ""
        super().__init__(f"unsupported processing step {op!r}{where}")
        self.op = op
        self.path = path


class UnsupportedFeature(BenchrigError):
    """A manifest feature parses fine but cannot be executed (e.g. custom code)."""

    code = "unsupported_feature"


class DecodeError(BenchrigError):
    """Malformed bytes: a protocol frame, message body, image, or record file."""

    code = "decode"


class DuplicateAgentId(BenchrigError):
    """An agent id is already registered under a live lease."""

    code = "duplicate_agent_id"


class UnknownLease(BenchrigError):
    """Lease id is unknown or expired; the agent must re-register."""

    code = "unknown_lease"


class VersionConflict(BenchrigError):
    """A (name, version) key is already published with different content."""

    code = "version_conflict"


class AssetMissing(BenchrigError):
    """A required model asset (weights, labels) was not supplied."""

    code = "asset_missing"


class IncompatibleManifest(BenchrigError):
    """Manifest's framework name/constraint does not match the predictor."""

    code = "incompatible_manifest"


class ShapeMismatch(BenchrigError):
    """Tensor shape does not match what the loaded model expects."""

    code = "shape_mismatch"


class HandleClosed(BenchrigError):
    """Operation on a predictor handle after model_unload."""

    code = "handle_closed"


class RegistryUnreachable(BenchrigError):
    """The registry endpoint cannot be reached."""

    code = "registry_unreachable"


class ChecksumMismatch(BenchrigError):
    """Fetched asset content does not hash to the expected checksum."""

    code = "checksum_mismatch"

    def __init__(self, url: str, expected: str, actual: str):
        super().__init__(
            f"checksum mismatch for {url}: expected {expected}, got {actual}"
        )
        self.url = url
        self.expected = expected
        self.actual = actual


class FetchFailed(BenchrigError):
    """An asset could not be downloaded."""

    code = "fetch_failed"


class PipelineError(BenchrigError):
    """An operator failed while processing an item."""

    code = "pipeline"

    def __init__(self, operator: str, sequence: int, reason: str):
        super().__init__(f"operator {operator!r} failed on item {sequence}: {reason}")
        self.operator = operator
        self.sequence = sequence
        self.reason = reason


class EmptyWorkload(BenchrigError):
    """A workload plan was requested for zero input items."""

    code = "empty_workload"


class AgentError(BenchrigError):
    """An agent-side failure surfaced during scenario execution."""

    code = "agent"

    def __init__(self, message: str, request_index: int | None = None):
        if request_index is not None:
            message = f"request {request_index}: {message}"
        super().__init__(message)
        self.request_index = request_index


class MalformedSpan(BenchrigError):
    """A published span violates span invariants (rejected individually)."""

    code = "malformed_span"


class UnknownTrace(BenchrigError):
    """No spans exist for the requested trace id."""

    code = "unknown_trace"


class EmptyInput(BenchrigError):
    """A statistic was requested over an empty sample."""

    code = "empty_input"


class MissingBaseline(BenchrigError):
    """Speedup requested for a model with no batch-size-1 measurement."""

    code = "missing_baseline"


class NoData(BenchrigError):
    """A report was requested over an empty evaluation set."""

    code = "no_data"


class NoCapableAgent(BenchrigError):
    """Constraint resolution found no live agent able to run the request."""

    code = "no_capable_agent"


class UnknownJob(BenchrigError):
    """The referenced evaluation job id is not known to this server."""

    code = "unknown_job"


class UnknownReport(BenchrigError):
    """The referenced analysis report id is not known to this server."""

    code = "unknown_report"


class JobNotCompleted(BenchrigError):
    """A summary was requested for a job that has not completed."""

    code = "job_not_completed"


class RpcError(BenchrigError):
    """A remote call failed with an error code not mapped to a typed class."""

    code = "rpc"


_CODE_TABLE = {
    cls.code: cls
    for cls in [
        ManifestSyntaxError,
        ValidationError,
        UnsupportedStep,
        UnsupportedFeature,
        DecodeError,
        DuplicateAgentId,
        UnknownLease,
        VersionConflict,
        AssetMissing,
        IncompatibleManifest,
        ShapeMismatch,
        HandleClosed,
        RegistryUnreachable,
        ChecksumMismatch,
        FetchFailed,
        PipelineError,
        EmptyWorkload,
        AgentError,
        MalformedSpan,
        UnknownTrace,
        EmptyInput,
        MissingBaseline,
        NoData,
        NoCapableAgent,
        UnknownJob,
        UnknownReport,
        JobNotCompleted,
    ]
}


def error_from_code(code: str, message: str) -> BenchrigError:
    """Reconstruct a typed error from a wire (code, message) pair.

    Classes whose constructors need structured arguments are rebuilt as the
    generic form carrying the rendered message; the type is what callers
    dispatch on.
    """
    cls = _CODE_TABLE.get(code)
    if cls is None:
        return RpcError(f"[{code}] {message}")
    err = cls.__new__(cls)
    Exception.__init__(err, message)
    return err
