"""Identifier derivation.

Trace, span, and evaluation ids are content-derived (SHA-256 prefixes) so a
fixed (model, scenario, seed) triple replays to byte-identical timelines and
re-publishing spans is naturally idempotent. Job and report ids are ULIDs:
time-ordered, unique, and deliberately excluded from deterministic summary
documents.
"""

from __future__ import annotations

import hashlib
import os
import time

__all__ = [
    "derive_trace_id",
    "derive_span_id",
    "derive_evaluation_id",
    "new_ulid",
    "ZERO_SPAN_ID",
]

# Synthetic "unparented" root spans use the all-zero span id.
ZERO_SPAN_ID = "0" * 16


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def derive_trace_id(model_name: str, model_version: str,
                    scenario_fingerprint: str, seed: int) -> str:
    """128-bit trace id as 32 hex chars."""
    return _digest("trace", model_name, model_version,
                   scenario_fingerprint, str(seed))[:32]


def derive_span_id(trace_id: str, *parts: object) -> str:
    """64-bit span id as 16 hex chars, derived from its position in the trace."""
    return _digest("span", trace_id, *[str(p) for p in parts])[:16]


def derive_evaluation_id(trace_id: str, agent_id: str) -> str:
    return _digest("evaluation", trace_id, agent_id)[:32]


_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def new_ulid(timestamp_ms: int | None = None) -> str:
    """26-character Crockford-base32 ULID (48-bit timestamp + 80 random bits)."""
    if timestamp_ms is None:
        timestamp_ms = time.time_ns() // 1_000_000
    value = (timestamp_ms & ((1 << 48) - 1)) << 80
    value |= int.from_bytes(os.urandom(10), "big")
    chars = []
    for shift in range(125, -5, -5):
        chars.append(_CROCKFORD[(value >> shift) & 0x1F])
    return "".join(chars)
