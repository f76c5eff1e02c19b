"""Semantic versions and the version-constraint language.

Versions are plain ``major.minor.patch`` triples. A constraint is a
whitespace-separated conjunction of clauses; each clause is an optional
comparator followed by a version::

    constraint := clause (WS clause)*
    clause     := cmp? version
    cmp        := ">=" | "<=" | ">" | "<" | "="

A bare version means exact equality. Two-component versions ("2.0")
normalize by zero-filling the patch. An empty constraint matches anything.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import ClassVar

from .errors import ManifestSyntaxError

__all__ = ["SemVer", "VersionConstraint", "parse_constraint", "satisfies"]

_VERSION_RE = re.compile(r"(0|[1-9]\d*|\d)\.(0|[1-9]\d*|\d)(?:\.(0|[1-9]\d*|\d))?")
_COMPARATORS = (">=", "<=", ">", "<", "=")


@dataclass(frozen=True, order=True)
class SemVer:
    major: int
    minor: int
    patch: int = 0

    @classmethod
    def parse(cls, text: str) -> "SemVer":
        """Parse "X.Y" or "X.Y.Z" (missing patch treated as 0)."""
        if not isinstance(text, str):
            raise ManifestSyntaxError(f"version must be a string, got {type(text).__name__}")
        m = _VERSION_RE.fullmatch(text.strip())
        if m is None:
            raise ManifestSyntaxError(f"malformed version {text!r}")
        major, minor, patch = m.group(1), m.group(2), m.group(3)
        return cls(int(major), int(minor), int(patch) if patch is not None else 0)

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.patch}"


@dataclass(frozen=True)
class VersionConstraint:
    """Conjunction of (comparator, version) clauses; empty matches any version."""

    clauses: tuple[tuple[str, SemVer], ...] = ()

    ANY: ClassVar["VersionConstraint"]

    def allows(self, version: SemVer) -> bool:
        return all(_clause_holds(cmp, bound, version) for cmp, bound in self.clauses)

    def __str__(self) -> str:
        return " ".join(f"{cmp}{ver}" for cmp, ver in self.clauses)


VersionConstraint.ANY = VersionConstraint(())


def _clause_holds(cmp: str, bound: SemVer, version: SemVer) -> bool:
    if cmp == ">=":
        return version >= bound
    if cmp == "<=":
        return version <= bound
    if cmp == ">":
        return version > bound
    if cmp == "<":
        return version < bound
    if cmp == "=":
        return version == bound
    raise ManifestSyntaxError(f"unknown comparator {cmp!r}")


def parse_constraint(text: str) -> VersionConstraint:
    """Parse a constraint string; "" means "matches any version"."""
    if not isinstance(text, str):
        raise ManifestSyntaxError(f"constraint must be a string, got {type(text).__name__}")
    clauses = []
    for token in text.split():
        cmp = "="
        rest = token
        for candidate in _COMPARATORS:
            if token.startswith(candidate):
                cmp = candidate
                rest = token[len(candidate):]
                break
        else:
            # No comparator prefix: the token must be a bare version.
            if not token[0].isdigit():
                raise ManifestSyntaxError(f"unknown comparator in clause {token!r}")
        clauses.append((cmp, SemVer.parse(rest)))
    return VersionConstraint(tuple(clauses))


def satisfies(version: SemVer, constraint: VersionConstraint) -> bool:
    """True iff every clause of ``constraint`` holds for ``version``."""
    return constraint.allows(version)
