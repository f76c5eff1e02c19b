"""Asset management: checksum-verified download cache and record files.

Model graphs, weights, and label files are fetched on demand and cached on
the local filesystem, content-addressed by their SHA-256 checksum. A cached
entry is re-verified before every reuse and purged if it no longer hashes to
its name, so a corrupted cache heals itself on the next fetch.

Record files are the platform's dataset container: a flat sequence of
``[u32 little-endian length][payload]`` records, each payload one raw input
item (image bytes, serialized tensor, ...).
"""

from __future__ import annotations

import hashlib
import os
import threading
import urllib.error
import urllib.parse
import urllib.request
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ChecksumMismatch, DecodeError, FetchFailed

__all__ = [
    "AssetCache",
    "join_url",
    "file_url",
    "sha256_hex",
    "write_record_file",
    "iter_record_file",
    "read_record_file",
]

_ALLOWED_SCHEMES = ("file", "http", "https")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_url(path) -> str:
    """Absolute file:// URL for a local path."""
    return Path(path).resolve().as_uri()


def join_url(base_url: str, relative: str) -> str:
    """Join a manifest base_url with a relative asset path."""
    if not base_url:
        return relative
    return base_url.rstrip("/") + "/" + relative.lstrip("/")


def default_fetcher(url: str) -> bytes:
    """Fetch a file/http/https URL's bytes, or raise FetchFailed."""
    scheme = urllib.parse.urlsplit(url).scheme
    if scheme not in _ALLOWED_SCHEMES:
        raise FetchFailed(
            f"unsupported URL scheme {scheme!r} for {url} "
            f"(expected one of {', '.join(_ALLOWED_SCHEMES)})")
    try:
        with urllib.request.urlopen(url) as response:
            return response.read()
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise FetchFailed(f"could not fetch {url}: {exc}") from exc


class AssetCache:
    """Content-addressed download cache.

    ``fetcher`` is injectable for tests (callable ``url -> bytes``);
    ``fetch_count`` counts actual fetcher invocations so cache hits are
    observable. Entries with a known checksum live under ``sha256/``;
    checksum-less URLs are cached by the hash of the URL itself under
    ``unverified/``.
    """

    def __init__(self, root, fetcher=None):
        self.root = Path(root)
        self._fetcher = fetcher or default_fetcher
        self.fetch_count = 0
        self._lock = threading.Lock()
        (self.root / "sha256").mkdir(parents=True, exist_ok=True)
        (self.root / "unverified").mkdir(parents=True, exist_ok=True)

    def fetch_asset(self, url: str, expected_checksum: str | None = None) -> Path:
        """Return a local path for the asset at ``url``.

        With a checksum: the cached copy is verified before reuse and the
        downloaded bytes are verified before being admitted; a mismatch
        purges the entry and raises ChecksumMismatch.
        """
        with self._lock:
            if expected_checksum:
                return self._fetch_verified(url, expected_checksum.lower())
            return self._fetch_unverified(url)

    def _fetch_verified(self, url: str, checksum: str) -> Path:
        target = self.root / "sha256" / checksum
        if target.exists():
            if sha256_hex(target.read_bytes()) == checksum:
                return target
            target.unlink()  # corrupted cache entry: purge and refetch
        data = self._invoke_fetcher(url)
        actual = sha256_hex(data)
        if actual != checksum:
            raise ChecksumMismatch(url, expected=checksum, actual=actual)
        _atomic_write(target, data)
        return target

    def _fetch_unverified(self, url: str) -> Path:
        target = self.root / "unverified" / sha256_hex(url.encode("utf-8"))
        if target.exists():
            return target
        data = self._invoke_fetcher(url)
        _atomic_write(target, data)
        return target

    def _invoke_fetcher(self, url: str) -> bytes:
        self.fetch_count += 1
        data = self._fetcher(url)
        if not isinstance(data, bytes):
            raise FetchFailed(f"fetcher for {url} returned {type(data).__name__}, "
                              f"expected bytes")
        return data


def _atomic_write(target: Path, data: bytes) -> None:
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, target)


# ---------------------------------------------------------------------------
# Record files


def write_record_file(path, records: Iterable[bytes]) -> int:
    """Write records as [u32 LE length][payload] frames; returns the count."""
    count = 0
    with open(path, "wb") as fh:
        for record in records:
            if not isinstance(record, (bytes, bytearray)):
                raise DecodeError(
                    f"record {count} is {type(record).__name__}, expected bytes")
            fh.write(len(record).to_bytes(4, "little"))
            fh.write(record)
            count += 1
    return count


def iter_record_file(path) -> Iterator[bytes]:
    """Yield record payloads; raises DecodeError on truncation."""
    with open(path, "rb") as fh:
        index = 0
        while True:
            header = fh.read(4)
            if not header:
                return
            if len(header) < 4:
                raise DecodeError(f"record file truncated in header of record {index}")
            length = int.from_bytes(header, "little")
            payload = fh.read(length)
            if len(payload) < length:
                raise DecodeError(
                    f"record file truncated: record {index} declares {length} "
                    f"bytes, {len(payload)} present")
            yield payload
            index += 1


def read_record_file(path) -> list[bytes]:
    return list(iter_record_file(path))
