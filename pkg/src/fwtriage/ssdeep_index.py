"""Chunk index over externally produced ssdeep digests.

Each digest contributes the 42-bit integer of every 7-character window of
its two base64 strings, tagged with the block size the string belongs to.
Two digests can only score above zero when they share such a window at a
compatible block size, so lookups avoid scoring every pair.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator

from fwtriage.exceptions import MalformedDigest
from fwtriage.utils.validation import check_positive_number

WINDOW = 7
DEFAULT_SIZE_RATIO = 4.0

_B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"
_B64_VALUE = {c: i for i, c in enumerate(_B64)}
_DIGEST_RE = re.compile(
    r'^\s*(\d+):([A-Za-z0-9+/]*):([A-Za-z0-9+/]*)(?:,"?(.*?)"?)?\s*$'
)
_RUNS = re.compile(r"(.)\1{3,}")


def _is_block_size(n: int) -> bool:
    if n < 3 or n % 3:
        return False
    k = n // 3
    return k & (k - 1) == 0


@dataclass(frozen=True)
class SsdeepDigest:
    block_size: int
    chunk: str
    double_chunk: str
    source_name: str | None = None

    def __post_init__(self):
        if not _is_block_size(self.block_size):
            raise MalformedDigest(f"block size {self.block_size} is not 3*2^k")
        for part in (self.chunk, self.double_chunk):
            if any(c not in _B64_VALUE for c in part):
                raise MalformedDigest(f"non-base64 character in {part!r}")

    def __str__(self) -> str:
        return f"{self.block_size}:{self.chunk}:{self.double_chunk}"


def parse_ssdeep(text: str) -> SsdeepDigest:
    """Parse ``block_size:chunk:double_chunk`` with an optional ``,"name"`` suffix."""
    if not isinstance(text, str):
        raise MalformedDigest(f"expected text, got {type(text).__name__}")
    m = _DIGEST_RE.match(text)
    if m is None:
        raise MalformedDigest(f"not an ssdeep digest: {text[:80]!r}")
    return SsdeepDigest(int(m.group(1)), m.group(2), m.group(3), m.group(4))


def _coerce(value) -> SsdeepDigest:
    return value if isinstance(value, SsdeepDigest) else parse_ssdeep(value)


def _windows(chunk: str) -> Iterator[int]:
    vals = [_B64_VALUE[c] for c in chunk]
    for start in range(len(vals) - WINDOW + 1):
        x = 0
        for v in vals[start:start + WINDOW]:
            x = (x << 6) | v
        yield x


def extract_chunks(digest) -> set[tuple[int, int]]:
    """``(block_size, integer)`` for every 7-gram of both digest strings."""
    d = _coerce(digest)
    out = {(d.block_size, x) for x in _windows(d.chunk)}
    out.update((2 * d.block_size, x) for x in _windows(d.double_chunk))
    return out


def _strip_runs(chunk: str) -> str:
    # scorers collapse runs longer than three before comparing
    return _RUNS.sub(lambda m: m.group(1) * 3, chunk)


def _index_keys(d: SsdeepDigest) -> set:
    keys: set = set(extract_chunks(d))
    for size, part in ((d.block_size, d.chunk), (2 * d.block_size, d.double_chunk)):
        stripped = _strip_runs(part)
        if stripped != part:
            keys.update((size, x) for x in _windows(stripped))
    # identical short chunks score 100 without a shared window
    keys.add(("exact", d.block_size, _strip_runs(d.chunk)))
    return keys


class ChunkIndex:
    """Map from ``(block_size, chunk integer)`` to digest identifiers.

    Besides the raw windows the index also records windows of the
    run-collapsed strings and the exact collapsed first string, so that
    every pair a standard scorer could rate above zero shares a key.
    """

    def __init__(self):
        self.entries: dict = {}
        self.sizes: dict[str, int | None] = {}
        self.digests: dict[str, SsdeepDigest] = {}

    def __len__(self) -> int:
        return len(self.digests)

    def __contains__(self, identifier) -> bool:
        return identifier in self.digests

    def add(self, identifier: str, digest, size: int | None = None) -> None:
        """Index ``digest`` under ``identifier``; re-adding the same digest is a no-op."""
        d = _coerce(digest)
        identifier = str(identifier)
        old = self.digests.get(identifier)
        if old is not None and old != d:
            self.remove(identifier)
        self.digests[identifier] = d
        self.sizes[identifier] = size
        for key in _index_keys(d):
            self.entries.setdefault(key, set()).add(identifier)

    def remove(self, identifier: str) -> None:
        d = self.digests.pop(identifier)
        self.sizes.pop(identifier, None)
        for key in _index_keys(d):
            bucket = self.entries.get(key)
            if bucket is not None:
                bucket.discard(identifier)
                if not bucket:
                    del self.entries[key]

    def extend(self, items: Iterable) -> "ChunkIndex":
        for item in items:
            self.add(*item)
        return self

    def chunk_keys(self) -> set[tuple[int, int]]:
        """Integer window keys only, without the exact-string keys."""
        return {k for k in self.entries if k[0] != "exact"}


def find_candidates(index: ChunkIndex, digest, size_ratio: float | None = DEFAULT_SIZE_RATIO,
                    size: int | None = None) -> set[str]:
    """Identifiers sharing a window with ``digest`` at a compatible block size.

    Keys are tagged with the block size their string represents, so a
    shared key already implies equal, half or double block sizes. When both
    the query ``size`` and a candidate's size are known, the candidate must
    lie within ``size_ratio`` of the query; None disables the size filter.
    """
    size_ratio = check_positive_number(size_ratio, "size_ratio", minimum=1, allow_none=True)
    d = _coerce(digest)
    found: set[str] = set()
    for key in _index_keys(d):
        bucket = index.entries.get(key)
        if bucket:
            found |= bucket
    if size_ratio is None or not size:
        return found
    lo, hi = size / size_ratio, size * size_ratio
    return {
        i for i in found
        if index.sizes.get(i) is None or lo <= index.sizes[i] <= hi
    }


def parse_ssdeep_lines(lines: Iterable[str]) -> list[SsdeepDigest]:
    """Parse tool output, skipping blank lines and the ``ssdeep,1.1--`` header."""
    out = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("ssdeep,"):
            continue
        out.append(parse_ssdeep(line))
    return out


def build_index(digests: Iterable, sizes: dict | None = None) -> ChunkIndex:
    """Index digests keyed by their source name, or by position when unnamed."""
    index = ChunkIndex()
    for k, d in enumerate(digests):
        d = _coerce(d)
        ident = d.source_name or str(k)
        index.add(ident, d, (sizes or {}).get(ident))
    return index
