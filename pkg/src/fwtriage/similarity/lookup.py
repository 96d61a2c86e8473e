"""Inverted (digit, column) lookup table over TLSH digests and candidate filtering.

Every digest contributes one key per column: the hex digit(s) found there
followed by the column index, e.g. ``"40"`` for a ``4`` in column 0. A
stored digest becomes a comparison candidate for a query when the two share
at least ``band_width_threshold`` keys.
"""
from __future__ import annotations

from typing import Iterable, Iterator, Sequence

import numpy as np

from fwtriage.exceptions import DuplicateIdentifier, UnknownIdentifier
from fwtriage.tlsh import DIGEST_HEX_LENGTH, TlshDigest, coerce_digest
from fwtriage.utils.validation import check_non_negative_int

__all__ = [
    "LookupTable",
    "build_lookup",
    "insert",
    "candidates",
    "digest_keys",
]

MAX_BAND_WIDTH = 8
_HEX = "0123456789ABCDEF"


def _digits_of(digest: TlshDigest) -> np.ndarray:
    raw = np.frombuffer(digest.to_bytes(), dtype=np.uint8)
    out = np.empty(2 * len(raw), dtype=np.uint8)
    out[0::2] = raw >> 4
    out[1::2] = raw & 0x0F
    return out


def digest_keys(digest, table_length: int = DIGEST_HEX_LENGTH, band_width: int = 1) -> list[str]:
    """Lookup keys generated by one digest, in column order."""
    text = str(coerce_digest(digest))
    return [f"{text[c:c + band_width]}{c}" for c in range(0, table_length, band_width)]


class LookupTable:
    """Map from ``digit + column`` keys to the identifiers stored under them.

    Identifiers are kept in insertion order; internally each key holds a
    sorted array of insertion positions, which keeps bulk candidate
    generation in numpy.

    Parameters
    ----------
    band_width : int
        Hex digits per key. 1 reproduces the documented table; wider bands
        are accepted but untuned.
    table_length : int
        Number of leading hex digits indexed (70 covers the whole digest).
    """

    def __init__(self, band_width: int = 1, table_length: int = DIGEST_HEX_LENGTH):
        if not 1 <= band_width <= MAX_BAND_WIDTH:
            raise ValueError(f"band_width must be in [1, {MAX_BAND_WIDTH}], got {band_width}")
        if not 1 <= table_length <= DIGEST_HEX_LENGTH:
            raise ValueError(f"table_length must be in [1, {DIGEST_HEX_LENGTH}]")
        self.band_width = band_width
        self.table_length = table_length
        self.columns = list(range(0, table_length, band_width))
        self._ids: list[str] = []
        self._index: dict[str, int] = {}
        self._digests: list[TlshDigest] = []
        self._codes = np.zeros((0, len(self.columns)), dtype=np.int64)
        self._n_codes = 0
        self._dirty = False
        self._uniq = np.zeros(0, dtype=np.int64)
        self._pos = np.zeros(0, dtype=np.int32)
        self._starts = np.zeros(1, dtype=np.int64)

    # -- construction -----------------------------------------------------

    def _encode(self, digits: np.ndarray) -> np.ndarray:
        """Integer key codes for a (n, 70) digit matrix, one per column."""
        w = self.band_width
        span = 16 ** w
        n = digits.shape[0]
        codes = np.empty((n, len(self.columns)), dtype=np.int64)
        for b, c in enumerate(self.columns):
            block = digits[:, c:min(c + w, self.table_length)].astype(np.int64)
            value = np.zeros(n, dtype=np.int64)
            for k in range(block.shape[1]):
                value = value * 16 + block[:, k]
            codes[:, b] = b * span + value
        return codes

    def add(self, identifier: str, digest) -> "LookupTable":
        identifier = str(identifier)
        if identifier in self._index:
            raise DuplicateIdentifier(identifier)
        d = coerce_digest(digest)
        code = self._encode(_digits_of(d)[None, :])
        if self._n_codes == self._codes.shape[0]:
            grown = np.zeros((max(16, 2 * self._n_codes), self._codes.shape[1]), dtype=np.int64)
            grown[:self._n_codes] = self._codes[:self._n_codes]
            self._codes = grown
        self._codes[self._n_codes] = code[0]
        self._n_codes += 1
        self._index[identifier] = len(self._ids)
        self._ids.append(identifier)
        self._digests.append(d)
        self._dirty = True
        return self

    def extend(self, pairs: Iterable[tuple[str, object]]) -> "LookupTable":
        pairs = list(pairs)
        ids = [str(i) for i, _ in pairs]
        digests = [coerce_digest(d) for _, d in pairs]
        seen = set(self._index)
        for i in ids:
            if i in seen:
                raise DuplicateIdentifier(i)
            seen.add(i)
        if not ids:
            return self
        digits = np.stack([_digits_of(d) for d in digests])
        codes = self._encode(digits)
        total = self._n_codes + len(ids)
        if total > self._codes.shape[0]:
            grown = np.zeros((max(total, 2 * self._n_codes), self._codes.shape[1]), dtype=np.int64)
            grown[:self._n_codes] = self._codes[:self._n_codes]
            self._codes = grown
        self._codes[self._n_codes:total] = codes
        self._n_codes = total
        for i, d in zip(ids, digests):
            self._index[i] = len(self._ids)
            self._ids.append(i)
            self._digests.append(d)
        self._dirty = True
        return self

    def _consolidate(self):
        if not self._dirty:
            return
        codes = self._codes[:self._n_codes]
        ncols = codes.shape[1]
        flat = codes.ravel()
        uniq, inverse = np.unique(flat, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        self._uniq = uniq
        self._pos = (order // ncols).astype(np.int32)
        counts = np.bincount(inverse, minlength=len(uniq))
        self._starts = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self._dirty = False

    # -- inspection -------------------------------------------------------

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, identifier) -> bool:
        return str(identifier) in self._index

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def digest_of(self, identifier: str) -> TlshDigest:
        try:
            return self._digests[self._index[str(identifier)]]
        except KeyError:
            raise UnknownIdentifier(identifier) from None

    def position(self, identifier: str) -> int:
        try:
            return self._index[str(identifier)]
        except KeyError:
            raise UnknownIdentifier(identifier) from None

    @property
    def digests(self) -> list[TlshDigest]:
        return list(self._digests)

    def _key_label(self, code: int) -> str:
        w = self.band_width
        span = 16 ** w
        b, value = divmod(int(code), span)
        c = self.columns[b]
        width = min(c + w, self.table_length) - c
        digits = []
        for _ in range(width):
            value, r = divmod(value, 16)
            digits.append(_HEX[r])
        return "".join(reversed(digits)) + str(c)

    @property
    def entries(self) -> dict[str, set[str]]:
        """Key string to identifier set; materialized on each access."""
        self._consolidate()
        out = {}
        for k, code in enumerate(self._uniq):
            members = self._pos[self._starts[k]:self._starts[k + 1]]
            out[self._key_label(code)] = {self._ids[p] for p in members}
        return out

    @property
    def n_keys(self) -> int:
        self._consolidate()
        return len(self._uniq)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LookupTable):
            return NotImplemented
        return (
            self.band_width == other.band_width
            and self.table_length == other.table_length
            and self.entries == other.entries
        )

    def __repr__(self) -> str:
        return (
            f"LookupTable(n_digests={len(self)}, band_width={self.band_width}, "
            f"table_length={self.table_length})"
        )

    # -- queries ----------------------------------------------------------

    def _query_slots(self, digest: TlshDigest) -> np.ndarray:
        """Dense key slots hit by ``digest``; -1 where the key is absent."""
        self._consolidate()
        codes = self._encode(_digits_of(digest)[None, :])[0]
        if len(self._uniq) == 0:
            return np.full(len(codes), -1, dtype=np.int64)
        slots = np.minimum(np.searchsorted(self._uniq, codes), len(self._uniq) - 1)
        return np.where(self._uniq[slots] == codes, slots, -1)

    def collision_counts(self, digest) -> np.ndarray:
        """Number of shared keys between ``digest`` and every stored digest."""
        d = coerce_digest(digest)
        n = len(self._ids)
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        slots = self._query_slots(d)
        parts = [self._pos[self._starts[s]:self._starts[s + 1]] for s in slots if s >= 0]
        if not parts:
            return np.zeros(n, dtype=np.int64)
        return np.bincount(np.concatenate(parts), minlength=n)

    def candidate_positions(self, digest, band_width_threshold: int) -> np.ndarray:
        counts = self.collision_counts(digest)
        if band_width_threshold <= 0:
            return np.arange(len(counts))
        return np.flatnonzero(counts >= band_width_threshold)

    def iter_candidate_pairs(
        self, band_width_threshold: int, start: int = 0, stop: int | None = None
    ) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(i, js)`` for stored positions ``i`` in ``[start, stop)``.

        ``js`` holds the positions ``j > i`` that share at least
        ``band_width_threshold`` keys with ``i``, so every unordered pair is
        produced once and self pairs never. Work per query is proportional
        to the sizes of its 70 key lists.
        """
        self._consolidate()
        n = len(self._ids)
        stop = n if stop is None else min(stop, n)
        if start >= stop:
            return
        codes = self._codes[:n]
        slots = np.searchsorted(self._uniq, codes)
        pos = self._pos
        ends = self._starts[1:].tolist()
        slot_rows = slots.tolist()
        if band_width_threshold <= 0:
            for i in range(start, stop):
                yield i, np.arange(i + 1, n)
            return
        # ptr[s] = first entry of key list s whose position exceeds the current query
        ptr = self._starts[:-1].copy()
        if start > 0:
            for s in range(len(ptr)):
                lo, hi = self._starts[s], self._starts[s + 1]
                ptr[s] = lo + np.searchsorted(pos[lo:hi], start, side="left")
        ptr = ptr.tolist()
        for i in range(start, stop):
            row = slot_rows[i]
            for s in row:
                ptr[s] += 1
            vals = np.concatenate([pos[ptr[s]:ends[s]] for s in row])
            if len(vals) == 0:
                yield i, vals.astype(np.intp)
                continue
            counts = np.bincount(vals - (i + 1), minlength=n - i - 1)
            yield i, np.flatnonzero(counts >= band_width_threshold) + (i + 1)


def build_lookup(
    digests: Sequence[tuple[str, object]] | dict,
    band_width: int = 1,
    table_length: int = DIGEST_HEX_LENGTH,
) -> LookupTable:
    """Index ``(identifier, digest)`` pairs into a new lookup table."""
    pairs = list(digests.items()) if hasattr(digests, "items") else list(digests)
    return LookupTable(band_width=band_width, table_length=table_length).extend(pairs)


def insert(table: LookupTable, identifier: str, digest) -> LookupTable:
    """Add one digest to ``table`` in place and return the table."""
    return table.add(identifier, digest)


def candidates(
    table: LookupTable,
    digest,
    restrict_to: Iterable[str] | None = None,
    band_width_threshold: int = 1,
) -> set[str]:
    """Identifiers sharing at least ``band_width_threshold`` keys with ``digest``.

    With a threshold of 0 every stored identifier qualifies. ``restrict_to``
    limits the answer to a subset of identifiers (unknown ones are ignored).
    """
    band_width_threshold = check_non_negative_int(band_width_threshold, "band_width_threshold")
    positions = table.candidate_positions(digest, band_width_threshold)
    ids = table._ids
    found = {ids[p] for p in positions}
    if restrict_to is not None:
        found &= set(map(str, restrict_to))
    return found
