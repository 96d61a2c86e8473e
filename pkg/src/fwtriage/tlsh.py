"""TLSH locality-sensitive digests (128 buckets, 1-byte checksum, 70 hex digits).

The digest text is laid out as::

    CC LL QQ BBBB...BB
    |  |  |  +-- 32 body bytes, 128 two-bit bucket codes (last bucket group first)
    |  |  +----- q1/q3 ratio in the high nibble, q2/q3 ratio in the low nibble
    |  +-------- log-encoded input length, nibble-swapped
    +----------- rolling checksum, nibble-swapped

Distances follow the reference scoring: circular length and ratio
differences, a one-point checksum penalty and a per-code body difference
where opposite codes (0 vs 3) cost 6.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from fwtriage.exceptions import (
    DigestError,
    InputTooShort,
    InsufficientComplexity,
    MalformedDigest,
)

__all__ = [
    "TlshHasher",
    "MIN_DATA_LENGTH",
    "DIGEST_HEX_LENGTH",
    "TlshDigest",
    "DigestArrays",
    "digest",
    "bucket_counts",
    "parse_digest",
    "format_digest",
    "distance",
    "distances_to",
    "length_code",
]

MIN_DATA_LENGTH = 50
DIGEST_HEX_LENGTH = 70
BUCKETS = 128
CODE_SIZE = BUCKETS // 4
WINDOW_SIZE = 5

# scoring constants of the reference implementation
LENGTH_MULT = 12
QRATIO_MULT = 12
RANGE_LVALUE = 256
RANGE_QRATIO = 16

# Pearson permutation used as the bucket mapping
PEARSON_TABLE = np.array([
    1, 87, 49, 12, 176, 178, 102, 166, 121, 193, 6, 84, 249, 230, 44, 163,
    14, 197, 213, 181, 161, 85, 218, 80, 64, 239, 24, 226, 236, 142, 38, 200,
    110, 177, 104, 103, 141, 253, 255, 50, 77, 101, 81, 18, 45, 96, 31, 222,
    25, 107, 190, 70, 86, 237, 240, 34, 72, 242, 20, 214, 244, 227, 149, 235,
    97, 234, 57, 22, 60, 250, 82, 175, 208, 5, 127, 199, 111, 62, 135, 248,
    174, 169, 211, 58, 66, 154, 106, 195, 245, 171, 17, 187, 182, 179, 0, 243,
    132, 56, 148, 75, 128, 133, 158, 100, 130, 126, 91, 13, 153, 246, 216, 219,
    119, 68, 223, 78, 83, 88, 201, 99, 122, 11, 92, 32, 136, 114, 52, 10,
    138, 30, 48, 183, 156, 35, 61, 26, 143, 74, 251, 94, 129, 162, 63, 152,
    170, 7, 115, 167, 241, 206, 3, 150, 55, 59, 151, 220, 90, 53, 23, 131,
    125, 173, 15, 238, 79, 95, 89, 16, 105, 137, 225, 224, 217, 160, 37, 123,
    118, 73, 2, 157, 46, 116, 9, 145, 134, 228, 207, 212, 202, 215, 69, 229,
    27, 188, 67, 124, 168, 252, 42, 4, 29, 108, 21, 247, 19, 205, 39, 203,
    233, 40, 186, 147, 198, 192, 155, 33, 164, 191, 98, 204, 165, 180, 117, 76,
    140, 36, 210, 172, 41, 54, 159, 8, 185, 232, 113, 196, 231, 47, 146, 120,
    51, 65, 28, 144, 254, 221, 93, 189, 194, 139, 112, 43, 71, 109, 184, 209,
], dtype=np.uint8)

# (salt, offsets of the two older window bytes) for the six trigrams per position
_TRIGRAMS = ((2, 1, 2), (3, 1, 3), (5, 2, 3), (7, 2, 4), (11, 1, 4), (13, 3, 4))

_HEX_RE = re.compile(r"[0-9A-Fa-f]{70}")


def _pair_diff_table() -> np.ndarray:
    table = np.zeros((256, 256), dtype=np.uint8)
    for x in range(256):
        for y in range(256):
            d = 0
            for shift in range(0, 8, 2):
                c = abs(((x >> shift) & 3) - ((y >> shift) & 3))
                d += 6 if c == 3 else c
            table[x, y] = d
    return table


BODY_DIFF_TABLE = _pair_diff_table()


def _swap_nibbles(b: int) -> int:
    return ((b & 0x0F) << 4) | (b >> 4)


def length_code(n: int) -> int:
    """Log-encode a byte length into one byte.

    Piecewise logarithm with bases 1.5, 1.3 and 1.1; the offsets make
    the pieces continuous at 656 and 3199 bytes.
    """
    if n <= 0:
        raise ValueError("length must be positive")
    if n <= 656:
        code = math.floor(math.log(n) / math.log(1.5))
    elif n <= 3199:
        code = math.floor(math.log(n) / math.log(1.3) - 8.72777)
    else:
        code = math.floor(math.log(n) / math.log(1.1) - 62.5472)
    return code & 0xFF


@dataclass(frozen=True)
class TlshDigest:
    """A parsed TLSH digest.

    Header bytes are kept exactly as serialized, so ``checksum`` of the
    digest ``"4741..."`` is ``0x47``. The decoded length code and quartile
    ratios used for scoring are exposed as properties.
    """

    checksum: int
    log_length: int
    q_ratios: int
    body: bytes

    def __post_init__(self):
        if len(self.body) != CODE_SIZE:
            raise MalformedDigest(f"body must be {CODE_SIZE} bytes, got {len(self.body)}")
        for name in ("checksum", "log_length", "q_ratios"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFF:
                raise MalformedDigest(f"{name} out of byte range: {v}")

    @property
    def length_code(self) -> int:
        return _swap_nibbles(self.log_length)

    @property
    def q1_ratio(self) -> int:
        return self.q_ratios >> 4

    @property
    def q2_ratio(self) -> int:
        return self.q_ratios & 0x0F

    @property
    def text_form(self) -> str:
        return format_digest(self)

    def __str__(self) -> str:
        return self.text_form

    def to_bytes(self) -> bytes:
        return bytes((self.checksum, self.log_length, self.q_ratios)) + self.body

    def distance(self, other: "TlshDigest", include_length: bool = True) -> int:
        return distance(self, other, include_length=include_length)


def bucket_counts(data) -> tuple[np.ndarray, int]:
    """Accumulate trigram bucket counts over a sliding 5-byte window.

    Returns the 256 bucket counts and the rolling checksum byte. Every
    window position emits six trigrams, so the counts sum to
    ``6 * (len(data) - 4)`` for inputs of at least five bytes.
    """
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    counts = np.zeros(256, dtype=np.int64)
    if len(buf) < WINDOW_SIZE:
        return counts, 0
    n = len(buf)
    # lagged[k][i] is the byte k positions behind position i + 4
    lagged = [buf[WINDOW_SIZE - 1 - k: n - k] for k in range(WINDOW_SIZE)]
    head = lagged[0]
    t = PEARSON_TABLE
    for salt, k1, k2 in _TRIGRAMS:
        h = t[t[t[t[salt] ^ head] ^ lagged[k1]] ^ lagged[k2]]
        counts += np.bincount(h, minlength=256)

    # checksum is a sequential recurrence over window positions
    pre = t[t[t[0] ^ head] ^ lagged[1]].tobytes()
    table = PEARSON_TABLE.tobytes()
    cs = 0
    for h in pre:
        cs = table[h ^ cs]
    return counts, cs


def _quartiles(counts: np.ndarray) -> tuple[int, int, int]:
    s = np.sort(counts[:BUCKETS])
    return int(s[BUCKETS // 4 - 1]), int(s[BUCKETS // 2 - 1]), int(s[3 * BUCKETS // 4 - 1])


def digest(data) -> TlshDigest:
    """Compute the TLSH digest of a byte sequence.

    Raises
    ------
    InputTooShort
        Fewer than ``MIN_DATA_LENGTH`` bytes.
    InsufficientComplexity
        Half or more of the buckets are empty, or the third quartile is zero.
    """
    data = bytes(data)
    if len(data) < MIN_DATA_LENGTH:
        raise InputTooShort(f"need at least {MIN_DATA_LENGTH} bytes, got {len(data)}")
    counts, checksum = bucket_counts(data)
    q1, q2, q3 = _quartiles(counts)
    if q3 == 0:
        raise InsufficientComplexity("third quartile of bucket counts is zero")
    used = counts[:BUCKETS]
    if np.count_nonzero(used) <= BUCKETS // 2:
        raise InsufficientComplexity("too few non-empty buckets")

    codes = np.zeros(BUCKETS, dtype=np.uint8)
    codes[used > q1] = 1
    codes[used > q2] = 2
    codes[used > q3] = 3
    groups = codes.reshape(CODE_SIZE, 4).astype(np.uint16)
    packed = groups[:, 0] | (groups[:, 1] << 2) | (groups[:, 2] << 4) | (groups[:, 3] << 6)
    body = packed[::-1].astype(np.uint8).tobytes()

    q1_ratio = (q1 * 100 // q3) % 16
    q2_ratio = (q2 * 100 // q3) % 16
    return TlshDigest(
        checksum=_swap_nibbles(checksum),
        log_length=_swap_nibbles(length_code(len(data))),
        q_ratios=(q1_ratio << 4) | q2_ratio,
        body=body,
    )


def parse_digest(text: str) -> TlshDigest:
    """Parse a 70-hex-digit digest, tolerating a leading ``T1`` version tag."""
    if not isinstance(text, str):
        raise MalformedDigest(f"expected str, got {type(text).__name__}")
    s = text.strip()
    if len(s) == DIGEST_HEX_LENGTH + 2 and s[:2] in ("T1", "t1"):
        s = s[2:]
    if not _HEX_RE.fullmatch(s):
        raise MalformedDigest(f"not a 70-hex-digit TLSH digest: {text!r}")
    raw = bytes.fromhex(s)
    return TlshDigest(raw[0], raw[1], raw[2], raw[3:])


def format_digest(d: TlshDigest) -> str:
    return d.to_bytes().hex().upper()


def _mod_diff(x: int, y: int, r: int) -> int:
    d = abs(x - y)
    return min(d, r - d)


def distance(a: TlshDigest, b: TlshDigest, include_length: bool = True) -> int:
    """Reference TLSH distance; 0 means identical digests."""
    diff = 0
    if include_length:
        ldiff = _mod_diff(a.length_code, b.length_code, RANGE_LVALUE)
        diff += ldiff if ldiff <= 1 else ldiff * LENGTH_MULT
    for x, y in ((a.q1_ratio, b.q1_ratio), (a.q2_ratio, b.q2_ratio)):
        qdiff = _mod_diff(x, y, RANGE_QRATIO)
        diff += qdiff if qdiff <= 1 else (qdiff - 1) * QRATIO_MULT
    if a.checksum != b.checksum:
        diff += 1
    body_a = np.frombuffer(a.body, dtype=np.uint8)
    body_b = np.frombuffer(b.body, dtype=np.uint8)
    diff += int(BODY_DIFF_TABLE[body_a, body_b].sum(dtype=np.int64))
    return diff


class DigestArrays(NamedTuple):
    """Column-wise numpy view of many digests for batch scoring and indexing."""

    checksum: np.ndarray     # (n,) uint8, as serialized
    length: np.ndarray       # (n,) int16, decoded length code
    q1: np.ndarray           # (n,) int16
    q2: np.ndarray           # (n,) int16
    body: np.ndarray         # (n, 32) uint8
    digits: np.ndarray       # (n, 70) uint8, hex digit values of the text form

    @classmethod
    def from_digests(cls, digests: Sequence[TlshDigest]) -> "DigestArrays":
        n = len(digests)
        raw = np.frombuffer(b"".join(d.to_bytes() for d in digests), dtype=np.uint8)
        raw = raw.reshape(n, 3 + CODE_SIZE) if n else np.zeros((0, 3 + CODE_SIZE), np.uint8)
        return cls.from_raw(raw)

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "DigestArrays":
        raw = np.ascontiguousarray(raw, dtype=np.uint8)
        lv = raw[:, 1]
        digits = np.empty((raw.shape[0], 2 * raw.shape[1]), dtype=np.uint8)
        digits[:, 0::2] = raw >> 4
        digits[:, 1::2] = raw & 0x0F
        return cls(
            checksum=raw[:, 0].copy(),
            length=(((lv & 0x0F) << 4) | (lv >> 4)).astype(np.int16),
            q1=(raw[:, 2] >> 4).astype(np.int16),
            q2=(raw[:, 2] & 0x0F).astype(np.int16),
            body=raw[:, 3:].copy(),
            digits=digits,
        )

    def __len__(self) -> int:
        return self.checksum.shape[0]


def _mod_diff_arr(x: np.ndarray, y, r: int) -> np.ndarray:
    d = np.abs(x - y)
    return np.minimum(d, r - d)


def distances_to(arrays: DigestArrays, i: int, others, include_length: bool = True) -> np.ndarray:
    """Distances from digest ``i`` to the digests at positions ``others``.

    Same scores as :func:`distance`, vectorized over ``others``.
    """
    others = np.asarray(others, dtype=np.intp)
    diff = np.zeros(len(others), dtype=np.int64)
    if len(others) == 0:
        return diff
    if include_length:
        ld = _mod_diff_arr(arrays.length[others], arrays.length[i], RANGE_LVALUE).astype(np.int64)
        diff += np.where(ld <= 1, ld, ld * LENGTH_MULT)
    for col in (arrays.q1, arrays.q2):
        qd = _mod_diff_arr(col[others], col[i], RANGE_QRATIO).astype(np.int64)
        diff += np.where(qd <= 1, qd, (qd - 1) * QRATIO_MULT)
    diff += arrays.checksum[others] != arrays.checksum[i]
    diff += BODY_DIFF_TABLE[arrays.body[i][None, :], arrays.body[others]].sum(axis=1, dtype=np.int64)
    return diff


def coerce_digest(value) -> TlshDigest:
    """Accept a ``TlshDigest`` or its text form."""
    if isinstance(value, TlshDigest):
        return value
    return parse_digest(value)


def coerce_digests(values: Iterable) -> list[TlshDigest]:
    return [coerce_digest(v) for v in values]


class TlshHasher(TransformerMixin, BaseEstimator):
    """Transform byte strings (or file paths) into digest texts.

    Parameters
    ----------
    on_error : {"raise", "null"}, default="raise"
        What to do with inputs that cannot be digested: re-raise the
        error, or emit None in their slot.
    from_paths : bool, default=False
        Treat inputs as file paths and hash the file contents.
    """

    def __init__(self, on_error="raise", from_paths=False):
        self.on_error = on_error
        self.from_paths = from_paths

    def fit(self, X=None, y=None):
        if self.on_error not in ("raise", "null"):
            raise ValueError(f"on_error must be 'raise' or 'null', got {self.on_error!r}")
        return self

    def _one(self, item):
        if self.from_paths:
            with open(item, "rb") as fh:
                item = fh.read()
        try:
            return str(digest(item))
        except DigestError:
            if self.on_error == "raise":
                raise
            return None

    def transform(self, X) -> list:
        self.fit()
        return [self._one(x) for x in X]
