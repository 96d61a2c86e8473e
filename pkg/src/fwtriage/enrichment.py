"""String metadata enrichment: size, entropy and a first-match category decision."""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Protocol, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from fwtriage.exceptions import EmptyString
from fwtriage.utils.validation import check_positive_number, check_regex

CATEGORIES = ("sql", "url", "path", "secret", "numeric", "language", "encoded",
              "possibly_encrypted", "unknown")
_LOG10_2 = math.log10(2)
_LN_2 = math.log(2)
_WORD = re.compile(r"\w+")
_NUMERIC = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")

DEFAULT_PATTERNS: tuple[tuple[str, str], ...] = (
    ("secret", r"-----BEGIN (?:RSA |EC |DSA |OPENSSH |ENCRYPTED )?PRIVATE KEY-----"),
    ("sql", r"(?is)^\s*(?:SELECT\s.+?\sFROM\s|INSERT\s+(?:OR\s+\w+\s+)?INTO\s|UPDATE\s+\S+\s+SET\s"
            r"|DELETE\s+FROM\s|CREATE\s+(?:TEMP\w*\s+)?(?:TABLE|INDEX|VIEW|TRIGGER)\s"
            r"|DROP\s+(?:TABLE|INDEX|VIEW)\s|ALTER\s+TABLE\s)"),
    ("url", r"^[A-Za-z][A-Za-z0-9+.-]*://\S+$"),
    ("path", r"^(?:/|\.{1,2}/|~/|[A-Za-z]:\\)\S*$"),
)


class LanguageDetector(Protocol):
    def detect(self, value: str) -> tuple[str, float] | None: ...


class EncodingDetector(Protocol):
    def detect(self, value: bytes) -> str | None: ...


class NoLanguage:
    """Default detector: never recognizes a language."""

    def detect(self, value):
        return None


class NoEncoding:
    def detect(self, value):
        return None


@dataclass(frozen=True)
class StringMeta:
    value: str
    length: int
    word_count: int
    shannon_entropy: float
    hartley_entropy: float
    natural_entropy: float
    is_numeric: bool
    category: str
    language: str | None = None
    language_confidence: float | None = None
    encoding: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _as_bytes(value) -> bytes:
    return bytes(value) if isinstance(value, (bytes, bytearray, memoryview)) else str(value).encode("utf-8")


def _as_text(value) -> str:
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value).decode("utf-8", errors="replace")
    return str(value)


def shannon_entropy(value) -> float:
    """Bits per symbol over the UTF-8 bytes of ``value`` (bytes are used as-is)."""
    data = _as_bytes(value)
    n = len(data)
    if n == 0:
        return 0.0
    h = -sum(c / n * math.log2(c / n) for c in Counter(data).values())
    return h + 0.0  # no negative zero


def hartley_entropy(value) -> float:
    return shannon_entropy(value) * _LOG10_2


def natural_entropy(value) -> float:
    return shannon_entropy(value) * _LN_2


def word_count(value) -> int:
    return len(_WORD.findall(_as_text(value)))


def is_numeric(value) -> bool:
    return bool(_NUMERIC.match(_as_text(value).strip()))


def compile_patterns(patterns: Iterable[tuple[str, str]] | None = None) -> list[tuple[str, re.Pattern]]:
    out = []
    for category, pattern in patterns if patterns is not None else DEFAULT_PATTERNS:
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        out.append((category, check_regex(pattern, f"{category} pattern")))
    return out


_DEFAULT_COMPILED = compile_patterns()


def classify_pattern(value, patterns=None) -> str | None:
    """First category whose regex matches, in list order."""
    compiled = _DEFAULT_COMPILED if patterns is None else (
        patterns if patterns and isinstance(patterns[0][1], re.Pattern) else compile_patterns(patterns))
    text = _as_text(value)
    for category, rx in compiled:
        if rx.search(text):
            return category
    return None


def enrich(value, language_detector: LanguageDetector | None = None,
           encoding_detector: EncodingDetector | None = None, patterns=None,
           entropy_threshold: float = 7.0, min_length: int = 20) -> StringMeta:
    """Describe one string; the category comes from the first branch that applies.

    Order: numeric, pattern list, language, too short (unknown), encoding,
    entropy above ``entropy_threshold`` (possibly encrypted), unknown.
    """
    text = _as_text(value)
    if len(_as_bytes(value)) == 0:
        raise EmptyString("cannot enrich an empty string")
    length = len(value) if isinstance(value, (bytes, bytearray, memoryview)) else len(text)
    h = shannon_entropy(value)
    base = dict(value=text, length=length, word_count=word_count(text), shannon_entropy=h,
                hartley_entropy=h * _LOG10_2, natural_entropy=h * _LN_2)
    if is_numeric(text):
        return StringMeta(**base, is_numeric=True, category="numeric")
    category = classify_pattern(text, patterns)
    if category is not None:
        return StringMeta(**base, is_numeric=False, category=category)
    lang = (language_detector or NoLanguage()).detect(text)
    if lang is not None:
        tag, confidence = lang
        if not 0 <= confidence <= 100:
            raise ValueError(f"language confidence {confidence} outside 0..100")
        return StringMeta(**base, is_numeric=False, category="language",
                          language=tag, language_confidence=float(confidence))
    if length < min_length:
        return StringMeta(**base, is_numeric=False, category="unknown")
    enc = (encoding_detector or NoEncoding()).detect(_as_bytes(value))
    if enc is not None:
        return StringMeta(**base, is_numeric=False, category="encoded", encoding=enc)
    category = "possibly_encrypted" if h > entropy_threshold else "unknown"
    return StringMeta(**base, is_numeric=False, category=category)


class StringEnricher(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`enrich`; stateless, so ``fit`` only validates."""

    def __init__(self, patterns=None, language_detector=None, encoding_detector=None,
                 entropy_threshold=7.0, min_length=20):
        self.patterns = patterns
        self.language_detector = language_detector
        self.encoding_detector = encoding_detector
        self.entropy_threshold = entropy_threshold
        self.min_length = min_length

    def fit(self, X=None, y=None):
        check_positive_number(self.entropy_threshold, "entropy_threshold")
        check_positive_number(self.min_length, "min_length")
        self.patterns_ = compile_patterns(self.patterns)
        return self

    def transform(self, X: Sequence) -> list[StringMeta]:
        if not hasattr(self, "patterns_"):
            self.fit()
        return [
            enrich(v, self.language_detector, self.encoding_detector, self.patterns_,
                   self.entropy_threshold, self.min_length)
            for v in X
        ]


def enrich_lines(lines: Iterable[str], enricher: StringEnricher | None = None) -> Iterable[str]:
    """Batch mode: one JSON object per non-empty input line."""
    enricher = (enricher or StringEnricher()).fit()
    for line in lines:
        line = line.rstrip("\r\n")
        if not line:
            continue
        yield json.dumps(enricher.transform([line])[0].to_dict(), ensure_ascii=False)
