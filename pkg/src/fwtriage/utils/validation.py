"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import numbers
import re
from typing import Iterable, Sequence

from fwtriage.exceptions import DuplicateIdentifier
from fwtriage.tlsh import TlshDigest, coerce_digest


def check_non_negative_int(value, name: str, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < 0:
        raise ValueError(f"{name} must be non-negative, got {value}")
    return int(value)


def check_positive_number(value, name: str, minimum: float = 0.0, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a number, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return float(value)


def check_regex(pattern, name: str = "regex"):
    if pattern is None:
        return None
    try:
        return re.compile(pattern)
    except re.error as exc:
        raise ValueError(f"{name} does not compile: {exc}") from exc


def check_digest_input(X, ids: Sequence[str] | None = None) -> tuple[list[str], list[TlshDigest]]:
    """Normalize estimator input into parallel identifier and digest lists.

    ``X`` may be a sequence of digests (objects or hex text), a mapping of
    identifier to digest, or a sequence of ``(identifier, digest)`` pairs.
    When no identifiers are available, positions (``"0"``, ``"1"``, ...) are
    used.
    """
    if hasattr(X, "items"):
        pairs = list(X.items())
        if ids is not None:
            raise ValueError("ids must not be given together with a mapping")
        out_ids = [str(k) for k, _ in pairs]
        digests = [coerce_digest(v) for _, v in pairs]
    else:
        items = list(X)
        if items and isinstance(items[0], tuple) and len(items[0]) == 2 and ids is None:
            out_ids = [str(k) for k, _ in items]
            digests = [coerce_digest(v) for _, v in items]
        else:
            digests = [coerce_digest(v) for v in items]
            out_ids = [str(i) for i in range(len(items))] if ids is None else [str(i) for i in ids]
    if len(out_ids) != len(digests):
        raise ValueError(f"got {len(digests)} digests but {len(out_ids)} identifiers")
    seen = set()
    for i in out_ids:
        if i in seen:
            raise DuplicateIdentifier(i)
        seen.add(i)
    return out_ids, digests


def check_is_fitted(estimator, attributes: Iterable[str]):
    from sklearn.exceptions import NotFittedError

    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
