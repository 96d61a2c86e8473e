"""Newline-delimited ``identifier<TAB>digest`` batch files."""
from __future__ import annotations

import os
from typing import Iterable, TextIO

from fwtriage.exceptions import MalformedDigest
from fwtriage.tlsh import TlshDigest, coerce_digest, parse_digest


def parse_digest_batch(lines: Iterable[str]) -> list[tuple[str, TlshDigest]]:
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        ident, sep, text = line.partition("\t")
        if not sep:
            raise MalformedDigest(f"line {lineno}: expected 'identifier<TAB>digest'")
        try:
            out.append((ident, parse_digest(text)))
        except MalformedDigest as exc:
            raise MalformedDigest(f"line {lineno}: {exc}") from None
    return out


def read_digest_batch(source) -> list[tuple[str, TlshDigest]]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return parse_digest_batch(fh)
    return parse_digest_batch(source)


def write_digest_batch(pairs: Iterable[tuple[str, object]], destination: TextIO) -> None:
    for ident, d in pairs:
        destination.write(f"{ident}\t{coerce_digest(d)}\n")
