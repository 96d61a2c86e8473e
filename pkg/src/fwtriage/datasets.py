"""Synthetic corpora for testing and benchmarking the similarity index."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_random_state

from fwtriage.exceptions import DigestError
from fwtriage.tlsh import digest

_WORDS = (
    b"android system app service permission intent activity receiver provider "
    b"config build version release vendor package manager binder native library "
    b"signature certificate firmware partition image sparse block kernel module "
    b"the of and to in is for on with as by at from that this be or an are"
).split()


def _base_file(rng, size: int) -> bytes:
    """Half text-like tokens, half binary runs."""
    out = bytearray()
    while len(out) < size:
        if rng.random_sample() < 0.5:
            words = rng.randint(0, len(_WORDS), size=rng.randint(4, 24))
            out += b" ".join(_WORDS[w] for w in words) + b"\n"
        else:
            out += rng.randint(0, 256, size=rng.randint(8, 96)).astype(np.uint8).tobytes()
    return bytes(out[:size])


def _mutate(rng, data: bytes, n_edits: int) -> bytes:
    buf = bytearray(data)
    for _ in range(n_edits):
        op = rng.randint(0, 4)
        pos = rng.randint(0, max(1, len(buf)))
        if op == 0:
            buf[pos % len(buf)] = rng.randint(0, 256)
        elif op == 1:
            buf[pos:pos] = rng.randint(0, 256, size=rng.randint(1, 32)).astype(np.uint8).tobytes()
        elif op == 2 and len(buf) > 128:
            del buf[pos:pos + rng.randint(1, 32)]
        else:
            length = rng.randint(8, 64)
            src = rng.randint(0, max(1, len(buf) - length))
            buf[pos:pos] = buf[src:src + length]
    return bytes(buf)


def make_correlated_files(n_files: int = 1000, mean_family_size: float = 10.0,
                          size_range: tuple[int, int] = (512, 4096),
                          max_edit_fraction: float = 0.05, random_state=None):
    """Generate files in families of near-duplicates.

    Each family starts from a random base file; members are mutated copies
    with a random number of edits up to ``max_edit_fraction`` of the size.

    Returns
    -------
    files : list of bytes
    families : ndarray of shape (n_files,)
        Family index of each file.
    """
    rng = check_random_state(random_state)
    files, families = [], []
    family = 0
    while len(files) < n_files:
        size = rng.randint(size_range[0], size_range[1] + 1)
        base = _base_file(rng, size)
        members = max(1, int(rng.poisson(mean_family_size - 1)) + 1)
        for k in range(min(members, n_files - len(files))):
            if k == 0:
                files.append(base)
            else:
                edits = rng.randint(1, max(2, int(size * max_edit_fraction)))
                files.append(_mutate(rng, base, edits))
            families.append(family)
        family += 1
    return files, np.asarray(families)


def make_correlated_digests(n_files: int = 1000, random_state=None, **kwargs):
    """TLSH digests of :func:`make_correlated_files`, skipping undigestable files.

    Returns ``(ids, digests, families)`` with ids of the form ``f000123``.
    """
    files, families = make_correlated_files(n_files, random_state=random_state, **kwargs)
    ids, digests, fams = [], [], []
    for k, (data, fam) in enumerate(zip(files, families)):
        try:
            d = digest(data)
        except DigestError:
            continue
        ids.append(f"f{k:06d}")
        digests.append(d)
        fams.append(fam)
    return ids, digests, np.asarray(fams)


def make_synthetic_digests(n_digests: int = 10000, mean_family_size: float = 10.0,
                           max_code_changes: int = 24, random_state=None) -> list[str]:
    """Digest texts in families, generated directly without hashing files.

    Family roots are random 35-byte digests; members re-draw up to
    ``max_code_changes`` two-bit body codes and occasionally the header.
    Intended for scale benchmarks where hashing real files would dominate.
    """
    rng = check_random_state(random_state)
    out = np.zeros((n_digests, 35), dtype=np.uint8)
    k = 0
    while k < n_digests:
        root = rng.randint(0, 256, size=35).astype(np.uint8)
        members = min(n_digests - k, max(1, int(rng.poisson(mean_family_size - 1)) + 1))
        for m in range(members):
            row = root.copy()
            if m:
                codes = np.unpackbits(row[3:]).reshape(-1, 2)
                changes = rng.randint(1, max_code_changes + 1)
                idx = rng.randint(0, 128, size=changes)
                codes[idx] = np.unpackbits(rng.randint(0, 4, size=changes).astype(np.uint8)[:, None], axis=1)[:, -2:]
                row[3:] = np.packbits(codes.ravel())
                if rng.random_sample() < 0.5:
                    row[0] = rng.randint(0, 256)
            out[k] = row
            k += 1
    return [bytes(r).hex().upper() for r in out]
