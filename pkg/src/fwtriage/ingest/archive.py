"""Recursive expansion of firmware container archives."""
from __future__ import annotations

import os
import shutil
import tarfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

import lz4.frame

from fwtriage.exceptions import UnreadableArchive

DEFAULT_MAX_DEPTH = 5
# checked longest suffix first
SUPPORTED_SUFFIXES = (".tar.md5", ".tar.gz", ".tgz", ".tar", ".zip", ".lz4")
UNSUPPORTED_SUFFIXES = (".pac", ".bin", ".dat", ".nb0")
_LZ4_MAGIC = b"\x04\x22\x4d\x18"


@dataclass
class SkippedMember:
    path: str
    reason: str


@dataclass
class ExpansionReport:
    root: Path
    files: list[str] = field(default_factory=list)
    skipped: list[SkippedMember] = field(default_factory=list)
    unsupported: list[str] = field(default_factory=list)
    depth: int = 0

    def to_dict(self) -> dict:
        return {
            "files": self.files,
            "skipped": [s.__dict__ for s in self.skipped],
            "unsupported": self.unsupported,
            "depth": self.depth,
        }


def archive_suffix(name: str) -> str | None:
    lower = name.lower()
    for suffix in SUPPORTED_SUFFIXES:
        if lower.endswith(suffix):
            return suffix
    return None


def _sniff(path: Path) -> str | None:
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head.startswith(b"PK\x03\x04") or head.startswith(b"PK\x05\x06"):
        return ".zip"
    if head.startswith(_LZ4_MAGIC):
        return ".lz4"
    if head.startswith(b"\x1f\x8b"):
        return ".tgz"
    if len(head) >= 262 and head[257:262] == b"ustar":
        return ".tar"
    return None


def _safe_relpath(name: str) -> str | None:
    parts = [p for p in PurePosixPath(name.replace("\\", "/")).parts if p not in ("", ".", "/")]
    if not parts or ".." in parts or PurePosixPath(name).is_absolute():
        return None
    return "/".join(parts)


def _expand_zip(path: Path, dest: Path, label: str, skipped: list) -> None:
    with zipfile.ZipFile(path) as zf:
        for info in zf.infolist():
            member = f"{label}/{info.filename}"
            if info.is_dir():
                continue
            rel = _safe_relpath(info.filename)
            if rel is None:
                skipped.append(SkippedMember(member, "unsafe path"))
                continue
            if info.flag_bits & 0x1:
                skipped.append(SkippedMember(member, "password"))
                continue
            target = dest / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            try:
                with zf.open(info) as src, open(target, "wb") as dst:
                    shutil.copyfileobj(src, dst, 1 << 20)
            except (zipfile.BadZipFile, RuntimeError, NotImplementedError, OSError, EOFError) as exc:
                target.unlink(missing_ok=True)
                skipped.append(SkippedMember(member, f"unreadable: {exc}"))


def _expand_tar(path: Path, dest: Path, label: str, skipped: list) -> None:
    # trailing data after the end-of-archive blocks (md5 line) is ignored
    with tarfile.open(path, mode="r:*") as tf:
        while True:
            try:
                info = tf.next()
            except tarfile.ReadError as exc:
                if tf.members:
                    break
                raise
            if info is None:
                break
            member = f"{label}/{info.name}"
            if info.isdir():
                continue
            if not info.isfile():
                skipped.append(SkippedMember(member, "special file"))
                continue
            rel = _safe_relpath(info.name)
            if rel is None:
                skipped.append(SkippedMember(member, "unsafe path"))
                continue
            target = dest / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            src = tf.extractfile(info)
            with src, open(target, "wb") as dst:
                shutil.copyfileobj(src, dst, 1 << 20)


def _expand_lz4(path: Path, dest_file: Path) -> None:
    with lz4.frame.open(path, "rb") as src, open(dest_file, "wb") as dst:
        shutil.copyfileobj(src, dst, 1 << 20)


def _strip_suffix(name: str, suffix: str) -> str:
    stem = name[: -len(suffix)] if name.lower().endswith(suffix) else name
    return stem or name + ".out"


def _free_path(p: Path) -> Path:
    if not p.exists():
        return p
    k = 1
    while (p.parent / f"{p.name}_{k}").exists():
        k += 1
    return p.parent / f"{p.name}_{k}"


def _expand_one(path: Path, kind: str, dest: Path, label: str, skipped: list) -> Path:
    """Expand ``path`` into ``dest`` (a directory, or a file for lz4)."""
    if kind == ".lz4":
        _expand_lz4(path, dest)
    elif kind == ".zip":
        dest.mkdir(parents=True, exist_ok=True)
        _expand_zip(path, dest, label, skipped)
    else:
        dest.mkdir(parents=True, exist_ok=True)
        _expand_tar(path, dest, label, skipped)
    return dest


def iter_files(root) -> list[str]:
    """Sorted relative POSIX paths of the regular files under ``root``."""
    root = Path(root)
    out = []
    for dirpath, _dirs, files in os.walk(root):
        for name in files:
            full = Path(dirpath) / name
            if full.is_file() and not full.is_symlink():
                out.append(full.relative_to(root).as_posix())
    return sorted(out)


def expand_archive(path, out_dir, max_depth: int = DEFAULT_MAX_DEPTH, kind: str | None = None,
                   name: str | None = None) -> ExpansionReport:
    """Expand ``path`` into the empty directory ``out_dir``, recursing into nested archives.

    A nested archive is replaced by a directory (or, for lz4, a file)
    carrying its name without the archive suffix. Unsupported formats,
    encrypted or unsafe members and corrupt nested archives are reported,
    not raised; only an unreadable top-level archive is fatal. ``kind``
    (a suffix such as ``".tar"``) overrides format detection for the
    top-level file; ``name`` stands in for the file name when the archive
    was staged under another one.
    """
    path, out = Path(path), Path(out_dir)
    name = name or path.name
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    if out.exists() and any(out.iterdir()):
        raise ValueError(f"{out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    report = ExpansionReport(root=out)
    try:
        kind = kind or archive_suffix(name) or _sniff(path)
    except OSError as exc:
        raise UnreadableArchive(f"{path}: {exc}") from exc
    if kind is None:
        why = "unsupported format" if name.lower().endswith(UNSUPPORTED_SUFFIXES) else "not an archive"
        raise UnreadableArchive(f"{name}: {why}")
    try:
        if kind == ".lz4":
            _expand_one(path, kind, out / _strip_suffix(name, ".lz4"), name, report.skipped)
        else:
            _expand_one(path, kind, out, name, report.skipped)
    except (zipfile.BadZipFile, tarfile.TarError, RuntimeError, EOFError, OSError) as exc:
        raise UnreadableArchive(f"{name}: {exc}") from exc
    report.depth = 1

    pending = [(rel, 1) for rel in iter_files(out)]
    while pending:
        rel, depth = pending.pop()
        name = PurePosixPath(rel).name
        kind = archive_suffix(name)
        if kind is None:
            if name.lower().endswith(UNSUPPORTED_SUFFIXES):
                report.unsupported.append(rel)
            continue
        if depth >= max_depth:
            report.skipped.append(SkippedMember(rel, "max depth"))
            continue
        src = out / rel
        dest = _free_path(src.parent / _strip_suffix(name, kind))
        try:
            _expand_one(src, kind, dest, rel, report.skipped)
        except (zipfile.BadZipFile, tarfile.TarError, RuntimeError, EOFError, OSError) as exc:
            if dest.is_dir():
                shutil.rmtree(dest)
            elif dest.exists():
                dest.unlink()
            report.skipped.append(SkippedMember(rel, f"unreadable: {exc}"))
            continue
        src.unlink()
        report.depth = max(report.depth, depth + 1)
        base = dest.relative_to(out).as_posix()
        if dest.is_dir():
            pending.extend((f"{base}/{r}", depth + 1) for r in iter_files(dest))
        else:
            pending.append((base, depth + 1))
    report.files = iter_files(out)
    report.unsupported.sort()
    return report
