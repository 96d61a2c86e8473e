"""Firmware import: expand, locate the system image, read properties, inventory and register."""
from __future__ import annotations

import hashlib
import os
import re
import shutil
import tarfile
import tempfile
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path, PurePosixPath
from typing import Callable, Iterable

from fwtriage.catalog import APP_EXTRACT_AREA, FAILED_AREA, IMPORT_AREA, STORE_AREA, CatalogStore
from fwtriage.exceptions import (
    DigestError,
    DuplicateFirmware,
    DuplicateId,
    FwTriageError,
    SystemImageNotFound,
    UnreadableArchive,
)
from fwtriage.ingest.archive import expand_archive, iter_files
from fwtriage.ingest.buildprop import BuildProps, detect_version, device_identity, parse_build_props
from fwtriage.ingest.sparse import decode_sparse, is_sparse
from fwtriage.tlsh import MIN_DATA_LENGTH, digest

SYSTEM_IMAGE_ALTERNATES = (
    "system.rfs",
    "system.bin",
    "system.ext4.img",
    "system-sign.img",
    "sign-system.img",
    "system.img_sparsechunk.0",
    "system_6.img",
)
FUZZY_SYSTEM_IMAGE = re.compile(
    r"system.*\.(img|ext4|rfs|bin|raw|sin|simg|image|img_sparsechunk\.\d+)$", re.IGNORECASE)
MOUNT_DIR = "_mounted"
DEFAULT_TLSH_MAX_BYTES = 64 << 20
_CHUNK = 1 << 20


@dataclass(frozen=True)
class AppRecord:
    filename: str
    path: str
    md5: str
    size: int
    partition_hint: str


@dataclass
class InventoryEntry:
    path: str
    size: int
    md5: str
    tlsh: str | None


@dataclass
class FirmwareRecord:
    firmware_md5: str
    original_filename: str
    version_detected: str | None = None
    brand: str | None = None
    manufacturer: str | None = None
    model: str | None = None
    build_props: BuildProps = field(default_factory=BuildProps)
    build_props_path: str | None = None
    system_image_path: str | None = None
    app_records: list[AppRecord] = field(default_factory=list)
    file_inventory: list[InventoryEntry] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["build_props"] = self.build_props.to_dict()
        return d

    @classmethod
    def from_dict(cls, data) -> "FirmwareRecord":
        data = dict(data)
        for key in ("kind", "id"):
            data.pop(key, None)
        data["build_props"] = BuildProps.from_dict(data.get("build_props", {}))
        data["app_records"] = [AppRecord(**a) for a in data.get("app_records", [])]
        data["file_inventory"] = [InventoryEntry(**e) for e in data.get("file_inventory", [])]
        return cls(**data)


def file_md5(path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(_CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def _tree_paths(tree) -> list[str]:
    if isinstance(tree, (str, os.PathLike)):
        return iter_files(tree)
    return sorted(str(p) for p in tree)


def _depth_key(rel: str):
    return (rel.count("/"), rel)


def locate_system_image(tree) -> str | None:
    """Relative path of the system image, or None.

    Tiers: a file named exactly ``system.img``; then the known alternates
    in list order; then any ``system``-named file with an image-like
    extension. Ties within a tier go to the shallowest, then
    lexicographically first, path.
    """
    paths = _tree_paths(tree)
    names = {p: PurePosixPath(p).name.lower() for p in paths}
    exact = [p for p in paths if names[p] == "system.img"]
    if exact:
        return min(exact, key=_depth_key)
    for alt in SYSTEM_IMAGE_ALTERNATES:
        hits = [p for p in paths if names[p] == alt]
        if hits:
            return min(hits, key=_depth_key)
    fuzzy = [p for p in paths if FUZZY_SYSTEM_IMAGE.search(names[p])]
    return min(fuzzy, key=_depth_key) if fuzzy else None


def partition_hint(rel: str) -> str:
    for part in reversed(PurePosixPath(rel).parts[:-1]):
        if part in ("app", "priv-app"):
            return part
    return "other"


def enumerate_apks(tree) -> list[AppRecord]:
    """Every ``*.apk`` below the tree root (a directory) with md5, size and partition hint."""
    root = Path(tree)
    out = []
    for rel in iter_files(root):
        if rel.lower().endswith(".apk"):
            full = root / rel
            out.append(AppRecord(PurePosixPath(rel).name, rel, file_md5(full),
                                 full.stat().st_size, partition_hint(rel)))
    return out


def find_build_props(tree) -> str | None:
    """``build.prop`` preferred over ``default.prop``; shallowest, system/ paths first."""
    paths = _tree_paths(tree)
    for name in ("build.prop", "default.prop"):
        hits = [p for p in paths if PurePosixPath(p).name == name]
        if hits:
            return min(hits, key=lambda p: (not p.endswith(f"system/{name}"),) + _depth_key(p))
    return None


# -- raw image readers ----------------------------------------------------------

ImageReader = Callable[[Path, Path], bool]


def _tar_reader(image: Path, dest: Path) -> bool:
    if not tarfile.is_tarfile(image):
        return False
    expand_archive(image, dest, max_depth=1, kind=".tar")
    return True


def _zip_reader(image: Path, dest: Path) -> bool:
    if not zipfile.is_zipfile(image):
        return False
    expand_archive(image, dest, max_depth=1, kind=".zip")
    return True


DEFAULT_IMAGE_READERS: tuple[ImageReader, ...] = (_tar_reader, _zip_reader)


def read_image(image: Path, dest: Path, readers: Iterable[ImageReader] = DEFAULT_IMAGE_READERS) -> bool:
    """Try each reader; True once one has populated ``dest``.

    Filesystem images (ext4, f2fs, ...) need a reader supplied by the
    caller, or an already extracted directory passed as ``mounted_dir``.
    """
    for reader in readers:
        try:
            if reader(image, dest):
                return True
        except (FwTriageError, OSError, tarfile.TarError, zipfile.BadZipFile):
            if dest.exists():
                shutil.rmtree(dest)
    return False


# -- orchestration ----------------------------------------------------------------

def _inventory(root: Path, tlsh_max_bytes: int) -> list[InventoryEntry]:
    out = []
    for rel in iter_files(root):
        full = root / rel
        size = full.stat().st_size
        h = hashlib.md5()
        data = bytearray() if MIN_DATA_LENGTH <= size <= tlsh_max_bytes else None
        with open(full, "rb") as fh:
            for block in iter(lambda: fh.read(_CHUNK), b""):
                h.update(block)
                if data is not None:
                    data += block
        tl = None
        if data is not None:
            try:
                tl = str(digest(bytes(data)))
            except DigestError:
                tl = None
        out.append(InventoryEntry(rel, size, h.hexdigest(), tl))
    return out


def _record_failure(catalog: CatalogStore, md5: str, archive: Path, staged: Path, reason: str) -> None:
    catalog.store_blob(staged, md5, area=FAILED_AREA, move=True)
    catalog.put({"kind": "failed_import", "id": md5, "original_filename": archive.name,
                 "reason": reason}, replace=True)


def import_firmware(
    archive_path,
    catalog: CatalogStore,
    mounted_dir=None,
    image_readers: Iterable[ImageReader] = DEFAULT_IMAGE_READERS,
    max_depth: int = 5,
    tlsh_max_bytes: int = DEFAULT_TLSH_MAX_BYTES,
    keep_tree: bool = False,
) -> FirmwareRecord:
    """Import one firmware archive into ``catalog``.

    The archive is copied into the import area under its md5, expanded,
    and searched for a system image. A sparse image is decoded and handed
    to ``image_readers``; ``mounted_dir`` supplies an already extracted
    system tree instead. Files of the expanded tree (plus the system view
    under ``_mounted/``) are inventoried with md5 and TLSH; APKs are copied
    to the app-extract area. On success the archive lands in the store
    area; on failure in the failed area with a ``failed_import`` record.
    """
    archive = Path(archive_path)
    md5 = file_md5(archive)
    if catalog.contains("firmware", md5):
        raise DuplicateFirmware(md5)

    staged = catalog.area(IMPORT_AREA) / md5
    shutil.copyfile(archive, staged)
    work = Path(tempfile.mkdtemp(prefix=f"{md5}.", dir=catalog.area(IMPORT_AREA)))
    try:
        tree = work / "tree"
        try:
            report = expand_archive(staged, tree, max_depth=max_depth, name=archive.name)
        except UnreadableArchive as exc:
            _record_failure(catalog, md5, archive, staged, f"unreadable archive: {exc}")
            raise

        record = FirmwareRecord(firmware_md5=md5, original_filename=archive.name,
                                skipped=[s.__dict__ for s in report.skipped])
        record.warnings += [f"unsupported format: {p}" for p in report.unsupported]
        image = locate_system_image(tree)
        record.system_image_path = image
        if image is None and mounted_dir is None:
            _record_failure(catalog, md5, archive, staged, "system image not found")
            raise SystemImageNotFound(f"no system image in {archive.name}")

        view = tree / MOUNT_DIR
        if mounted_dir is not None:
            shutil.copytree(mounted_dir, view, symlinks=True)
        else:
            src = tree / image
            raw = src
            if is_sparse(src):
                raw = work / "system.raw"
                decode_sparse(src, raw)
            if not read_image(raw, view, image_readers):
                record.warnings.append(f"no reader for system image {image}; contents not listed")

        props_rel = find_build_props(view) if view.exists() else None
        if props_rel is not None:
            record.build_props_path = f"{MOUNT_DIR}/{props_rel}"
        else:
            props_rel = find_build_props(tree)
            record.build_props_path = props_rel
        if record.build_props_path is not None:
            record.build_props = parse_build_props((tree / record.build_props_path).read_bytes())
            record.version_detected = detect_version(record.build_props)
            ident = device_identity(record.build_props)
            record.brand, record.manufacturer, record.model = ident["brand"], ident["manufacturer"], ident["model"]
        else:
            record.warnings.append("no build.prop or default.prop found")

        record.app_records = enumerate_apks(tree)
        record.file_inventory = _inventory(tree, tlsh_max_bytes)

        extract = catalog.area(APP_EXTRACT_AREA) / md5
        for app in record.app_records:
            dest = extract / app.path
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(tree / app.path, dest)

        data = record.to_dict()
        try:
            catalog.put({"kind": "firmware", "id": md5, **data})
        except DuplicateId as exc:
            raise DuplicateFirmware(md5) from exc
        for app in record.app_records:
            catalog.put({"kind": "app", "id": f"{md5}:{app.path}", "firmware_md5": md5,
                         **asdict(app)}, replace=True)
        for entry in record.file_inventory:
            catalog.put({"kind": "digest", "id": f"{md5}:{entry.path}", "firmware_md5": md5,
                         **asdict(entry)}, replace=True)
        catalog.store_blob(staged, md5, area=STORE_AREA, move=True)
        if keep_tree:
            shutil.copytree(tree, catalog.root / "trees" / md5, dirs_exist_ok=True)
        return record
    finally:
        shutil.rmtree(work, ignore_errors=True)
        if staged.exists():
            staged.unlink()
