"""Append-only on-disk catalog: JSONL journals per record kind plus md5-keyed blob areas."""
from __future__ import annotations

import json
import os
import shutil
import threading
from pathlib import Path
from typing import Callable, Iterator

from fwtriage.exceptions import DuplicateId, NotFound

ENV_ROOT = "FWTRIAGE_HOME"
JOURNAL_DIR = "journals"
IMPORT_AREA = "import"
STORE_AREA = "store"
FAILED_AREA = "import_failed"
APP_EXTRACT_AREA = "app_extract"
_AREAS = (IMPORT_AREA, STORE_AREA, FAILED_AREA, APP_EXTRACT_AREA)


def default_root() -> Path:
    return Path(os.environ.get(ENV_ROOT) or Path.home() / ".fwtriage")


class _Journal:
    def __init__(self, path: Path):
        self.path = path
        self.records: dict[str, dict] = {}
        self.good_size = 0
        self.dropped_tail = False
        self._load()

    def _load(self):
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        offset = 0
        while offset < len(data):
            end = data.find(b"\n", offset)
            if end < 0:
                self.dropped_tail = True  # partial write
                break
            line = data[offset:end]
            try:
                rec = json.loads(line) if line.strip() else None
            except ValueError:
                rec = None
                if end + 1 >= len(data):
                    self.dropped_tail = True
                    break
            if rec is not None:
                self.records[str(rec["id"])] = rec
            offset = end + 1
        self.good_size = offset

    def append(self, record: dict, fsync: bool):
        line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        mode = "r+b" if self.path.exists() else "wb"
        with open(self.path, mode) as fh:
            fh.seek(self.good_size)
            fh.truncate()
            fh.write(line.encode("utf-8"))
            fh.flush()
            if fsync:
                os.fsync(fh.fileno())
            self.good_size = fh.tell()
        self.dropped_tail = False
        self.records[str(record["id"])] = record

    def rewrite(self):
        tmp = self.path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            for rec in self.records.values():
                fh.write((json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)
        self.good_size = self.path.stat().st_size


class CatalogStore:
    """Records are JSON objects carrying a ``kind`` and an ``id``.

    Each kind lives in ``journals/<kind>.jsonl``; a later line with the
    same id supersedes earlier ones until :meth:`compact` rewrites the
    journal. Writes are serialized by a lock, so concurrent importers can
    share one store.
    """

    def __init__(self, root=None, fsync: bool = False):
        self.root = Path(root) if root is not None else default_root()
        self.fsync = fsync
        self._journals: dict[str, _Journal] = {}
        self._lock = threading.RLock()
        for area in _AREAS:
            (self.root / area).mkdir(parents=True, exist_ok=True)
        (self.root / JOURNAL_DIR).mkdir(parents=True, exist_ok=True)

    def area(self, name: str) -> Path:
        if name not in _AREAS:
            raise ValueError(f"unknown area {name!r}")
        return self.root / name

    def _journal(self, kind: str) -> _Journal:
        if not kind or not kind.replace("_", "").isalnum():
            raise ValueError(f"invalid record kind {kind!r}")
        j = self._journals.get(kind)
        if j is None:
            j = self._journals[kind] = _Journal(self.root / JOURNAL_DIR / f"{kind}.jsonl")
        return j

    def kinds(self) -> list[str]:
        return sorted(p.stem for p in (self.root / JOURNAL_DIR).glob("*.jsonl"))

    def put(self, record: dict, replace: bool = False) -> str:
        """Append ``record``; an existing id raises DuplicateId unless ``replace``."""
        if "kind" not in record or "id" not in record:
            raise ValueError("record needs 'kind' and 'id'")
        rec = json.loads(json.dumps(record))  # detach and check serializability
        rec["id"] = str(rec["id"])
        with self._lock:
            j = self._journal(rec["kind"])
            if rec["id"] in j.records and not replace:
                raise DuplicateId(f"{rec['kind']} record {rec['id']!r} already exists")
            j.append(rec, self.fsync)
        return rec["id"]

    def contains(self, kind: str, id: str) -> bool:
        with self._lock:
            return str(id) in self._journal(kind).records

    def get(self, kind: str, id: str) -> dict:
        with self._lock:
            rec = self._journal(kind).records.get(str(id))
        if rec is None:
            raise NotFound(f"no {kind} record {id!r}")
        return json.loads(json.dumps(rec))

    def query(self, kind: str, predicate: Callable[[dict], bool] | None = None) -> list[dict]:
        with self._lock:
            recs = list(self._journal(kind).records.values())
        return [json.loads(json.dumps(r)) for r in recs if predicate is None or predicate(r)]

    def iter_ids(self, kind: str) -> Iterator[str]:
        with self._lock:
            yield from list(self._journal(kind).records)

    def compact(self, kind: str | None = None) -> None:
        """Rewrite journals so each id appears on exactly one line."""
        with self._lock:
            for k in [kind] if kind else self.kinds():
                self._journal(k).rewrite()

    # -- blob areas ---------------------------------------------------------

    def store_blob(self, source, md5: str, area: str = STORE_AREA, move: bool = True) -> Path:
        dest = self.area(area) / md5
        with self._lock:
            if move:
                shutil.move(str(source), dest)
            else:
                shutil.copyfile(source, dest)
        return dest

    def blob_path(self, md5: str, area: str = STORE_AREA) -> Path:
        return self.area(area) / md5
