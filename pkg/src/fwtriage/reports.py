"""Aggregations over scanner reports and firmware file trees."""
from __future__ import annotations

import csv
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from fwtriage.exceptions import EmptySample

BASE_LEVELS = ("normal", "dangerous", "signature")
MALICIOUS_MIN_DETECTIONS = 4
_REPORT_NAME = re.compile(r"^([0-9a-fA-F]{32})\.([\w-]+)\.json$")


@dataclass
class ScannerReport:
    app_md5: str
    scanner_name: str
    payload: Any


def load_reports(directory, scanner: str | None = None) -> list[ScannerReport]:
    """Read ``<app_md5>.<scanner>.json`` files; other names are ignored."""
    out = []
    for p in sorted(Path(directory).iterdir()):
        m = _REPORT_NAME.match(p.name)
        if not m or (scanner and m.group(2) != scanner):
            continue
        with open(p, encoding="utf-8") as fh:
            out.append(ScannerReport(m.group(1).lower(), m.group(2), json.load(fh)))
    return out


def select_reports(reports: Iterable[ScannerReport], mode, app_versions: Mapping[str, str | None] | None = None,
                   ids: Iterable[str] = ()) -> list[ScannerReport]:
    """Mode ``0`` keeps listed app ids, ``1`` keeps all, anything else is an Android version."""
    mode = str(mode)
    reports = list(reports)
    if mode == "1":
        return reports
    if mode == "0":
        wanted = {i.lower() for i in ids}
        return [r for r in reports if r.app_md5 in wanted]
    versions = app_versions or {}
    return [r for r in reports if versions.get(r.app_md5) == mode]


def json_path_values(payload, json_path: str) -> list:
    """Values at a dotted path; a ``[]`` suffix on a segment flattens that list."""
    current = [payload]
    for segment in [s for s in json_path.split(".") if s]:
        flatten = segment.endswith("[]")
        key = segment[:-2] if flatten else segment
        nxt = []
        for node in current:
            if key:
                if not isinstance(node, Mapping) or key not in node:
                    continue
                node = node[key]
            if flatten:
                if isinstance(node, list):
                    nxt.extend(node)
            else:
                nxt.append(node)
        current = nxt
    return current


def _hashable(v):
    return v if isinstance(v, (str, int, float, bool)) or v is None else json.dumps(v, sort_keys=True)


def top_n(reports: Iterable, json_path: str, n: int | None = None) -> list[tuple[Any, int]]:
    """Most frequent values, counts descending, ties by value text ascending."""
    counts: Counter = Counter()
    for r in reports:
        payload = r.payload if isinstance(r, ScannerReport) else r
        counts.update(_hashable(v) for v in json_path_values(payload, json_path))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], str(kv[0])))
    return ranked if n is None else ranked[:n]


def base_level(level: str) -> str:
    """``dangerous|privileged`` -> dangerous; legacy signatureOrSystem -> signature."""
    head = str(level).split("|", 1)[0].strip()
    if head in ("signatureOrSystem", "signature"):
        return "signature"
    return head if head in BASE_LEVELS else "other"


@dataclass
class GroupedTotals:
    totals: dict[str, int]
    percentages: dict[str, float]


def group_base_permissions(level_counts: Mapping[str, int]) -> GroupedTotals:
    """Fold protection levels into base groups; percentages of the grand total."""
    totals = {k: 0 for k in BASE_LEVELS}
    for level, count in level_counts.items():
        if count < 0:
            raise ValueError(f"negative count for {level}")
        key = base_level(level)
        totals[key] = totals.get(key, 0) + int(count)
    grand = sum(totals.values())
    pct = {k: (100.0 * v / grand if grand else 0.0) for k, v in totals.items()}
    return GroupedTotals(totals, pct)


@dataclass
class Distribution:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    outliers: list[float]
    lower_fence: float
    upper_fence: float


def distribution(values: Iterable[float], whisker: float = 1.5) -> Distribution:
    """Five-number summary (linear-interpolated quartiles) and Tukey outliers."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise EmptySample("distribution of an empty sample")
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - whisker * iqr, q3 + whisker * iqr
    outliers = sorted(float(v) for v in arr if v < lo or v > hi)
    return Distribution(float(arr.min()), float(q1), float(med), float(q3), float(arr.max()),
                        outliers, float(lo), float(hi))


@dataclass
class CertificateReuse:
    unique_packages: int
    unique_certificates: int
    average_packages_per_certificate: float


def certificate_reuse(cert_to_packages: Mapping[str, Iterable[str]]) -> CertificateReuse:
    if not cert_to_packages:
        raise EmptySample("no certificates")
    packages = set()
    for pkgs in cert_to_packages.values():
        packages.update(pkgs)
    n_certs = len(cert_to_packages)
    return CertificateReuse(len(packages), n_certs, len(packages) / n_certs)


def detection_count(virus_report: Mapping) -> int:
    """Positive engines in a scanner summary, in whichever shape it comes."""
    if "positives" in virus_report:
        return int(virus_report["positives"])
    stats = virus_report.get("last_analysis_stats") or virus_report.get("attributes", {}).get("last_analysis_stats")
    if stats is not None:
        return int(stats.get("malicious", 0))
    scans = virus_report.get("scans") or virus_report.get("last_analysis_results") or {}
    entries = scans.values() if isinstance(scans, Mapping) else scans
    return sum(1 for e in entries
               if isinstance(e, Mapping) and (e.get("detected") or e.get("category") == "malicious"))


def flag_malicious(virus_report, min_detections: int = MALICIOUS_MIN_DETECTIONS) -> bool:
    count = virus_report if isinstance(virus_report, int) else detection_count(virus_report)
    return count >= min_detections


@dataclass
class TreeDiff:
    added: set[str]
    removed: set[str]
    changed: set[str]

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.changed)

    def to_dict(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("added", "removed", "changed")}


def tree_diff(tree_a: Mapping[str, str], tree_b: Mapping[str, str]) -> TreeDiff:
    """Compare path -> md5 maps of two builds."""
    a, b = set(tree_a), set(tree_b)
    return TreeDiff(b - a, a - b, {p for p in a & b if tree_a[p] != tree_b[p]})


def write_table_csv(rows: Iterable[tuple], header: tuple, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
