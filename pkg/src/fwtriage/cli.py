"""Command-line entry point: ``fwtriage <subcommand> ...``."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fwtriage import __version__
from fwtriage.catalog import ENV_ROOT, CatalogStore
from fwtriage.enrichment import StringEnricher, enrich_lines
from fwtriage.exceptions import (
    DigestError,
    DuplicateFirmware,
    FwTriageError,
    NotFound,
    SystemImageNotFound,
    UnreadableArchive,
)
from fwtriage.ingest import FirmwareRecord, file_md5, import_firmware, security_flags
from fwtriage.reports import (
    certificate_reuse,
    distribution,
    flag_malicious,
    group_base_permissions,
    json_path_values,
    load_reports,
    select_reports,
    top_n,
    tree_diff,
)
from fwtriage.similarity import (
    ClusterAnalysis,
    TlshClusterer,
    build_lookup,
    evaluate_thresholds,
    export_gexf,
    search_similar,
    write_evaluation_csv,
)
from fwtriage.ssdeep_index import ChunkIndex, parse_ssdeep_lines
from fwtriage.tlsh import digest
from fwtriage.utils.validation import check_non_negative_int, check_positive_number, check_regex


class UsageError(Exception):
    pass


def _nonneg(text: str) -> int:
    try:
        return check_non_negative_int(int(text), "value")
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _ratio(text: str) -> float:
    try:
        return check_positive_number(float(text), "size ratio", minimum=1.0)
    except (TypeError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _thresholds(text: str) -> list[int]:
    try:
        return [_nonneg(t) for t in text.split(",") if t.strip()]
    except argparse.ArgumentTypeError:
        raise
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _regex(text: str):
    try:
        return check_regex(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _emit(args, payload, text_lines=None):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in text_lines if text_lines is not None else [json.dumps(payload, indent=2, sort_keys=True)]:
            print(line)


def _catalog(args) -> CatalogStore:
    return CatalogStore(args.catalog)


def _tlsh_digests(store: CatalogStore, regex=None) -> list[tuple[str, str]]:
    out = []
    for rec in store.query("digest"):
        if not rec.get("tlsh"):
            continue
        if regex is not None and not regex.search(rec.get("path") or rec["id"]):
            continue
        out.append((rec["id"], rec["tlsh"]))
    out.sort()
    return out


def _analysis_id(kind: str, params: dict, digests) -> str:
    h = hashlib.sha1(kind.encode())
    h.update(json.dumps(params, sort_keys=True).encode())
    for ident, d in digests:
        h.update(f"\n{ident}\t{d}".encode())
    return h.hexdigest()[:16]


# -- subcommands ------------------------------------------------------------------

def cmd_import(args) -> int:
    store = _catalog(args)

    def one(path):
        try:
            rec = import_firmware(path, store, mounted_dir=args.mounted_dir)
            return ("imported", rec.firmware_md5, str(path),
                    f"version={rec.version_detected} apps={len(rec.app_records)}")
        except DuplicateFirmware as exc:
            return ("duplicate", exc.md5, str(path), "already imported")
        except (SystemImageNotFound, UnreadableArchive) as exc:
            return ("failed", file_md5(path), str(path), str(exc))

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        rows = list(pool.map(one, args.archives))
    _emit(args, [dict(zip(("status", "md5", "archive", "detail"), r)) for r in rows],
          ["\t".join(r) for r in rows])
    return 1 if any(r[0] == "failed" for r in rows) else 0


def _walk(paths):
    for p in map(Path, paths):
        if p.is_dir():
            yield from sorted(q for q in p.rglob("*") if q.is_file())
        else:
            yield p


def cmd_hash(args) -> int:
    store = _catalog(args)
    rows = []
    for p in _walk(args.paths):
        data = p.read_bytes()
        md5 = hashlib.md5(data).hexdigest()
        try:
            tl = str(digest(data))
        except DigestError:
            tl = None
        store.put({"kind": "digest", "id": md5, "path": str(p), "size": len(data),
                   "md5": md5, "tlsh": tl}, replace=True)
        rows.append({"id": md5, "path": str(p), "tlsh": tl})
    for f in args.ssdeep or []:
        with open(f, encoding="utf-8") as fh:
            for k, d in enumerate(parse_ssdeep_lines(fh)):
                ident = d.source_name or f"{Path(f).name}:{k}"
                store.put({"kind": "ssdeep", "id": ident, "digest": str(d)}, replace=True)
                rows.append({"id": ident, "ssdeep": str(d)})
    _emit(args, rows, [f"{r['id']}\t{r.get('tlsh') or r.get('ssdeep') or '-'}" for r in rows])
    return 0


def cmd_index(args) -> int:
    store = _catalog(args)
    pairs = _tlsh_digests(store)
    table = build_lookup(pairs, band_width=args.band_width)
    ss = ChunkIndex()
    for rec in store.query("ssdeep"):
        ss.add(rec["id"], rec["digest"], rec.get("size"))
    stats = {"tlsh_digests": len(table), "tlsh_keys": table.n_keys, "band_width": args.band_width,
             "ssdeep_digests": len(ss), "ssdeep_keys": len(ss.chunk_keys())}
    store.put({"kind": "index", "id": "current", **stats}, replace=True)
    _emit(args, stats, [f"{k}\t{v}" for k, v in stats.items()])
    return 0


def cmd_cluster(args) -> int:
    store = _catalog(args)
    pairs = _tlsh_digests(store, args.regex)
    params = {"band_width_threshold": args.threshold, "distance_threshold": args.distance,
              "band_width": args.band_width, "regex": args.regex.pattern if args.regex else None}
    aid = _analysis_id("cluster", params, pairs)
    model = TlshClusterer(args.threshold, args.distance, args.band_width, n_jobs=args.workers).fit(pairs)
    analysis = model.analysis_
    analysis.analysis_id = aid
    store.put({"kind": "analysis", "id": aid, "params": params, **analysis.to_dict()}, replace=True)
    summary = {"analysis_id": aid, "digests": len(pairs), "clusters": model.n_clusters_,
               "edges": len(analysis.edges), "comparisons": model.n_comparisons_}
    _emit(args, summary, [aid])
    return 0


def _load_analysis(store, aid) -> ClusterAnalysis:
    return ClusterAnalysis.from_dict(store.get("analysis", aid))


def cmd_search(args) -> int:
    analysis = _load_analysis(_catalog(args), args.analysis_id)
    hits = search_similar(analysis, args.digest_id)
    _emit(args, [{"id": i, "score": s} for i, s in hits],
          [f"{i}\t{'-' if s is None else s}" for i, s in hits])
    return 0


def cmd_evaluate(args) -> int:
    store = _catalog(args)
    pairs = _tlsh_digests(store, args.regex)
    rows = evaluate_thresholds(pairs, args.thresholds, args.distance, band_width=args.band_width)
    params = {"thresholds": args.thresholds, "distance_threshold": args.distance,
              "regex": args.regex.pattern if args.regex else None}
    eid = _analysis_id("evaluate", params, pairs)
    store.put({"kind": "evaluation", "id": eid, "params": params,
               "rows": [r.__dict__ for r in rows]}, replace=True)
    if args.json:
        print(json.dumps({"evaluation_id": eid, "rows": [r.__dict__ for r in rows]}))
    else:
        sys.stdout.write(write_evaluation_csv(rows))
    return 0


def cmd_export_gexf(args) -> int:
    export_gexf(_load_analysis(_catalog(args), args.analysis_id), args.file)
    print(f"wrote {args.file}", file=sys.stderr)
    return 0


def cmd_enrich(args) -> int:
    enricher = StringEnricher(entropy_threshold=args.entropy_threshold, min_length=args.min_length)
    fh = sys.stdin if args.strings_file == "-" else open(args.strings_file, encoding="utf-8", errors="replace")
    with fh:
        for line in enrich_lines(fh, enricher):
            print(line)
    return 0


def _app_versions(store) -> dict[str, str | None]:
    fw_version = {r["id"]: r.get("version_detected") for r in store.query("firmware")}
    return {r["md5"]: fw_version.get(r["firmware_md5"]) for r in store.query("app")}


def cmd_stats(args) -> int:
    store = _catalog(args)
    mode = "1" if args.all else (args.android_version if args.android_version is not None else args.mode)
    if mode is None:
        mode = "0" if args.ids else "1"
    sub = args.subreport

    if sub in ("versions", "security-flags"):
        fws = store.query("firmware")
        if mode == "0":
            fws = [f for f in fws if f["id"] in set(args.ids)]
        elif mode != "1":
            fws = [f for f in fws if f.get("version_detected") == mode]
        if sub == "versions":
            counts = Counter(f.get("version_detected") or "Unknown" for f in fws)
            table = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        else:
            counts = Counter()
            for f in fws:
                flags = security_flags(FirmwareRecord.from_dict(f).build_props).to_dict()
                counts.update(f"{k}={v}" for k, v in flags.items())
            table = sorted(counts.items())
        _emit(args, dict(table), [f"{k}\t{v}" for k, v in table])
        return 0

    if args.reports is None:
        raise UsageError(f"stats {sub} needs --reports DIR")
    reports = select_reports(load_reports(args.reports, args.scanner), mode,
                             _app_versions(store), args.ids)
    if sub == "top":
        table = top_n(reports, args.path, args.n)
        _emit(args, [[k, v] for k, v in table], [f"{k}\t{v}" for k, v in table])
    elif sub == "permission-levels":
        levels = Counter()
        for r in reports:
            levels.update(str(v) for v in json_path_values(r.payload, args.path))
        g = group_base_permissions(levels)
        payload = {"totals": g.totals, "percentages": g.percentages, "levels": dict(levels)}
        _emit(args, payload, [f"{k}\t{g.totals[k]}\t{g.percentages[k]:.1f}%" for k in g.totals])
    elif sub == "distribution":
        d = distribution(len(json_path_values(r.payload, args.path)) for r in reports)
        _emit(args, d.__dict__)
    elif sub == "certificates":
        certs: dict[str, set] = {}
        for r in reports:
            for c in json_path_values(r.payload, args.cert_path):
                certs.setdefault(str(c), set()).update(map(str, json_path_values(r.payload, args.package_path)))
        _emit(args, certificate_reuse(certs).__dict__)
    elif sub == "malicious":
        flagged = sorted(r.app_md5 for r in reports if flag_malicious(r.payload))
        _emit(args, {"flagged": flagged, "total": len(reports)}, flagged)
    return 0


def cmd_diff(args) -> int:
    store = _catalog(args)
    a, b = (store.get("firmware", m) for m in (args.fw_a, args.fw_b))
    tree = lambda rec: {e["path"]: e["md5"] for e in rec.get("file_inventory", [])}
    print(json.dumps(tree_diff(tree(a), tree(b)).to_dict(), indent=None if args.json else 2))
    return 0


def cmd_compact(args) -> int:
    _catalog(args).compact()
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fwtriage", description="Android firmware triage toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--catalog", default=None, help=f"catalog root (default ${ENV_ROOT} or ~/.fwtriage)")
    p.add_argument("--workers", type=_nonneg, default=1, help="worker threads (0 = all cores)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("import", help="import firmware archives")
    s.add_argument("archives", nargs="+", type=Path)
    s.add_argument("--mounted-dir", type=Path, help="already extracted system tree")
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("hash", help="TLSH-digest files into the catalog")
    s.add_argument("paths", nargs="*")
    s.add_argument("--ssdeep", action="append", help="ssdeep tool output to register")
    s.set_defaults(func=cmd_hash)

    s = sub.add_parser("index", help="lookup-table maintenance")
    s.add_argument("action", choices=["build"])
    s.add_argument("--band-width", type=_nonneg, default=1)
    s.set_defaults(func=cmd_index)

    def similarity_opts(s, thresholds=False):
        if thresholds:
            s.add_argument("--thresholds", type=_thresholds, default=[0, 1, 5, 10, 13, 20, 30, 50])
        else:
            s.add_argument("--threshold", type=_nonneg, default=13, help="band width threshold")
        s.add_argument("--distance", type=_nonneg, default=None, help="distance threshold")
        s.add_argument("--regex", type=_regex, default=None, help="filter digests by file path")
        s.add_argument("--band-width", type=_nonneg, default=1)
        s.add_argument("--size-ratio", type=_ratio, default=4.0, help="ssdeep size filter")

    s = sub.add_parser("cluster", help="cluster catalog digests")
    similarity_opts(s)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("search", help="members of a digest's cluster")
    s.add_argument("analysis_id")
    s.add_argument("digest_id")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("evaluate", help="filter evaluation against all-pairs ground truth")
    similarity_opts(s, thresholds=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("export-gexf", help="write an analysis as GEXF")
    s.add_argument("analysis_id")
    s.add_argument("file", type=Path)
    s.set_defaults(func=cmd_export_gexf)

    s = sub.add_parser("enrich", help="string metadata as JSON lines")
    s.add_argument("strings_file", help="one string per line, - for stdin")
    s.add_argument("--entropy-threshold", type=float, default=7.0)
    s.add_argument("--min-length", type=_nonneg, default=20)
    s.set_defaults(func=cmd_enrich)

    s = sub.add_parser("stats", help="aggregate reports")
    s.add_argument("subreport", choices=["versions", "security-flags", "top", "permission-levels",
                                         "distribution", "certificates", "malicious"])
    g = s.add_mutually_exclusive_group()
    g.add_argument("--mode", help="0 = listed ids, 1 = all, otherwise an Android version")
    g.add_argument("--all", action="store_true", help="same as --mode 1")
    g.add_argument("--version", dest="android_version", help="same as --mode <version>")
    s.add_argument("--ids", nargs="*", default=[], help="ids for mode 0")
    s.add_argument("--reports", type=Path, help="directory of <app_md5>.<scanner>.json files")
    s.add_argument("--scanner")
    s.add_argument("--path", default="permissions[]", help="dotted JSON path, [] flattens lists")
    s.add_argument("--n", type=_nonneg, default=30)
    s.add_argument("--cert-path", default="certificate.sha256")
    s.add_argument("--package-path", default="package_name")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("diff", help="file-tree diff of two imported firmware")
    s.add_argument("fw_a")
    s.add_argument("fw_b")
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("compact", help="rewrite journals to one line per record")
    s.set_defaults(func=cmd_compact)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    if args.workers == 0:
        args.workers = os.cpu_count() or 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fwtriage: {exc}", file=sys.stderr)
        return 2
    except (NotFound, FwTriageError, OSError, ValueError) as exc:
        print(f"fwtriage: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
