"""Acceptance criteria 1-11, one test each.

Every test records a PASS/FAIL line in RESULTS; conftest prints them in the
terminal summary, so the verdicts show up even without ``-s``.
"""
import contextlib
import hashlib
import math
import random
import struct
import time

import networkx as nx
import numpy as np
import pytest
import tlsh as ref

from fwtriage.catalog import CatalogStore
from fwtriage.datasets import make_correlated_digests, make_synthetic_digests
from fwtriage.enrichment import enrich, hartley_entropy, natural_entropy, shannon_entropy
from fwtriage.exceptions import DuplicateFirmware, SystemImageNotFound
from fwtriage.ingest import decode_sparse, detect_version, import_firmware, parse_build_props
from fwtriage.reports import certificate_reuse, flag_malicious, group_base_permissions
from fwtriage.similarity import (
    DistanceRecord,
    TlshClusterer,
    build_lookup,
    candidates,
    cluster,
    evaluate_filter,
    evaluate_thresholds,
)
from fwtriage.tlsh import digest, distance, parse_digest
from helpers import (
    LISTING_BUILD_PROP,
    fixture_firmware,
    random_image,
    sparse_encode,
    tlsh_fixture_files,
    zip_bytes,
)

RESULTS: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number, title):
    notes = []
    try:
        yield notes
    except BaseException as exc:
        line = f"criterion {number:>2} FAIL  {title}: {'; '.join(notes + [repr(exc)[:300]])}"
        RESULTS[number] = line
        print(line)
        raise
    line = f"criterion {number:>2} PASS  {title}: {'; '.join(notes)}"
    RESULTS[number] = line
    print(line)


def _hex_matrix(texts):
    return np.array([list(t) for t in texts])


def test_criterion_01_filter_soundness():
    with criterion(1, "candidates at threshold 1 equal positional-collision set") as notes:
        ids, ds, _ = make_correlated_digests(2000, random_state=101)
        texts = [str(d) for d in ds]
        assert all(len(t) == 70 for t in texts)
        t0 = time.perf_counter()
        table = build_lookup(list(zip(ids, ds)))
        got = [candidates(table, d, band_width_threshold=1) for d in ds]
        elapsed = time.perf_counter() - t0
        mat = _hex_matrix(texts)
        id_arr = np.array(ids)
        discrepancies = 0
        for q in range(len(ds)):
            expected = set(id_arr[(mat == mat[q]).any(axis=1)].tolist())
            discrepancies += got[q] != expected
        notes.append(f"{len(ds)} queries, {discrepancies} discrepancies, {elapsed:.2f}s")
        assert discrepancies == 0
        assert elapsed < 60


def test_criterion_02_filter_off_equivalence():
    with criterion(2, "threshold 0 misses nothing and prunes nothing") as notes:
        _, ds, _ = make_correlated_digests(1500, random_state=102)
        row = evaluate_filter(ds, 0, distance_threshold=100)
        notes.append(f"missed_rate={row.missed_rate_percent}% decrease_rate={row.decrease_rate_percent}%")
        assert row.missed_rate_percent == 0.0
        assert row.decrease_rate_percent == 0.0
        assert row.missed_count == 0


def test_criterion_03_monotone_tradeoff():
    with criterion(3, "comparisons fall and misses rise with threshold") as notes:
        _, ds, _ = make_correlated_digests(5000, random_state=103)
        thresholds = [1, 5, 10, 13, 20, 30, 50]
        rows = evaluate_thresholds(ds, thresholds, distance_threshold=100)
        comps = [r.number_of_comparisons for r in rows]
        missed = [r.missed_count for r in rows]
        rates = {r.band_width_threshold: r.decrease_rate_percent for r in rows}
        notes.append("decrease% " + " ".join(f"{t}:{rates[t]:.2f}" for t in thresholds))
        notes.append(f"missed {missed}")
        assert all(a >= b for a, b in zip(comps, comps[1:]))
        assert all(a <= b for a, b in zip(missed, missed[1:]))
        assert any(rates[t] > 90 for t in thresholds if t >= 20)


def test_criterion_04_clustering_oracle():
    with criterion(4, "component labels equal a graph-library oracle") as notes:
        mismatches = 0
        for seed in range(100):
            rng = random.Random(1000 + seed)
            n = rng.randint(1, 1000)
            ids = [f"v{i:04d}" for i in range(n)]
            dt = rng.choice([None, 40, 120])
            raw = [(rng.randrange(n), rng.randrange(n), rng.randint(0, 200))
                   for _ in range(rng.randint(0, 2 * n))]
            got = cluster([DistanceRecord.ordered(ids[a], ids[b], s) for a, b, s in raw], ids, dt)
            g = nx.Graph()
            g.add_nodes_from(ids)
            g.add_edges_from((ids[a], ids[b]) for a, b, s in raw if a != b and (dt is None or s <= dt))
            expected = {frozenset(c) for c in nx.connected_components(g)}
            produced = {}
            for ident, label in got.components.items():
                produced.setdefault(label, set()).add(ident)
            mismatches += {frozenset(c) for c in produced.values()} != expected
        notes.append(f"100 instances, {mismatches} mismatches")
        assert mismatches == 0


def test_criterion_05_tlsh_conformance():
    with criterion(5, "digests and distances equal the reference library") as notes:
        files = tlsh_fixture_files()
        texts = []
        for data in files:
            expected = ref.hash(data)
            if expected in ("", "TNULL"):
                continue
            assert str(digest(data)) == expected[2:]
            texts.append(expected)
        assert len(texts) >= 50
        for a in texts:
            for b in texts:
                assert distance(parse_digest(a[2:]), parse_digest(b[2:])) == ref.diff(a, b)
        rng = random.Random(105)
        pool = make_synthetic_digests(2000, random_state=105)
        for _ in range(10_000):
            a, b = rng.choice(pool), rng.choice(pool)
            da, db = parse_digest(a), parse_digest(b)
            assert distance(da, da) == 0
            assert distance(da, db) == distance(db, da) == ref.diff("T1" + a, "T1" + b)
        notes.append(f"{len(texts)} fixture digests, {len(texts) ** 2} distances, 10000 random pairs")


def _fuzz_build_prop(rng: random.Random, k: int) -> tuple[bytes, dict]:
    planted = {}
    lines = []
    for j in range(rng.randint(0, 60)):
        roll = rng.random()
        if roll < 0.5:
            key = f"ro.fuzz.k{k}.{j}"
            value = "".join(rng.choice("abc =.-_/:#") for _ in range(rng.randint(0, 20))).strip()
            planted[key] = value
            lines.append(f"{key}={value}".encode())
        elif roll < 0.6:
            lines.append(b"# " + bytes(rng.randrange(32, 127) for _ in range(10)))
        elif roll < 0.7:
            lines.append(b"import /oem/oem.prop ro.x.*")
        else:
            lines.append(bytes(rng.randrange(256) for _ in range(rng.randint(0, 80))).replace(b"\n", b""))
    return b"\n".join(lines), planted


def test_criterion_06_build_prop_fidelity():
    with criterion(6, "listing fields and fuzz-corpus totality") as notes:
        props = parse_build_props(LISTING_BUILD_PROP)
        listed_imports = sum(l.startswith("import ") for l in LISTING_BUILD_PROP.splitlines())
        notes.append(f"imports={len(props.imports)} of {listed_imports} import lines in the verbatim listing")
        assert props.pairs["ro.build.version.release"] == "6.0" == detect_version(props)
        assert props.pairs["ro.product.brand"] == "google"
        assert props.pairs["ro.product.model"] == "Nexus 6P"
        assert len(props.imports) == listed_imports
        rng = random.Random(106)
        failures = recovered = 0
        for k in range(500):
            data, planted = _fuzz_build_prop(rng, k)
            try:
                parsed = parse_build_props(data)
            except Exception:
                failures += 1
                continue
            # random garbage lines can carry '=' but never a planted key
            recovered += all(parsed.pairs.get(key) == v for key, v in planted.items())
        notes.append(f"500 fuzz files, {failures} failures, {recovered} with all planted pairs")
        assert failures == 0
        assert recovered == 500


def test_criterion_07_sparse_round_trip(tmp_path):
    with criterion(7, "sparse encode then decode reproduces the image") as notes:
        rng = np.random.default_rng(107)
        sizes = [1 << 20, 64 << 20] + [int(rng.integers(1, 65)) << 20 for _ in range(18)]
        for k, size in enumerate(sizes):
            image = random_image(rng, size)
            src, out = tmp_path / "img.simg", tmp_path / "img.raw"
            src.write_bytes(sparse_encode(image, skip_zero=bool(k % 2)))
            decode_sparse(src, out)
            assert hashlib.md5(out.read_bytes()).hexdigest() == hashlib.md5(image).hexdigest()
        # hand-built FILL and DONT_CARE vectors
        head = struct.pack("<IHHHHIIII", 0xED26FF3A, 1, 0, 28, 12, 4096, 3, 2, 0)
        body = struct.pack("<HHII", 0xCAC2, 0, 1, 16) + b"\x01\x02\x03\x04" + struct.pack("<HHII", 0xCAC3, 0, 2, 12)
        src.write_bytes(head + body)
        decode_sparse(src, out)
        assert out.read_bytes() == b"\x01\x02\x03\x04" * 1024 + b"\0" * 8192
        notes.append(f"{len(sizes)} images {min(sizes) >> 20}-{max(sizes) >> 20} MiB, unit vectors exact")


def test_criterion_08_end_to_end_import(tmp_path):
    with criterion(8, "fixture firmware import, duplicate and failure paths") as notes:
        store = CatalogStore(tmp_path / "catalog")
        fw = tmp_path / "fixture.zip"
        fw.write_bytes(fixture_firmware())
        rec = import_firmware(fw, store)
        hints = sorted((a.filename, a.partition_hint) for a in rec.app_records)
        notes.append(f"version={rec.version_detected} apps={hints}")
        assert rec.version_detected == "6.0"
        assert hints == [("Calculator.apk", "app"), ("Settings.apk", "priv-app")]
        with pytest.raises(DuplicateFirmware):
            import_firmware(fw, store)
        bad = tmp_path / "nosystem.zip"
        bad.write_bytes(zip_bytes({"boot.img": b"\1" * 256, "META/misc_info.txt": b"x"}))
        with pytest.raises(SystemImageNotFound):
            import_firmware(bad, store)
        assert len(store.query("failed_import")) == 1
        notes.append("duplicate rejected, failed import recorded")


def test_criterion_09_statistics_fidelity():
    with criterion(9, "permission shares, certificate reuse, malicious boundary") as notes:
        g = group_base_permissions({"normal": 77950, "signature": 70552, "dangerous": 23034})
        pct = {k: round(v, 2) for k, v in g.percentages.items() if k != "other"}
        notes.append(f"shares {pct}")
        assert abs(g.percentages["normal"] - 45.4) <= 0.1
        assert abs(g.percentages["signature"] - 41.1) <= 0.1
        assert abs(g.percentages["dangerous"] - 13.4) <= 0.1
        certs = {f"c{i}": set() for i in range(447)}
        for p in range(1991):
            certs[f"c{p % 447}"].add(f"p{p}")
        ratio = certificate_reuse(certs).average_packages_per_certificate
        notes.append(f"reuse {ratio:.4f}")
        assert abs(ratio - 4.45) <= 0.01
        assert flag_malicious({"positives": 3}) is False
        assert flag_malicious({"positives": 4}) is True


def test_criterion_10_entropy_identities():
    with criterion(10, "natural and hartley entropies follow from shannon") as notes:
        rng = random.Random(110)
        alphabets = ["ab", "abcdef", "0123456789abcdef", "".join(map(chr, range(32, 127))),
                     "äöüßéèñ漢字かな🙂"]
        worst = 0.0
        for _ in range(10_000):
            alpha = rng.choice(alphabets)
            s = "".join(rng.choice(alpha) for _ in range(rng.randint(1, 300)))
            h = shannon_entropy(s)
            for got, factor in ((natural_entropy(s), math.log(2)), (hartley_entropy(s), math.log10(2))):
                want = h * factor
                err = 0.0 if want == got else abs(got - want) / abs(want)
                worst = max(worst, err)
        notes.append(f"worst relative error {worst:.2e}")
        assert worst <= 1e-12
        assert shannon_entropy("aaaa") == 0.0 and shannon_entropy("abcd") == 2.0
        assert enrich("abcd").shannon_entropy == 2.0


@pytest.mark.slow
def test_criterion_11_scale():
    with criterion(11, "index build + cluster at 25k/50k/100k") as notes:
        timings, table_times = {}, {}
        for n in (25_000, 50_000, 100_000):
            ds = make_synthetic_digests(n, random_state=111)
            t0 = time.perf_counter()
            model = TlshClusterer(band_width_threshold=13, distance_threshold=100).fit(ds)
            timings[n] = time.perf_counter() - t0
            table_times[n] = model.table_seconds_
            notes.append(f"n={n}: {timings[n]:.1f}s total, table {model.table_seconds_:.2f}s, "
                         f"{model.n_comparisons_} comparisons")
        slope = (25_000 * timings[25_000] + 50_000 * timings[50_000]) / (25_000 ** 2 + 50_000 ** 2)
        predicted = slope * 100_000
        notes.append(f"100k predicted {predicted:.1f}s, limit {1.5 * predicted:.1f}s")
        assert timings[100_000] < 600
        assert timings[100_000] <= 1.5 * predicted
