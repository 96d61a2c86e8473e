import io
import random

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fwtriage.datasets import make_correlated_digests, make_synthetic_digests
from fwtriage.exceptions import CorpusTooLarge, DuplicateIdentifier, IoFailure, UnknownIdentifier
from fwtriage.similarity import (
    ClusterAnalysis,
    DistanceRecord,
    FilterEvaluation,
    LookupTable,
    TlshClusterer,
    build_lookup,
    candidates,
    cluster,
    compare_candidates,
    compute_ground_truth,
    digest_keys,
    evaluate_filter,
    evaluate_thresholds,
    export_gexf,
    insert,
    parse_digest_batch,
    read_digest_batch,
    score_candidate_pairs,
    search_similar,
    write_digest_batch,
    write_evaluation_csv,
)
from fwtriage.tlsh import distance, parse_digest

T1 = "474110F8EBB3A973188A4383047F4785E73B613CC1E1861668D664C4F213A688379B7C"


def _random_digests(n, seed=0):
    return make_synthetic_digests(n, random_state=seed)


def _collisions(a: str, b: str) -> int:
    return sum(x == y for x, y in zip(a, b))


# -- lookup table ------------------------------------------------------------------

def test_documented_first_keys():
    assert digest_keys(T1)[:7] == ["40", "71", "42", "13", "14", "05", "F6"]


def test_empty_table():
    t = build_lookup([])
    assert t.n_keys == 0 and len(t) == 0
    assert candidates(t, T1, band_width_threshold=0) == set()


def test_identical_digests_share_every_key():
    t = build_lookup([("a", T1), ("b", T1)])
    assert all(ids == {"a", "b"} for ids in t.entries.values())
    assert t.n_keys == 70


def test_duplicate_identifier_rejected():
    t = build_lookup([("a", T1)])
    with pytest.raises(DuplicateIdentifier):
        insert(t, "a", T1)
    with pytest.raises(DuplicateIdentifier):
        build_lookup([("a", T1), ("a", T1)])


def test_key_space_bound_and_memberships():
    ds = _random_digests(3000, seed=5)
    t = build_lookup([(str(i), d) for i, d in enumerate(ds)])
    entries = t.entries
    assert len(entries) <= 16 * 70
    counts = {}
    for ids in entries.values():
        for i in ids:
            counts[i] = counts.get(i, 0) + 1
    assert set(counts.values()) == {70}


def test_insert_equals_rebuild():
    ds = _random_digests(500, seed=1)
    pairs = [(f"d{i}", d) for i, d in enumerate(ds)]
    inc = LookupTable()
    for ident, d in pairs:
        insert(inc, ident, d)
    assert inc == build_lookup(pairs)
    assert build_lookup(pairs[:1]) == insert(LookupTable(), *pairs[0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.text("0123456789ABCDEF", min_size=70, max_size=70), min_size=1, max_size=40, unique=True))
def test_insert_equivalence_property(texts):
    pairs = [(str(i), t) for i, t in enumerate(texts)]
    base = build_lookup(pairs[:-1])
    assert insert(base, *pairs[-1]) == build_lookup(pairs)


def test_exact_match_threshold_70():
    t = build_lookup([("a", T1), ("b", _random_digests(1, seed=9)[0])])
    assert "a" in candidates(t, T1, band_width_threshold=70)


def test_disjoint_digests_threshold_1():
    a = "0" * 70
    b = "1" * 70
    t = build_lookup([("b", b)])
    assert candidates(t, a, band_width_threshold=1) == set()


def test_candidates_match_brute_force():
    ds = _random_digests(600, seed=3)
    ids = [str(i) for i in range(len(ds))]
    t = build_lookup(list(zip(ids, ds)))
    rng = random.Random(0)
    for q in rng.sample(ds, 40) + _random_digests(10, seed=99):
        for thr in (0, 1, 5, 13, 30, 70):
            expected = {i for i, d in zip(ids, ds) if _collisions(q, d) >= thr}
            assert candidates(t, q, band_width_threshold=thr) == expected


def test_candidates_monotone_and_restrict():
    ds = _random_digests(400, seed=4)
    t = build_lookup([(str(i), d) for i, d in enumerate(ds)])
    for q in ds[:20]:
        prev = None
        for thr in range(0, 71, 5):
            cur = candidates(t, q, band_width_threshold=thr)
            if prev is not None:
                assert cur <= prev
            prev = cur
        scope = {"1", "2", "3", "nope"}
        assert candidates(t, q, scope, 1) == candidates(t, q, None, 1) & scope


def test_iter_candidate_pairs_matches_queries():
    ds = _random_digests(300, seed=6)
    t = build_lookup([(str(i), d) for i, d in enumerate(ds)])
    for thr in (0, 10, 20):
        got = {(i, int(j)) for i, js in t.iter_candidate_pairs(thr) for j in js}
        expected = {(i, j) for i in range(len(ds)) for j in range(i + 1, len(ds))
                    if _collisions(ds[i], ds[j]) >= thr}
        assert got == expected


# -- comparison, clustering, search --------------------------------------------------

def test_compare_candidates():
    ds = _random_digests(100, seed=8)
    cand = {f"c{i}": d for i, d in enumerate(ds)}
    assert len(compare_candidates(ds[0], cand)) == 100
    only_exact = compare_candidates(ds[0], cand, distance_threshold=0)
    assert [r.score for r in only_exact] == [0]
    assert compare_candidates(ds[0], {"self": ds[0]}, distance_threshold=0)[0].score == 0
    for rec in compare_candidates(ds[0], cand, query_id="q"):
        assert rec.id_a < rec.id_b


def test_cluster_small_cases():
    a = cluster([DistanceRecord("a", "b", 3), DistanceRecord("b", "c", 4)], ["a", "b", "c"])
    assert len(set(a.components.values())) == 1
    b = cluster([], list("abcde"))
    assert b.n_components == 5


def _oracle_components(n_nodes, edges):
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return [find(i) for i in range(n_nodes)]


def _same_partition(labels_a, labels_b):
    m1, m2 = {}, {}
    for x, y in zip(labels_a, labels_b):
        if m1.setdefault(x, y) != y or m2.setdefault(y, x) != x:
            return False
    return True


@pytest.mark.parametrize("seed", range(20))
def test_cluster_matches_union_find_oracle(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 1000)
    edges = [(rng.randrange(n), rng.randrange(n), rng.randint(0, 300)) for _ in range(rng.randint(0, 1000))]
    dt = rng.choice([None, 50, 150])
    ids = [f"n{i:04d}" for i in range(n)]
    recs = [DistanceRecord.ordered(ids[a], ids[b], s) for a, b, s in edges]
    got = cluster(recs, ids, dt)
    kept = [(a, b) for a, b, s in edges if a != b and (dt is None or s <= dt)]
    oracle = _oracle_components(n, kept)
    assert _same_partition([got.components[i] for i in ids], oracle)
    for e in got.edges:
        assert e.id_a < e.id_b and (dt is None or e.score <= dt)


def _chain_analysis():
    recs = [DistanceRecord("a", "b", 12), DistanceRecord("b", "c", 30)]
    digests = {k: v for k, v in zip("abcd", _random_digests(4, seed=11))}
    return cluster(recs, list("abcd"), digests=digests)


def test_search_similar():
    an = _chain_analysis()
    assert search_similar(an, "d") == []
    hits = search_similar(an, "a")
    assert hits[0] == ("b", 12)
    assert {h[0] for h in hits} == {"b", "c"}
    # c has no direct edge to a: scored on demand
    assert dict(hits)["c"] == distance(parse_digest(an.digests["a"]), parse_digest(an.digests["c"]))
    with pytest.raises(UnknownIdentifier):
        search_similar(an, "zzz")


def test_search_large_component_sorted():
    ids = [f"n{i}" for i in range(50)]
    rng = random.Random(1)
    recs = [DistanceRecord.ordered(ids[i], ids[i + 1], rng.randint(0, 99)) for i in range(49)]
    recs += [DistanceRecord.ordered("n0", ids[j], rng.randint(0, 99)) for j in range(5, 50, 3)]
    digests = dict(zip(ids, _random_digests(50, seed=2)))
    an = cluster(recs, ids, digests=digests)
    hits = search_similar(an, "n0")
    assert {h[0] for h in hits} == set(ids) - {"n0"}
    scores = [s for _, s in hits]
    assert scores == sorted(scores)
    direct = {r.id_b if r.id_a == "n0" else r.id_a: r.score for r in an.edges if "n0" in (r.id_a, r.id_b)}
    for ident, s in hits:
        if ident in direct:
            assert s == direct[ident]


def test_analysis_dict_roundtrip():
    an = _chain_analysis()
    back = ClusterAnalysis.from_dict(an.to_dict())
    assert back == an


# -- GEXF ---------------------------------------------------------------------------

def test_gexf_roundtrip_networkx(tmp_path):
    an = _chain_analysis()
    path = tmp_path / "g.gexf"
    export_gexf(an, path)
    g = nx.read_gexf(path)
    assert set(g.nodes) == set("abcd")
    assert {(min(u, v), max(u, v), d["weight"]) for u, v, d in g.edges(data=True)} == {
        ("a", "b", 12.0), ("b", "c", 30.0)}
    assert not g.is_directed()
    assert g.nodes["a"]["component"] == an.components["a"]


def test_gexf_empty_and_streams(tmp_path):
    empty = cluster([], [])
    buf = io.BytesIO()
    export_gexf(empty, buf)
    g = nx.read_gexf(io.BytesIO(buf.getvalue()))
    assert g.number_of_nodes() == 0 and g.number_of_edges() == 0
    text = io.StringIO()
    export_gexf(_chain_analysis(), text)
    assert "http://www.gexf.net/1.2draft" in text.getvalue()


def test_gexf_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        export_gexf(_chain_analysis(), tmp_path / "missing" / "g.gexf")


# -- estimator and bulk pairing --------------------------------------------------------

def test_clusterer_matches_brute_force_graph():
    ids, ds, _ = make_correlated_digests(300, random_state=2)
    model = TlshClusterer(band_width_threshold=0, distance_threshold=80).fit(list(zip(ids, ds)))
    edges = [(ids[i], ids[j]) for i in range(len(ds)) for j in range(i + 1, len(ds))
             if distance(ds[i], ds[j]) <= 80]
    g = nx.Graph()
    g.add_nodes_from(ids)
    g.add_edges_from(edges)
    oracle = {}
    for k, comp in enumerate(nx.connected_components(g)):
        for x in comp:
            oracle[x] = k
    assert _same_partition(model.labels_, [oracle[i] for i in ids])
    assert model.n_comparisons_ == len(ds) * (len(ds) - 1) // 2
    assert model.n_clusters_ == nx.number_connected_components(g)


def test_clusterer_parallel_is_deterministic():
    ds = _random_digests(2000, seed=12)
    one = TlshClusterer(13, 150, n_jobs=1).fit(ds)
    many = TlshClusterer(13, 150, n_jobs=4).fit(ds)
    assert one.analysis_.edges == many.analysis_.edges
    assert (one.labels_ == many.labels_).all()


def test_score_candidate_pairs_counts():
    ds = _random_digests(500, seed=13)
    t = build_lookup([(str(i), d) for i, d in enumerate(ds)])
    pairs = score_candidate_pairs(t, 0)
    assert pairs.n_comparisons == 500 * 499 // 2 == len(pairs.score)
    assert (pairs.left < pairs.right).all()


def test_clusterer_params_and_predict():
    ids, ds, fam = make_correlated_digests(200, random_state=4)
    model = TlshClusterer(band_width_threshold=10, distance_threshold=60)
    assert model.get_params()["band_width_threshold"] == 10
    model.fit(dict(zip(ids, ds)))
    labels = model.predict(ds[:20])
    for k in range(20):
        # a digest's nearest neighbour is itself at distance 0
        assert labels[k] == model.labels_[k]
    assert model.predict(["0" * 70])[0] in (-1, *model.labels_)
    assert model.search(ids[0]) == search_similar(model.analysis_, ids[0])


def test_clusterer_rejects_bad_params():
    with pytest.raises(ValueError):
        TlshClusterer(band_width_threshold=-1).fit([T1])
    with pytest.raises(DuplicateIdentifier):
        TlshClusterer().fit([("a", T1), ("a", T1)])


# -- evaluation -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def eval_corpus():
    _, ds, _ = make_correlated_digests(600, random_state=21)
    return ds


def test_filter_off_equals_ground_truth(eval_corpus):
    row = evaluate_filter(eval_corpus, 0, distance_threshold=100)
    n = len(eval_corpus)
    assert row.missed_count == 0
    assert row.decrease_rate_percent == 0.0
    assert row.number_of_comparisons == n * (n - 1) // 2
    assert row.cluster_count_difference == 0


def test_conservation_and_monotonicity(eval_corpus):
    truth = compute_ground_truth(eval_corpus, 100)
    rows = evaluate_thresholds(eval_corpus, [0, 1, 5, 10, 13, 20, 30, 50, 70], distance_threshold=100)
    for r in rows:
        assert r.hit_count + r.missed_count == truth.pair_count
        n = len(eval_corpus)
        assert r.decrease_rate_percent == pytest.approx(100 * (1 - r.number_of_comparisons / (n * (n - 1) / 2)))
    comps = [r.number_of_comparisons for r in rows]
    missed = [r.missed_count for r in rows]
    assert comps == sorted(comps, reverse=True)
    assert missed == sorted(missed)


def test_maximal_filter_hits_only_identical():
    ds = _random_digests(200, seed=30)
    row = evaluate_filter(ds, 70, distance_threshold=400)
    identical = sum(ds[i] == ds[j] for i in range(len(ds)) for j in range(i + 1, len(ds)))
    assert row.hit_count == identical


def test_ground_truth_cap():
    with pytest.raises(CorpusTooLarge):
        compute_ground_truth(_random_digests(50), max_corpus=10)


def test_evaluation_csv_columns(eval_corpus):
    rows = evaluate_thresholds(eval_corpus[:100], [0, 13])
    text = write_evaluation_csv(rows)
    header = text.splitlines()[0].split(",")
    assert header == FilterEvaluation.columns()
    assert header[:3] == ["band_width_threshold", "table_creation_seconds", "cluster_creation_seconds"]
    assert len(text.splitlines()) == 3


def test_unthresholded_evaluation_counts_every_pair(eval_corpus):
    row = evaluate_filter(eval_corpus[:100], 13)
    assert row.hit_count == row.number_of_comparisons
    assert row.hit_count + row.missed_count == 100 * 99 // 2


# -- batch format ------------------------------------------------------------------------

def test_digest_batch_roundtrip(tmp_path):
    pairs = [(f"id{i}", d) for i, d in enumerate(_random_digests(10))]
    buf = io.StringIO()
    write_digest_batch(pairs, buf)
    text = "# comment\n\n" + buf.getvalue()
    back = parse_digest_batch(text.splitlines())
    assert [(i, str(d)) for i, d in back] == pairs
    p = tmp_path / "b.tsv"
    p.write_text(buf.getvalue())
    assert [(i, str(d)) for i, d in read_digest_batch(p)] == pairs
