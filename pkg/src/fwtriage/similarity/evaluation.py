"""Measure the candidate filter against exhaustive all-pairs ground truth."""
from __future__ import annotations

import csv
import dataclasses
import io
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from fwtriage.exceptions import CorpusTooLarge
from fwtriage.similarity.lookup import build_lookup
from fwtriage.tlsh import DigestArrays, coerce_digest, distances_to
from fwtriage.utils.validation import check_non_negative_int

DEFAULT_MAX_CORPUS = 20_000


@dataclass
class FilterEvaluation:
    """One row of filter metrics; field order is the CSV column order."""

    band_width_threshold: int
    table_creation_seconds: float
    cluster_creation_seconds: float
    total_seconds: float
    cluster_size_average: float
    number_of_clusters: int
    cluster_count_difference: int
    number_of_comparisons: int
    decrease_rate_percent: float
    comparison_difference: int
    missed_count: int
    missed_rate_percent: float
    hit_count: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def as_row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


@dataclass
class GroundTruth:
    """All-pairs reference for one corpus and distance threshold.

    ``partners[i]`` lists the positions ``j > i`` within the threshold;
    it is None when no threshold is set (every pair counts).
    """

    n: int
    distance_threshold: int | None
    partners: list[np.ndarray] | None
    pair_count: int
    number_of_clusters: int
    seconds: float

    @property
    def comparisons(self) -> int:
        return self.n * (self.n - 1) // 2


def _cluster_stats(n: int, left: np.ndarray, right: np.ndarray) -> tuple[int, float]:
    """Count components with at least two members and their mean size."""
    if n == 0 or len(left) == 0:
        return 0, 0.0
    graph = coo_matrix((np.ones(len(left), dtype=np.int8), (left, right)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    multi = sizes[sizes >= 2]
    if len(multi) == 0:
        return 0, 0.0
    return int(len(multi)), float(multi.sum() / len(multi))


def _as_digests(digests) -> list:
    items = list(digests.values()) if hasattr(digests, "values") else list(digests)
    out = []
    for item in items:
        if isinstance(item, tuple) and len(item) == 2:
            item = item[1]
        out.append(coerce_digest(item))
    return out


def compute_ground_truth(digests, distance_threshold: int | None = None,
                         max_corpus: int | None = DEFAULT_MAX_CORPUS) -> GroundTruth:
    """Score every unordered pair of the corpus (quadratic; capped by ``max_corpus``)."""
    distance_threshold = check_non_negative_int(distance_threshold, "distance_threshold", allow_none=True)
    ds = _as_digests(digests)
    n = len(ds)
    if max_corpus is not None and n > max_corpus:
        raise CorpusTooLarge(f"{n} digests exceed the ground-truth cap of {max_corpus}")
    t0 = time.perf_counter()
    arrays = DigestArrays.from_digests(ds)
    if distance_threshold is None:
        partners = None
        pair_count = n * (n - 1) // 2
        n_clusters = 1 if n >= 2 else 0
    else:
        partners = []
        lefts, rights = [], []
        for i in range(n):
            js = np.arange(i + 1, n)
            d = distances_to(arrays, i, js)
            close = js[d <= distance_threshold]
            partners.append(close)
            if len(close):
                lefts.append(np.full(len(close), i))
                rights.append(close)
        pair_count = int(sum(len(p) for p in partners))
        left = np.concatenate(lefts) if lefts else np.zeros(0, dtype=np.int64)
        right = np.concatenate(rights) if rights else np.zeros(0, dtype=np.int64)
        n_clusters, _ = _cluster_stats(n, left, right)
    return GroundTruth(n, distance_threshold, partners, pair_count, n_clusters, time.perf_counter() - t0)


def evaluate_filter(
    digests,
    band_width_threshold: int,
    distance_threshold: int | None = None,
    max_corpus: int | None = DEFAULT_MAX_CORPUS,
    ground_truth: GroundTruth | None = None,
    band_width: int = 1,
) -> FilterEvaluation:
    """Run the filter at one threshold and compare it with the ground truth.

    A true pair is any pair within ``distance_threshold`` (every pair when
    it is None). Hits are true pairs the filter compared; misses are true
    pairs it never proposed. The decrease rate is relative to
    ``n * (n - 1) / 2`` comparisons.
    """
    band_width_threshold = check_non_negative_int(band_width_threshold, "band_width_threshold")
    distance_threshold = check_non_negative_int(distance_threshold, "distance_threshold", allow_none=True)
    ds = _as_digests(digests)
    n = len(ds)
    if ground_truth is None:
        ground_truth = compute_ground_truth(ds, distance_threshold, max_corpus)
    elif ground_truth.n != n or ground_truth.distance_threshold != distance_threshold:
        raise ValueError("ground truth was computed for a different corpus or threshold")

    t0 = time.perf_counter()
    table = build_lookup([(str(i), d) for i, d in enumerate(ds)], band_width=band_width)
    table._consolidate()
    t1 = time.perf_counter()

    arrays = DigestArrays.from_digests(ds)
    comparisons = 0
    hits = 0
    scratch = np.zeros(n, dtype=bool)
    lefts, rights = [], []
    for i, js in table.iter_candidate_pairs(band_width_threshold):
        if len(js) == 0:
            continue
        comparisons += len(js)
        d = distances_to(arrays, i, js)
        if distance_threshold is None:
            kept = js
        else:
            kept = js[d <= distance_threshold]
            truth = ground_truth.partners[i]
            if len(truth):
                scratch[js] = True
                hits += int(np.count_nonzero(scratch[truth]))
                scratch[js] = False
        if len(kept):
            lefts.append(np.full(len(kept), i))
            rights.append(kept)
    if distance_threshold is None:
        hits = comparisons
    left = np.concatenate(lefts) if lefts else np.zeros(0, dtype=np.int64)
    right = np.concatenate(rights) if rights else np.zeros(0, dtype=np.int64)
    n_clusters, avg_size = _cluster_stats(n, left, right)
    t2 = time.perf_counter()

    total_pairs = ground_truth.comparisons
    missed = ground_truth.pair_count - hits
    return FilterEvaluation(
        band_width_threshold=band_width_threshold,
        table_creation_seconds=t1 - t0,
        cluster_creation_seconds=t2 - t1,
        total_seconds=t2 - t0,
        cluster_size_average=avg_size,
        number_of_clusters=n_clusters,
        cluster_count_difference=n_clusters - ground_truth.number_of_clusters,
        number_of_comparisons=comparisons,
        decrease_rate_percent=100.0 * (1 - comparisons / total_pairs) if total_pairs else 0.0,
        comparison_difference=total_pairs - comparisons,
        missed_count=missed,
        missed_rate_percent=100.0 * missed / ground_truth.pair_count if ground_truth.pair_count else 0.0,
        hit_count=hits,
    )


def evaluate_thresholds(
    digests,
    thresholds: Iterable[int],
    distance_threshold: int | None = None,
    max_corpus: int | None = DEFAULT_MAX_CORPUS,
    band_width: int = 1,
) -> list[FilterEvaluation]:
    """Evaluate several thresholds against one shared ground truth."""
    ds = _as_digests(digests)
    truth = compute_ground_truth(ds, distance_threshold, max_corpus)
    return [
        evaluate_filter(ds, t, distance_threshold, max_corpus, truth, band_width)
        for t in thresholds
    ]


def write_evaluation_csv(rows: Sequence[FilterEvaluation], destination=None) -> str:
    """Write rows as CSV (header first); returns the text when no destination is given."""
    buf = io.StringIO() if destination is None else destination
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FilterEvaluation.columns())
    for row in rows:
        writer.writerow([f"{v:.4f}" if isinstance(v, float) else v for v in row.as_row()])
    return buf.getvalue() if destination is None else ""
