"""Bulk candidate generation and scoring over a whole lookup table."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from fwtriage.similarity.lookup import LookupTable
from fwtriage.tlsh import DigestArrays, distances_to


class PairScores(NamedTuple):
    """Edges found by a filtered all-pairs pass, as parallel position arrays."""

    left: np.ndarray     # positions i
    right: np.ndarray    # positions j > i
    score: np.ndarray
    n_comparisons: int


def _split(n: int, parts: int) -> list[tuple[int, int]]:
    # later queries have shorter suffixes, so the ranges shrink toward the front
    parts = max(1, min(parts, n))
    bounds = [int(round(n * (1 - (1 - k / parts) ** 0.5))) for k in range(parts + 1)]
    bounds[-1] = n
    return [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


def _score_range(table, arrays, band_width_threshold, distance_threshold, start, stop, on_pairs=None):
    lefts, rights, scores = [], [], []
    comparisons = 0
    for i, js in table.iter_candidate_pairs(band_width_threshold, start, stop):
        if len(js) == 0:
            continue
        comparisons += len(js)
        d = distances_to(arrays, i, js)
        if on_pairs is not None:
            on_pairs(i, js, d)
        if distance_threshold is not None:
            keep = d <= distance_threshold
            js, d = js[keep], d[keep]
        if len(js):
            lefts.append(np.full(len(js), i, dtype=np.int64))
            rights.append(js.astype(np.int64))
            scores.append(d)
    return lefts, rights, scores, comparisons


def score_candidate_pairs(
    table: LookupTable,
    band_width_threshold: int,
    distance_threshold: int | None = None,
    n_jobs: int = 1,
    on_pairs=None,
) -> PairScores:
    """Compare every filtered candidate pair once and keep the close ones.

    Work is split into contiguous query ranges; results are merged in
    range order, so the output does not depend on ``n_jobs``. ``on_pairs``
    (single-threaded use only) sees every compared ``(i, js, scores)``
    before the distance post-filter.
    """
    arrays = DigestArrays.from_digests(table.digests)
    n = len(table)
    workers = 1 if n_jobs is None else (n_jobs if n_jobs > 0 else os.cpu_count() or 1)
    if workers == 1 or on_pairs is not None:
        ranges = [(0, n)]
    else:
        ranges = _split(n, workers * 4)
    if len(ranges) == 1:
        results = [_score_range(table, arrays, band_width_threshold, distance_threshold, 0, n, on_pairs)]
    else:
        table._consolidate()
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_score_range, table, arrays, band_width_threshold, distance_threshold, a, b)
                for a, b in ranges
            ]
            results = [f.result() for f in futures]
    lefts, rights, scores, comparisons = [], [], [], 0
    for l, r, s, c in results:
        lefts += l
        rights += r
        scores += s
        comparisons += c
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
    return PairScores(cat(lefts), cat(rights), cat(scores), comparisons)
