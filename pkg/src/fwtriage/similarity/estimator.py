from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from fwtriage.similarity.graph import ClusterAnalysis, DistanceRecord, cluster, search_similar
from fwtriage.similarity.lookup import build_lookup
from fwtriage.similarity.pipeline import score_candidate_pairs
from fwtriage.tlsh import coerce_digest, distance
from fwtriage.utils.validation import (
    check_digest_input,
    check_is_fitted,
    check_non_negative_int,
)

DEFAULT_BAND_WIDTH_THRESHOLD = 13


class TlshClusterer(ClusterMixin, BaseEstimator):
    """Cluster TLSH digests through the lookup-table candidate filter.

    Only pairs sharing at least ``band_width_threshold`` (digit, column)
    keys are scored; scored pairs at most ``distance_threshold`` apart
    become graph edges and clusters are the connected components.

    Parameters
    ----------
    band_width_threshold : int, default=13
        Minimum number of shared keys for a pair to be compared.
        0 compares every pair.
    distance_threshold : int or None, default=None
        Post-filter on TLSH distance; None keeps every compared pair.
    band_width : int, default=1
        Hex digits per lookup key.
    n_jobs : int, default=1
        Worker threads for the pairing pass; -1 uses every core.

    Attributes
    ----------
    ids_ : list of str
    labels_ : ndarray of shape (n_digests,)
        Component label per digest, aligned with ``ids_``.
    lookup_table_ : LookupTable
    analysis_ : ClusterAnalysis
    n_clusters_ : int
        Number of components, singletons included.
    n_comparisons_ : int
        Distances computed during fit.
    table_seconds_, cluster_seconds_ : float
        Wall time of the table build and of pairing plus clustering.
    """

    def __init__(self, band_width_threshold=DEFAULT_BAND_WIDTH_THRESHOLD, distance_threshold=None,
                 band_width=1, n_jobs=1):
        self.band_width_threshold = band_width_threshold
        self.distance_threshold = distance_threshold
        self.band_width = band_width
        self.n_jobs = n_jobs

    def fit(self, X, y=None, ids=None):
        """Index and cluster the digests in ``X``.

        ``X`` holds digests (objects or hex text), a mapping of identifier
        to digest, or ``(identifier, digest)`` pairs.
        """
        bwt = check_non_negative_int(self.band_width_threshold, "band_width_threshold")
        dt = check_non_negative_int(self.distance_threshold, "distance_threshold", allow_none=True)
        id_list, digests = check_digest_input(X, ids)

        t0 = time.perf_counter()
        table = build_lookup(list(zip(id_list, digests)), band_width=self.band_width)
        table._consolidate()
        t1 = time.perf_counter()
        pairs = score_candidate_pairs(table, bwt, dt, n_jobs=self.n_jobs)
        records = [
            DistanceRecord.ordered(id_list[i], id_list[j], s)
            for i, j, s in zip(pairs.left.tolist(), pairs.right.tolist(), pairs.score.tolist())
        ]
        analysis = cluster(records, id_list, dt, bwt, digests=dict(zip(id_list, digests)))
        t2 = time.perf_counter()

        self.ids_ = id_list
        self.lookup_table_ = table
        self.analysis_ = analysis
        self.labels_ = np.array([analysis.components[i] for i in id_list], dtype=np.int64)
        self.n_clusters_ = analysis.n_components
        self.n_comparisons_ = pairs.n_comparisons
        self.table_seconds_ = t1 - t0
        self.cluster_seconds_ = t2 - t1
        return self

    def search(self, identifier):
        """Members of ``identifier``'s cluster as ``(id, score)``, nearest first."""
        check_is_fitted(self, ["analysis_"])
        return search_similar(self.analysis_, identifier)

    def predict(self, X):
        """Label of the nearest fitted candidate for each new digest.

        A digest gets -1 when the filter yields no candidate or, with a
        distance threshold set, when every candidate is too far away.
        """
        check_is_fitted(self, ["lookup_table_"])
        table = self.lookup_table_
        out = np.full(len(X), -1, dtype=np.int64)
        for k, value in enumerate(X):
            d = coerce_digest(value)
            best = None
            for p in table.candidate_positions(d, self.band_width_threshold):
                s = distance(d, table._digests[p])
                if self.distance_threshold is not None and s > self.distance_threshold:
                    continue
                if best is None or s < best[0]:
                    best = (s, p)
            if best is not None:
                out[k] = self.labels_[best[1]]
        return out
