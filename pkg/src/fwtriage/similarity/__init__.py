"""Lookup-table candidate filtering, clustering and search over TLSH digests."""
from fwtriage.similarity.batch import parse_digest_batch, read_digest_batch, write_digest_batch
from fwtriage.similarity.estimator import TlshClusterer
from fwtriage.similarity.evaluation import (
    FilterEvaluation,
    GroundTruth,
    compute_ground_truth,
    evaluate_filter,
    evaluate_thresholds,
    write_evaluation_csv,
)
from fwtriage.similarity.graph import (
    ClusterAnalysis,
    DistanceRecord,
    UnionFind,
    cluster,
    compare_candidates,
    export_gexf,
    search_similar,
)
from fwtriage.similarity.lookup import LookupTable, build_lookup, candidates, digest_keys, insert
from fwtriage.similarity.pipeline import PairScores, score_candidate_pairs

__all__ = [
    "ClusterAnalysis",
    "DistanceRecord",
    "FilterEvaluation",
    "GroundTruth",
    "LookupTable",
    "PairScores",
    "TlshClusterer",
    "UnionFind",
    "build_lookup",
    "candidates",
    "cluster",
    "compare_candidates",
    "compute_ground_truth",
    "digest_keys",
    "evaluate_filter",
    "evaluate_thresholds",
    "export_gexf",
    "insert",
    "parse_digest_batch",
    "read_digest_batch",
    "score_candidate_pairs",
    "search_similar",
    "write_digest_batch",
    "write_evaluation_csv",
]
