"""Distance post-filter, connected-component clustering, search and GEXF export."""
from __future__ import annotations

import io
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from fwtriage.exceptions import IoFailure, UnknownIdentifier
from fwtriage.tlsh import coerce_digest, distance
from fwtriage.utils.validation import check_non_negative_int

__all__ = [
    "DistanceRecord",
    "UnionFind",
    "ClusterAnalysis",
    "compare_candidates",
    "cluster",
    "search_similar",
    "export_gexf",
]

GEXF_NS = "http://www.gexf.net/1.2draft"  # what Gephi writes for version 1.2


class DistanceRecord(NamedTuple):
    id_a: str
    id_b: str
    score: int

    @classmethod
    def ordered(cls, a: str, b: str, score: int) -> "DistanceRecord":
        a, b = str(a), str(b)
        return cls(a, b, int(score)) if a <= b else cls(b, a, int(score))


class UnionFind:
    """Disjoint sets over hashable items, union by size with path halving."""

    def __init__(self, items: Iterable = ()):
        self.parent: dict = {}
        self.size: dict = {}
        for x in items:
            self.add(x)

    def add(self, x):
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1

    def find(self, x):
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a, b) -> bool:
        self.add(a)
        self.add(b)
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def labels(self, order: Iterable) -> dict:
        """Component labels 0, 1, ... numbered by first appearance in ``order``."""
        root_label: dict = {}
        out = {}
        for x in order:
            r = self.find(x)
            if r not in root_label:
                root_label[r] = len(root_label)
            out[x] = root_label[r]
        return out


@dataclass
class ClusterAnalysis:
    """Similarity graph of digests and its connected components.

    ``edges`` holds the retained comparisons (score at most
    ``distance_threshold`` when one is set); ``components`` maps every
    identifier to its component label. ``digests`` keeps the digest text
    of each node so that search can score members without a direct edge.
    """

    distance_threshold: int | None
    band_width_threshold: int | None
    edges: list[DistanceRecord]
    components: dict[str, int]
    digests: dict[str, str] = field(default_factory=dict)
    analysis_id: str | None = None

    @property
    def ids(self) -> list[str]:
        return list(self.components)

    @property
    def n_components(self) -> int:
        return len(set(self.components.values()))

    def members(self, label: int) -> list[str]:
        return [i for i, lab in self.components.items() if lab == label]

    def groups(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for i, lab in self.components.items():
            out.setdefault(lab, []).append(i)
        return out

    def adjacency(self) -> dict[str, dict[str, int]]:
        adj: dict[str, dict[str, int]] = {i: {} for i in self.components}
        for a, b, s in self.edges:
            prev = adj[a].get(b)
            if prev is None or s < prev:
                adj[a][b] = s
                adj[b][a] = s
        return adj

    def to_dict(self) -> dict:
        return {
            "analysis_id": self.analysis_id,
            "distance_threshold": self.distance_threshold,
            "band_width_threshold": self.band_width_threshold,
            "edges": [list(e) for e in self.edges],
            "components": self.components,
            "digests": self.digests,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClusterAnalysis":
        return cls(
            distance_threshold=data.get("distance_threshold"),
            band_width_threshold=data.get("band_width_threshold"),
            edges=[DistanceRecord(str(a), str(b), int(s)) for a, b, s in data.get("edges", [])],
            components={str(k): int(v) for k, v in data.get("components", {}).items()},
            digests=dict(data.get("digests", {})),
            analysis_id=data.get("analysis_id"),
        )


def compare_candidates(
    query,
    candidate_digests,
    distance_threshold: int | None = None,
    query_id: str = "query",
) -> list[DistanceRecord]:
    """Score ``query`` against each candidate and drop scores above the threshold.

    ``candidate_digests`` is a mapping or a sequence of ``(id, digest)``
    pairs. One record is produced per surviving candidate.
    """
    distance_threshold = check_non_negative_int(distance_threshold, "distance_threshold", allow_none=True)
    q = coerce_digest(query)
    pairs = candidate_digests.items() if hasattr(candidate_digests, "items") else candidate_digests
    out = []
    for cid, cd in pairs:
        score = distance(q, coerce_digest(cd))
        if distance_threshold is None or score <= distance_threshold:
            out.append(DistanceRecord.ordered(query_id, cid, score))
    return out


def cluster(
    records: Iterable[DistanceRecord],
    all_ids: Iterable[str],
    distance_threshold: int | None = None,
    band_width_threshold: int | None = None,
    digests: Mapping[str, object] | None = None,
) -> ClusterAnalysis:
    """Connected components of the graph whose edges are the retained records.

    Records scoring above ``distance_threshold`` and self pairs are
    dropped; identifiers without an edge form singleton components.
    """
    distance_threshold = check_non_negative_int(distance_threshold, "distance_threshold", allow_none=True)
    order = [str(i) for i in all_ids]
    uf = UnionFind(order)
    best: dict[tuple[str, str], int] = {}
    for rec in records:
        a, b, s = str(rec[0]), str(rec[1]), int(rec[2])
        if a == b:
            continue
        if distance_threshold is not None and s > distance_threshold:
            continue
        key = (a, b) if a < b else (b, a)
        if key not in best or s < best[key]:
            best[key] = s
    edges = sorted(DistanceRecord(a, b, s) for (a, b), s in best.items())
    for a, b, _ in edges:
        if a not in uf.parent:
            order.append(a)
        if b not in uf.parent:
            order.append(b)
        uf.union(a, b)
    components = uf.labels(order)
    texts = {str(k): str(coerce_digest(v)) for k, v in (digests or {}).items()}
    return ClusterAnalysis(
        distance_threshold=distance_threshold,
        band_width_threshold=band_width_threshold,
        edges=edges,
        components=components,
        digests=texts,
    )


def search_similar(analysis: ClusterAnalysis, identifier: str) -> list[tuple[str, int | None]]:
    """Other members of ``identifier``'s component, nearest first.

    Members joined to the query by a direct edge use that edge's score;
    the rest are scored by computing the distance on demand from the
    stored digests (``None`` when a digest is unavailable, sorted last).
    """
    identifier = str(identifier)
    if identifier not in analysis.components:
        raise UnknownIdentifier(identifier)
    label = analysis.components[identifier]
    direct: dict[str, int] = {}
    for a, b, s in analysis.edges:
        if a == identifier:
            other = b
        elif b == identifier:
            other = a
        else:
            continue
        if other not in direct or s < direct[other]:
            direct[other] = s
    qtext = analysis.digests.get(identifier)
    q = coerce_digest(qtext) if qtext else None
    out = []
    for member, lab in analysis.components.items():
        if lab != label or member == identifier:
            continue
        if member in direct:
            out.append((member, direct[member]))
        elif q is not None and member in analysis.digests:
            out.append((member, distance(q, coerce_digest(analysis.digests[member]))))
        else:
            out.append((member, None))
    out.sort(key=lambda t: (t[1] is None, t[1] if t[1] is not None else 0, t[0]))
    return out


def _gexf_tree(analysis: ClusterAnalysis) -> ET.ElementTree:
    ET.register_namespace("", GEXF_NS)
    root = ET.Element(f"{{{GEXF_NS}}}gexf", {"version": "1.2"})
    meta = ET.SubElement(root, f"{{{GEXF_NS}}}meta")
    ET.SubElement(meta, f"{{{GEXF_NS}}}creator").text = "fwtriage"
    ET.SubElement(meta, f"{{{GEXF_NS}}}description").text = "TLSH similarity clusters"
    graph = ET.SubElement(root, f"{{{GEXF_NS}}}graph", {"mode": "static", "defaultedgetype": "undirected"})
    attrs = ET.SubElement(graph, f"{{{GEXF_NS}}}attributes", {"class": "node", "mode": "static"})
    ET.SubElement(attrs, f"{{{GEXF_NS}}}attribute", {"id": "0", "title": "component", "type": "integer"})
    ET.SubElement(attrs, f"{{{GEXF_NS}}}attribute", {"id": "1", "title": "tlsh", "type": "string"})
    nodes = ET.SubElement(graph, f"{{{GEXF_NS}}}nodes")
    for ident, label in analysis.components.items():
        node = ET.SubElement(nodes, f"{{{GEXF_NS}}}node", {"id": ident, "label": ident})
        values = ET.SubElement(node, f"{{{GEXF_NS}}}attvalues")
        ET.SubElement(values, f"{{{GEXF_NS}}}attvalue", {"for": "0", "value": str(label)})
        if ident in analysis.digests:
            ET.SubElement(values, f"{{{GEXF_NS}}}attvalue", {"for": "1", "value": analysis.digests[ident]})
    edges = ET.SubElement(graph, f"{{{GEXF_NS}}}edges")
    for k, (a, b, s) in enumerate(analysis.edges):
        ET.SubElement(edges, f"{{{GEXF_NS}}}edge", {
            "id": str(k), "source": a, "target": b, "weight": str(s),
        })
    return ET.ElementTree(root)


def export_gexf(analysis: ClusterAnalysis, destination) -> None:
    """Write the analysis as GEXF 1.2 XML to a path or binary file object."""
    tree = _gexf_tree(analysis)
    ET.indent(tree, space="  ")
    try:
        if isinstance(destination, (str, os.PathLike)):
            with open(destination, "wb") as fh:
                tree.write(fh, encoding="utf-8", xml_declaration=True)
        elif isinstance(destination, io.TextIOBase):
            destination.write(ET.tostring(tree.getroot(), encoding="unicode"))
        else:
            tree.write(destination, encoding="utf-8", xml_declaration=True)
    except OSError as exc:
        raise IoFailure(f"cannot write GEXF to {destination}: {exc}") from exc
