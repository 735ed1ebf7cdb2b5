"""Knowledge-graph model and its metric-measure space.

The graph is undirected for geometry: structural distance is the
normalized shortest-path hop count, fused with the embedding distance
over node texts. Relation labels and confidences stay available for
provenance and prompting but do not weight the geometry.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .embeddings import feature_cost
from .errors import InputError
from .lecture import minmax_normalize, uniform_measure

#: The allowed relation ontology. relatedTo is the low-confidence
#: fallback relation used by refinement. Additional relations may be
#: admitted per run via the ``extra_relations`` config key.
ALLOWED_RELATIONS = frozenset(
    {
        "isA",
        "partOf",
        "prerequisiteOf",
        "dependsOn",
        "uses",
        "exampleOf",
        "contrastsWith",
        "implies",
        "provedBy",
        "produces",
        "consumes",
        "assessedBy",
        "relatedTo",
    }
)

DEFAULT_GAMMA = (0.4, 0.6)  # (struct, sem) fusion weights

_WEIGHT_TOL = 1e-9

_NODE_KEYS = ("id", "label", "definition", "aliases", "provenance", "confidence", "rationale")
_EDGE_KEYS = ("src", "dst", "relation", "confidence", "rationale")


@dataclass
class ConceptNode:
    id: str
    label: str
    definition: str = ""
    aliases: list[str] = field(default_factory=list)
    provenance: dict[str, Any] | None = None
    confidence: float = 0.5
    rationale: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class RelationEdge:
    src: str
    dst: str
    relation: str
    confidence: float = 0.5
    rationale: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def key(self) -> tuple[str, str, str]:
        """Dedup key: unordered endpoint pair plus relation name."""
        a, b = sorted((self.src, self.dst))
        return (a, b, self.relation)


@dataclass
class KnowledgeGraph:
    nodes: list[ConceptNode] = field(default_factory=list)
    edges: list[RelationEdge] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def node_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    def get_node(self, node_id: str) -> ConceptNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def has_edge_between(self, a: str, b: str) -> bool:
        pair = tuple(sorted((a, b)))
        return any(tuple(sorted((e.src, e.dst))) == pair for e in self.edges)

    def copy(self) -> "KnowledgeGraph":
        return KnowledgeGraph(
            nodes=[replace(n, aliases=list(n.aliases),
                           provenance=dict(n.provenance) if n.provenance else None,
                           extra=dict(n.extra)) for n in self.nodes],
            edges=[replace(e, extra=dict(e.extra)) for e in self.edges],
            extra=dict(self.extra),
        )


@dataclass
class KgSpace:
    """The graph's metric-measure space plus its node embeddings."""

    graph: KnowledgeGraph
    distance: np.ndarray
    measure: np.ndarray
    gamma: tuple[float, float]
    node_embeddings: np.ndarray


def validate_graph(
    kg: KnowledgeGraph, allowed_relations: frozenset[str] = ALLOWED_RELATIONS
) -> list[str]:
    """Return a list of violation descriptions; empty means valid."""
    violations: list[str] = []
    seen_ids: set[str] = set()
    for node in kg.nodes:
        if node.id in seen_ids:
            violations.append(f"duplicate id: {node.id}")
        seen_ids.add(node.id)
        if not node.label.strip():
            violations.append(f"empty label: {node.id}")
        if not 0.0 <= node.confidence <= 1.0:
            violations.append(f"invalid confidence: {node.id} ({node.confidence})")
    seen_edges: set[tuple[str, str, str]] = set()
    for edge in kg.edges:
        if edge.src == edge.dst:
            violations.append(f"self-loop: {edge.src} -{edge.relation}-")
        for endpoint in (edge.src, edge.dst):
            if endpoint not in seen_ids:
                violations.append(f"dangling endpoint: {endpoint}")
        if edge.relation not in allowed_relations:
            violations.append(f"unknown relation: {edge.relation}")
        if not 0.0 <= edge.confidence <= 1.0:
            violations.append(
                f"invalid confidence: {edge.src}-{edge.dst} ({edge.confidence})"
            )
        key = edge.key()
        if key in seen_edges:
            violations.append(f"duplicate edge: {key[0]}-{key[2]}-{key[1]}")
        seen_edges.add(key)
    return violations


def rate(kg: KnowledgeGraph) -> float:
    """Description-length proxy for graph complexity: |V| + 0.5 |E|."""
    return len(kg.nodes) + 0.5 * len(kg.edges)


def hop_distance(kg: KnowledgeGraph) -> np.ndarray:
    """All-pairs unweighted shortest-path hop counts (undirected).

    Unreachable pairs get max finite hop count + 1, keeping disconnected
    components maximally distant while staying finite.
    """
    ids = kg.node_ids()
    index = {v: i for i, v in enumerate(ids)}
    m = len(ids)
    adjacency: list[list[int]] = [[] for _ in range(m)]
    for edge in kg.edges:
        i, j = index[edge.src], index[edge.dst]
        if i != j and j not in adjacency[i]:
            adjacency[i].append(j)
            adjacency[j].append(i)
    hops = np.full((m, m), -1.0)
    for source in range(m):
        hops[source, source] = 0.0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in adjacency[u]:
                if hops[source, v] < 0:
                    hops[source, v] = hops[source, u] + 1
                    queue.append(v)
    finite_max = hops.max()
    hops[hops < 0] = finite_max + 1
    return hops


def struct_distance(kg: KnowledgeGraph) -> np.ndarray:
    """Hop-count distance matrix normalized to [0, 1] by its maximum."""
    if not kg.nodes:
        raise InputError("empty graph has no structural distance")
    hops = hop_distance(kg)
    top = hops.max()
    if top > 0:
        hops /= top
    return hops


def node_text(node: ConceptNode) -> str:
    """Embedding text for a node: label, definition, up to three aliases."""
    parts = [node.label.strip(), node.definition.strip()]
    alias_part = "; ".join(a.strip() for a in node.aliases[:3] if a.strip())
    parts.append(alias_part)
    return ". ".join(p for p in parts if p)


def combine_kg_distance(
    d_struct: np.ndarray,
    d_sem: np.ndarray,
    gamma: tuple[float, float] = DEFAULT_GAMMA,
) -> np.ndarray:
    """Convex fusion of structural and semantic node distances.

    Both inputs normalized to [0, 1]; output min-max normalized over
    off-diagonal entries with the diagonal forced to 0.
    """
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != (2,) or (g < 0).any() or abs(g.sum() - 1.0) > _WEIGHT_TOL:
        raise InputError("invalid weights: gamma must be nonnegative and sum to 1")
    return minmax_normalize(g[0] * d_struct + g[1] * d_sem)


def node_measure(kg: KnowledgeGraph, degree_weighted: bool = False) -> np.ndarray:
    """Probability measure over nodes: uniform, or (1 + degree)-proportional."""
    m = len(kg.nodes)
    if not degree_weighted:
        return uniform_measure(m)
    if m < 1:
        raise InputError("measure requires at least one node")
    degree = {n.id: 0 for n in kg.nodes}
    for e in kg.edges:
        degree[e.src] += 1
        degree[e.dst] += 1
    w = np.array([1.0 + degree[n.id] for n in kg.nodes])
    return w / w.sum()


def build_kg_space(
    kg: KnowledgeGraph,
    embed,
    gamma: tuple[float, float] = DEFAULT_GAMMA,
    degree_weighted: bool = False,
) -> KgSpace:
    """Assemble the graph metric-measure space.

    ``embed`` is an embedding provider's embed method, applied to the
    node texts (label, definition, up to three aliases).
    """
    if not kg.nodes:
        raise InputError("cannot build a space over an empty graph")
    embeddings = embed([node_text(n) for n in kg.nodes])
    d_struct = struct_distance(kg)
    d_sem = minmax_normalize(feature_cost(embeddings, embeddings))
    return KgSpace(
        graph=kg,
        distance=combine_kg_distance(d_struct, d_sem, gamma),
        measure=node_measure(kg, degree_weighted),
        gamma=tuple(float(x) for x in gamma),
        node_embeddings=embeddings,
    )


# --- JSON round-trip -------------------------------------------------------
#
# Unknown fields anywhere (document, node or edge level) survive a
# load -> save cycle; the saver emits schema keys first, then extras in
# their original order.


def kg_from_dict(doc: dict[str, Any]) -> KnowledgeGraph:
    nodes = []
    for raw in doc.get("nodes", []):
        raw = dict(raw)
        nodes.append(
            ConceptNode(
                id=str(raw.pop("id")),
                label=str(raw.pop("label", "")),
                definition=str(raw.pop("definition", "") or ""),
                aliases=[str(a) for a in raw.pop("aliases", []) or []],
                provenance=raw.pop("provenance", None),
                confidence=float(raw.pop("confidence", 0.5)),
                rationale=raw.pop("rationale", None),
                extra=raw,
            )
        )
    edges = []
    for raw in doc.get("edges", []):
        raw = dict(raw)
        edges.append(
            RelationEdge(
                src=str(raw.pop("src")),
                dst=str(raw.pop("dst")),
                relation=str(raw.pop("relation")),
                confidence=float(raw.pop("confidence", 0.5)),
                rationale=raw.pop("rationale", None),
                extra=raw,
            )
        )
    extra = {k: v for k, v in doc.items() if k not in ("nodes", "edges")}
    return KnowledgeGraph(nodes=nodes, edges=edges, extra=extra)


def kg_to_dict(kg: KnowledgeGraph) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "nodes": [
            {
                "id": n.id,
                "label": n.label,
                "definition": n.definition,
                "aliases": list(n.aliases),
                "provenance": n.provenance,
                "confidence": n.confidence,
                "rationale": n.rationale,
                **n.extra,
            }
            for n in kg.nodes
        ],
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "relation": e.relation,
                "confidence": e.confidence,
                "rationale": e.rationale,
                **e.extra,
            }
            for e in kg.edges
        ],
    }
    doc.update(kg.extra)
    return doc


def load_kg(path: str | Path) -> KnowledgeGraph:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed KG JSON {path}: {exc}") from exc
    try:
        return kg_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"KG JSON {path} has invalid structure: {exc}") from exc


def save_kg(kg: KnowledgeGraph, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(kg_to_dict(kg), ensure_ascii=False, indent=1), encoding="utf-8"
    )
