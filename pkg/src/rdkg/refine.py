"""Coupling-driven graph refinement minimizing rate + beta * distortion.

Each iteration applies the local edit operators in a fixed order (add,
split, merge, relate, prune, optional LLM edges), recomputing the
transport coupling after every operator that changed the graph, then
records one trace point. The incumbent is the argmin of the objective
over all recorded iterations; the loop stops early once the objective
change stays below a threshold for a configured number of iterations.

Operator signals all come from the coupling:

* add: row mass restricted to semantically close nodes. The raw row
  mass equals the element's measure whenever the marginals hold, so the
  restricted variant is what actually discriminates; elements whose
  mass within the coverage tolerance falls short get a new concept.
* split: normalized column entropy flags nodes coupled to heterogeneous
  lecture subsets; 2-means on the coupled embeddings yields children.
  (Entropy is normalized by ln N so the threshold is size independent;
  the raw variant of any spread-out column exceeds it trivially.)
* merge: cosine similarity of node embeddings plus symmetric KL of
  column profiles detects redundant pairs.
* relate/prune: mean lecture distance between top-coupled neighborhoods
  adds relatedTo edges; the product of endpoint column masses prunes
  weakly supported ones.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .analysis import RdPoint, RdTrace, coverage_tolerance
from .embeddings import cosine_distance, cosine_similarity, feature_cost
from .errors import InputError, NumericalError
from .kg import (
    ALLOWED_RELATIONS,
    DEFAULT_GAMMA,
    ConceptNode,
    KgSpace,
    KnowledgeGraph,
    RelationEdge,
    build_kg_space,
    node_text,
    rate,
    validate_graph,
)
from .lecture import LectureSpace
from .llm import EDGE_PROMPT, LlmClient, Namer, _valid_edge_proposals, propose_label_edges
from .ot import Coupling, FgwResult, SolverConfig, fgw

logger = logging.getLogger(__name__)

MAX_DEFINITION_CHARS = 1000


@dataclass
class RefinementConfig:
    beta: float = 100.0
    theta_add: float = 0.02
    theta_split: float = 0.35
    theta_merge: float = 0.12
    theta_cos: float = 0.90
    theta_relate: float = 0.25
    tau: float = 1e-4
    max_adds: int = 5
    max_splits: int = 3
    max_merges: int = 3
    max_iterations: int = 12
    conv_threshold: float = 0.25
    patience: int = 2
    kl_smoothing: float = 1e-9
    # Config-gated variants of ambiguous signal definitions.
    split_entropy_raw: bool = False
    add_fractional: bool = False

    def __post_init__(self) -> None:
        for name in ("beta", "theta_add", "theta_split", "theta_merge",
                     "theta_cos", "theta_relate", "tau", "kl_smoothing"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")


@dataclass
class EditRecord:
    op: str  # add | split | merge | relate-add | prune | llm-edge
    nodes: list[str] = field(default_factory=list)
    edges: list[list[str]] = field(default_factory=list)  # [src, relation, dst]
    rationale: str = ""
    iteration: int = 0


@dataclass
class Aligned:
    """One solved alignment between the lecture and the current graph."""

    space: KgSpace
    feature: np.ndarray  # N x M cosine cost, absolute scale
    result: FgwResult

    @property
    def coupling(self) -> Coupling:
        return self.result.coupling


@dataclass
class RefineOutcome:
    graph: KnowledgeGraph
    trace: RdTrace
    incumbent_index: int


# --- coupling statistics ----------------------------------------------------


def covered_row_mass(
    pi: Coupling | np.ndarray, feature_costs: np.ndarray, tol: float
) -> np.ndarray:
    """Per-element coupling mass carried by semantically close nodes.

    rho_i = sum_j pi(i,j) * [feature_costs(i,j) <= tol]. Without the
    indicator the row sum is just the element's marginal mass and the
    add threshold could never fire.
    """
    plan = pi.matrix if isinstance(pi, Coupling) else np.asarray(pi)
    if plan.shape != feature_costs.shape:
        raise InputError("coupling and feature-cost shapes differ")
    return (plan * (feature_costs <= tol)).sum(axis=1)


def column_entropy(pi: Coupling | np.ndarray, raw: bool = False) -> np.ndarray:
    """Entropy of each normalized coupling column, in [0, 1] by default.

    Columns with zero mass get entropy 0. Normalization divides by
    ln N so a fixed threshold means the same thing at any lecture size;
    the raw variant returns plain nats.
    """
    plan = pi.matrix if isinstance(pi, Coupling) else np.asarray(pi)
    n = plan.shape[0]
    sums = plan.sum(axis=0)
    out = np.zeros(plan.shape[1])
    for j in range(plan.shape[1]):
        if sums[j] <= 0:
            continue
        p = plan[:, j] / sums[j]
        p = p[p > 0]
        h = float(-(p * np.log(p)).sum())
        out[j] = h if raw else (h / np.log(n) if n > 1 else 0.0)
    return out


def symmetric_kl(p: np.ndarray, q: np.ndarray, smoothing: float = 1e-9) -> float:
    """0.5 * (KL(p||q) + KL(q||p)) after additive smoothing.

    Smoothing every entry before renormalizing keeps the value finite
    on disjoint supports.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InputError("symmetric_kl: length mismatch")
    ps = (p + smoothing) / (p + smoothing).sum()
    qs = (q + smoothing) / (q + smoothing).sum()
    forward = float((ps * np.log(ps / qs)).sum())
    backward = float((qs * np.log(qs / ps)).sum())
    return 0.5 * (forward + backward)


def edge_support(
    pi: Coupling | np.ndarray, edge: RelationEdge, node_index: dict[str, int]
) -> float:
    """Coupling support of an edge: product of its endpoint column masses."""
    plan = pi.matrix if isinstance(pi, Coupling) else np.asarray(pi)
    try:
        a = node_index[edge.src]
        b = node_index[edge.dst]
    except KeyError as exc:
        raise InputError(f"edge endpoint not mapped to a coupling column: {exc}") from exc
    masses = plan.sum(axis=0)
    return float(masses[a] * masses[b])


def top_coupled(pi: Coupling | np.ndarray, column: int, k: int = 5) -> np.ndarray:
    """Indices of the k largest entries of a column, ties to lowest index."""
    plan = pi.matrix if isinstance(pi, Coupling) else np.asarray(pi)
    order = np.argsort(-plan[:, column], kind="stable")
    return order[: min(k, plan.shape[0])]


# --- shared operator context -------------------------------------------------


@dataclass
class OpContext:
    lecture: LectureSpace
    element_embeddings: np.ndarray
    embed: Callable[[list[str]], np.ndarray]
    namer: Namer
    config: RefinementConfig
    llm_client: LlmClient | None = None

    def __post_init__(self) -> None:
        self._id_counter = 0
        self._known_embeddings: dict[str, np.ndarray] = {}

    def fresh_id(self, kg: KnowledgeGraph, base: str) -> str:
        existing = set(kg.node_ids())
        candidate = base
        while candidate in existing:
            self._id_counter += 1
            candidate = f"{base}_{self._id_counter}"
        return candidate

    def node_embedding(self, node: ConceptNode) -> np.ndarray:
        text = node_text(node)
        if text not in self._known_embeddings:
            self._known_embeddings[text] = self.embed([text])[0]
        return self._known_embeddings[text]


# --- operators ---------------------------------------------------------------


def op_add(
    kg: KnowledgeGraph, aligned: Aligned, ctx: OpContext, iteration: int
) -> tuple[KnowledgeGraph, list[EditRecord]]:
    """Add concepts for under-covered lecture spans (lowest mass first).

    Contiguous flagged elements sharing a section path become one node;
    per-group edges come from the LLM when available, else a single
    low-confidence relatedTo to the nearest existing concept.
    """
    cfg = ctx.config
    tol = coverage_tolerance(aligned.feature)
    rho = covered_row_mass(aligned.coupling, aligned.feature, tol)
    threshold = cfg.theta_add
    if cfg.add_fractional:
        rho = rho / ctx.lecture.measure
    flagged = [i for i in range(len(rho)) if rho[i] < threshold]
    if not flagged:
        return kg, []

    groups: list[list[int]] = []
    for i in flagged:
        if (
            groups
            and i == groups[-1][-1] + 1
            and ctx.lecture.elements[i].section_path
            == ctx.lecture.elements[groups[-1][-1]].section_path
        ):
            groups[-1].append(i)
        else:
            groups.append([i])
    groups.sort(key=lambda g: (min(rho[i] for i in g), g[0]))
    groups = groups[: cfg.max_adds]

    working = kg.copy()
    embeddings_by_id = {
        node.id: aligned.space.node_embeddings[i]
        for i, node in enumerate(kg.nodes)
    }
    records: list[EditRecord] = []
    for group in groups:
        texts = [ctx.lecture.elements[i].content for i in group]
        path = ctx.lecture.elements[group[0]].section_path
        definition = " ".join(texts)[:MAX_DEFINITION_CHARS]
        node = ConceptNode(
            id=ctx.fresh_id(working, f"add_t{iteration}_{group[0]}"),
            label=ctx.namer.name(texts),
            definition=definition,
            provenance={"path": list(path), "excerpt": definition[:200]},
            confidence=0.5,
            rationale="covers lecture span with low coupled mass",
        )
        new_embedding = ctx.node_embedding(node)
        others = list(working.nodes)
        working.nodes.append(node)
        edges: list[RelationEdge] = []
        if others:
            other_rows = np.stack([embeddings_by_id[n.id] for n in others])
            edges = propose_label_edges(
                node, working, other_rows, new_embedding, ctx.llm_client
            )
            working.edges.extend(edges)
        embeddings_by_id[node.id] = new_embedding
        records.append(
            EditRecord(
                op="add",
                nodes=[node.id],
                edges=[[e.src, e.relation, e.dst] for e in edges],
                rationale=f"under-covered span at {'/'.join(path)}",
                iteration=iteration,
            )
        )
    return working, records


def op_split(
    kg: KnowledgeGraph, aligned: Aligned, ctx: OpContext, iteration: int
) -> tuple[KnowledgeGraph, list[EditRecord]]:
    """Split nodes whose coupling column spreads over heterogeneous content.

    The coupled subset (entries above the column mean) is clustered by
    deterministic 2-means; subsets smaller than 4 elements are left
    alone. Children clone the parent's attributes, take their group's
    concatenated text as definition, and inherit every incident edge.
    """
    cfg = ctx.config
    entropies = column_entropy(aligned.coupling, raw=cfg.split_entropy_raw)
    candidates = [j for j in range(len(entropies)) if entropies[j] > cfg.theta_split]
    candidates.sort(key=lambda j: (-entropies[j], j))
    candidates = candidates[: cfg.max_splits]
    if not candidates:
        return kg, []

    plan = aligned.coupling.matrix
    working = kg.copy()
    records: list[EditRecord] = []
    for j in candidates:
        parent = kg.nodes[j]
        column = plan[:, j]
        subset = [i for i in range(len(column)) if column[i] > column.mean()]
        if len(subset) < 4:
            continue
        labels = two_means(ctx.element_embeddings[subset])
        group_a = [subset[i] for i in range(len(subset)) if labels[i] == 0]
        group_b = [subset[i] for i in range(len(subset)) if labels[i] == 1]
        children: list[ConceptNode] = []
        for tag, group in (("a", group_a), ("b", group_b)):
            texts = [ctx.lecture.elements[i].content for i in group]
            children.append(
                ConceptNode(
                    id=ctx.fresh_id(working, f"{parent.id}_{tag}"),
                    label=ctx.namer.name(texts),
                    definition=" ".join(texts)[:MAX_DEFINITION_CHARS],
                    aliases=list(parent.aliases),
                    provenance=dict(parent.provenance) if parent.provenance else None,
                    confidence=parent.confidence,
                    rationale=f"split of {parent.id} (heterogeneous coupling)",
                )
            )
        idx = next(i for i, n in enumerate(working.nodes) if n.id == parent.id)
        working.nodes[idx : idx + 1] = children
        incident = [e for e in working.edges if parent.id in (e.src, e.dst)]
        working.edges = [e for e in working.edges if parent.id not in (e.src, e.dst)]
        for child in children:
            for e in incident:
                rewired = RelationEdge(
                    src=child.id if e.src == parent.id else e.src,
                    dst=child.id if e.dst == parent.id else e.dst,
                    relation=e.relation,
                    confidence=e.confidence,
                    rationale=e.rationale,
                )
                _add_edge_dedup(working, rewired)
        records.append(
            EditRecord(
                op="split",
                nodes=[parent.id] + [c.id for c in children],
                rationale=f"column entropy {entropies[j]:.3f} above threshold",
                iteration=iteration,
            )
        )
    return (working, records) if records else (kg, [])


def op_merge(
    kg: KnowledgeGraph, aligned: Aligned, ctx: OpContext, iteration: int
) -> tuple[KnowledgeGraph, list[EditRecord]]:
    """Merge redundant node pairs (similar embeddings, similar columns).

    Pairs are scanned in ascending node order and accepted greedily; a
    node that took part in a merge this iteration is excluded from
    further merging. The absorbing node keeps its label and definition
    and gains the absorbed node's label and aliases as aliases.
    """
    cfg = ctx.config
    plan = aligned.coupling.matrix
    col_sums = plan.sum(axis=0)
    embeddings = aligned.space.node_embeddings
    working = kg.copy()
    used: set[str] = set()
    records: list[EditRecord] = []
    m = len(kg.nodes)
    for i in range(m):
        if len(records) >= cfg.max_merges:
            break
        keep = kg.nodes[i]
        if keep.id in used or col_sums[i] <= 0:
            continue
        for j in range(i + 1, m):
            drop = kg.nodes[j]
            if drop.id in used or col_sums[j] <= 0:
                continue
            if cosine_similarity(embeddings[i], embeddings[j]) < cfg.theta_cos:
                continue
            kl = symmetric_kl(
                plan[:, i] / col_sums[i], plan[:, j] / col_sums[j], cfg.kl_smoothing
            )
            if kl > cfg.theta_merge:
                continue
            _merge_into(working, keep.id, drop.id)
            used.update((keep.id, drop.id))
            records.append(
                EditRecord(
                    op="merge",
                    nodes=[keep.id, drop.id],
                    rationale=f"cosine above {cfg.theta_cos}, symmetric KL {kl:.4f}",
                    iteration=iteration,
                )
            )
            break
    return (working, records) if records else (kg, [])


def op_relate(
    kg: KnowledgeGraph, aligned: Aligned, ctx: OpContext, iteration: int
) -> tuple[KnowledgeGraph, list[EditRecord]]:
    """Add relatedTo edges between nodes with adjacent lecture neighborhoods.

    For every unconnected node pair, the mean lecture distance over the
    cross pairs of their top-coupled elements (identical indices
    excluded) must fall below the threshold.
    """
    cfg = ctx.config
    d_lecture = ctx.lecture.distance
    tops = [top_coupled(aligned.coupling, j) for j in range(len(kg.nodes))]
    working = kg.copy()
    records: list[EditRecord] = []
    for j in range(len(kg.nodes)):
        for k in range(j + 1, len(kg.nodes)):
            a, b = kg.nodes[j], kg.nodes[k]
            if working.has_edge_between(a.id, b.id):
                continue
            distances = [
                d_lecture[p, q] for p in tops[j] for q in tops[k] if p != q
            ]
            if not distances:
                continue
            if float(np.mean(distances)) < cfg.theta_relate:
                edge = RelationEdge(
                    src=a.id,
                    dst=b.id,
                    relation="relatedTo",
                    confidence=0.5,
                    rationale="top-coupled lecture neighborhoods are adjacent",
                )
                working.edges.append(edge)
                records.append(
                    EditRecord(
                        op="relate-add",
                        nodes=[a.id, b.id],
                        edges=[[edge.src, edge.relation, edge.dst]],
                        iteration=iteration,
                    )
                )
    return (working, records) if records else (kg, [])


def op_prune(
    kg: KnowledgeGraph, aligned: Aligned, ctx: OpContext, iteration: int
) -> tuple[KnowledgeGraph, list[EditRecord]]:
    """Remove edges whose coupling support falls below tau."""
    index = kg.node_index()
    working = kg.copy()
    kept: list[RelationEdge] = []
    records: list[EditRecord] = []
    for edge in working.edges:
        support = edge_support(aligned.coupling, edge, index)
        if support < ctx.config.tau:
            records.append(
                EditRecord(
                    op="prune",
                    nodes=[edge.src, edge.dst],
                    edges=[[edge.src, edge.relation, edge.dst]],
                    rationale=f"support {support:.3e} below tau",
                    iteration=iteration,
                )
            )
        else:
            kept.append(edge)
    working.edges = kept
    return (working, records) if records else (kg, [])


def llm_propose_edges(
    kg: KnowledgeGraph,
    client: LlmClient | None,
    iteration: int = 0,
    allowed_relations: frozenset[str] = ALLOWED_RELATIONS,
) -> tuple[KnowledgeGraph, list[EditRecord]]:
    """Optional LLM pass proposing new edges from graph content only."""
    if client is None:
        return kg, []
    doc = client.chat_json(
        EDGE_PROMPT.format(
            relations=", ".join(sorted(allowed_relations)),
            nodes="\n".join(f"- {n.id}: {node_text(n)}" for n in kg.nodes),
            edges="\n".join(f"- {e.src} {e.relation} {e.dst}" for e in kg.edges),
        )
    )
    proposals = _valid_edge_proposals(doc, kg, allowed_relations)
    if not proposals:
        return kg, []
    working = kg.copy()
    records = []
    for edge in proposals:
        working.edges.append(edge)
        records.append(
            EditRecord(
                op="llm-edge",
                nodes=[edge.src, edge.dst],
                edges=[[edge.src, edge.relation, edge.dst]],
                rationale=edge.rationale or "",
                iteration=iteration,
            )
        )
    return working, records


def two_means(points: np.ndarray, max_iters: int = 25) -> np.ndarray:
    """Deterministic 2-means: farthest-pair seeding, no RNG.

    Assignment uses squared Euclidean distance with ties to cluster 0;
    an emptied cluster is repaired by reassigning the point farthest
    from the surviving centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 2:
        raise InputError("two_means needs at least 2 points")
    seed_a, seed_b, best = 0, 1, -1.0
    for i in range(n):
        for j in range(i + 1, n):
            d = cosine_distance(pts[i], pts[j])
            if d > best:
                best, seed_a, seed_b = d, i, j
    centroids = np.stack([pts[seed_a], pts[seed_b]])
    labels: np.ndarray | None = None
    for _ in range(max_iters):
        d0 = ((pts - centroids[0]) ** 2).sum(axis=1)
        d1 = ((pts - centroids[1]) ** 2).sum(axis=1)
        new_labels = (d1 < d0).astype(int)
        for cluster in (0, 1):
            if not (new_labels == cluster).any():
                other = 1 - cluster
                far = int(np.argmax(((pts - centroids[other]) ** 2).sum(axis=1)))
                new_labels[far] = cluster
        if labels is not None and (new_labels == labels).all():
            break
        labels = new_labels
        for cluster in (0, 1):
            centroids[cluster] = pts[labels == cluster].mean(axis=0)
    return labels


# --- the search loop ----------------------------------------------------------


def refine(
    lecture: LectureSpace,
    initial_kg: KnowledgeGraph,
    provider,
    solver_config: SolverConfig | None = None,
    refine_config: RefinementConfig | None = None,
    gamma: tuple[float, float] = DEFAULT_GAMMA,
    llm_client: LlmClient | None = None,
    degree_weighted_measure: bool = False,
    allowed_relations: frozenset[str] = ALLOWED_RELATIONS,
) -> RefineOutcome:
    """Run the bounded refinement search and return the incumbent graph.

    The trace always contains the unedited initial graph as t0. On a
    solver failure mid-run the incumbent found so far is returned and
    the trace is flagged incomplete.
    """
    solver_cfg = solver_config or SolverConfig()
    cfg = refine_config or RefinementConfig()
    embed = provider.embed
    element_embeddings = embed(lecture.contents())
    ctx = OpContext(
        lecture=lecture,
        element_embeddings=element_embeddings,
        embed=embed,
        namer=Namer(lecture.contents(), llm_client),
        config=cfg,
        llm_client=llm_client,
    )

    def solve(kg: KnowledgeGraph) -> Aligned:
        space = build_kg_space(kg, embed, gamma, degree_weighted_measure)
        feature = feature_cost(element_embeddings, space.node_embeddings)
        result = fgw(
            lecture.distance, space.distance, feature,
            lecture.measure, space.measure, solver_cfg,
        )
        return Aligned(space=space, feature=feature, result=result)

    kg = initial_kg.copy()
    aligned = solve(kg)
    trace = RdTrace(beta=cfg.beta)
    _record(trace, 0, kg, aligned, cfg.beta, [])
    incumbent_kg = kg.copy()
    incumbent_l = trace.points[0].objective
    incumbent_index = 0

    operators = (op_add, op_split, op_merge, op_relate, op_prune)
    quiet = 0
    previous_l = incumbent_l
    for t in range(1, cfg.max_iterations + 1):
        edits: list[EditRecord] = []
        try:
            for op in operators:
                kg, records = op(kg, aligned, ctx, t)
                if records:
                    _check_valid(kg, op.__name__, allowed_relations)
                    edits.extend(records)
                    aligned = solve(kg)
            if llm_client is not None:
                kg, records = llm_propose_edges(kg, llm_client, t, allowed_relations)
                if records:
                    _check_valid(kg, "llm_propose_edges", allowed_relations)
                    edits.extend(records)
                    aligned = solve(kg)
        except NumericalError as exc:
            logger.error("solver failure at iteration %d: %s", t, exc)
            trace.incomplete = True
            break

        _record(trace, t, kg, aligned, cfg.beta, edits)
        objective = trace.points[-1].objective
        if objective < incumbent_l:
            incumbent_l = objective
            incumbent_kg = kg.copy()
            incumbent_index = t
        if abs(objective - previous_l) < cfg.conv_threshold:
            quiet += 1
            if quiet >= cfg.patience:
                break
        else:
            quiet = 0
        previous_l = objective

    return RefineOutcome(graph=incumbent_kg, trace=trace, incumbent_index=incumbent_index)


def _record(
    trace: RdTrace,
    t: int,
    kg: KnowledgeGraph,
    aligned: Aligned,
    beta: float,
    edits: list[EditRecord],
) -> None:
    r = rate(kg)
    d = aligned.result.distortion
    trace.points.append(
        RdPoint(
            t=t,
            rate=r,
            distortion=d,
            objective=r + beta * d,
            structure=aligned.result.structure_term,
            feature=aligned.result.feature_term,
        )
    )
    trace.edits.append([asdict(e) for e in edits])


def _check_valid(
    kg: KnowledgeGraph, op_name: str,
    allowed_relations: frozenset[str] = ALLOWED_RELATIONS,
) -> None:
    violations = validate_graph(kg, allowed_relations)
    if violations:
        raise RuntimeError(f"{op_name} corrupted the graph: {violations}")


def _merge_into(kg: KnowledgeGraph, keep_id: str, drop_id: str) -> None:
    keep = kg.get_node(keep_id)
    drop = kg.get_node(drop_id)
    for alias in [drop.label, *drop.aliases]:
        alias = alias.strip()
        if alias and alias != keep.label and alias not in keep.aliases:
            keep.aliases.append(alias)
    kg.nodes = [n for n in kg.nodes if n.id != drop_id]
    old_edges = kg.edges
    kg.edges = []
    for e in old_edges:
        src = keep_id if e.src == drop_id else e.src
        dst = keep_id if e.dst == drop_id else e.dst
        if src == dst:
            continue
        _add_edge_dedup(
            kg,
            RelationEdge(
                src=src, dst=dst, relation=e.relation,
                confidence=e.confidence, rationale=e.rationale, extra=dict(e.extra),
            ),
        )


def _add_edge_dedup(kg: KnowledgeGraph, edge: RelationEdge) -> None:
    keys = {e.key() for e in kg.edges}
    if edge.key() not in keys:
        kg.edges.append(edge)
