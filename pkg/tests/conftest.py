"""Shared fixtures: deterministic providers and synthetic lectures."""

from __future__ import annotations

import numpy as np
import pytest

from rdkg.embeddings import HashEmbedder
from rdkg.kg import ConceptNode, KnowledgeGraph, RelationEdge

TOPIC_A_WORDS = [
    "dataframe", "index", "column", "groupby", "aggregate",
    "merge_tables", "pivot", "filter_rows", "sort_values", "missing_values",
]
TOPIC_B_WORDS = [
    "recurrent", "sequence", "gradient", "attention", "encoder",
    "decoder", "embedding_layer", "softmax", "backprop", "hidden_state",
]


def make_section(title: str, words: list[str], n_units: int, salt: int) -> str:
    lines = [f"## {title}", ""]
    for i in range(n_units):
        w = [words[(i + j + salt) % len(words)] for j in range(5)]
        lines.append(f"The topic {w[0]} {w[1]} {w[2]} relates to {w[3]} and {w[4]}.")
        lines.append("")
    return "\n".join(lines)


def two_topic_markdown() -> str:
    """~40 units: 16 on tables (topic A), 24 on sequences (topic B)."""
    return "\n".join(
        [
            "# Lecture",
            "",
            make_section("Tables one", TOPIC_A_WORDS, 8, 0),
            make_section("Tables two", TOPIC_A_WORDS, 8, 3),
            make_section("Sequences one", TOPIC_B_WORDS, 8, 0),
            make_section("Sequences two", TOPIC_B_WORDS, 8, 3),
            make_section("Sequences three", TOPIC_B_WORDS, 8, 6),
        ]
    )


def topic_a_only_kg() -> KnowledgeGraph:
    """Deliberately impoverished bootstrap: topic B absent."""
    return KnowledgeGraph(
        nodes=[
            ConceptNode(id="n1", label="Dataframe basics",
                        definition=" ".join(TOPIC_A_WORDS[:5])),
            ConceptNode(id="n2", label="Grouping",
                        definition=" ".join(TOPIC_A_WORDS[3:8])),
            ConceptNode(id="n3", label="Missing data",
                        definition=" ".join(TOPIC_A_WORDS[5:10])),
        ],
        edges=[
            RelationEdge("n2", "n1", "uses", 0.8, "shared wrangling verbs"),
            RelationEdge("n3", "n1", "partOf", 0.8, "cleanup belongs to basics"),
        ],
    )


def random_metric(n: int, rng: np.random.Generator, dim: int = 3) -> np.ndarray:
    """Normalized Euclidean distance matrix over random points."""
    pts = rng.normal(size=(n, dim))
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    return d / d.max()


@pytest.fixture
def provider() -> HashEmbedder:
    return HashEmbedder(dim=256, seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
