"""Lecture notes as a metric-measure space.

A parsed document is flattened into an ordered list of atomic units
(one per Markdown block). Three pairwise distances are computed over
the units (chronological separation, section-hierarchy separation,
embedding dissimilarity), normalized to [0, 1], and fused by a convex
combination into the single lecture distance matrix. The measure over
units is uniform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .markdown import ROOT_TITLE, Section, parse_markdown

DEFAULT_ALPHA = (0.2, 0.3, 0.5)  # (chron, logic, sem) fusion weights

#: Units shorter than this after whitespace normalization are dropped
#: before indexing; separators and artifacts pollute the embedding space.
MIN_UNIT_CHARS = 3

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class LectureElement:
    """One atomic unit of lecture content."""

    id: str
    idx: int
    section_path: tuple[str, ...]
    content: str


@dataclass
class LectureSpace:
    """The lecture metric-measure space.

    ``distance`` is the fused N x N matrix in [0, 1] (symmetric, zero
    diagonal), ``measure`` the length-N probability vector, and
    ``components`` the three normalized component matrices keyed
    "chron", "logic", "sem".
    """

    elements: list[LectureElement]
    distance: np.ndarray
    measure: np.ndarray
    components: dict[str, np.ndarray]
    alpha: tuple[float, float, float]

    def __len__(self) -> int:
        return len(self.elements)

    def contents(self) -> list[str]:
        return [e.content for e in self.elements]


def flatten(tree: Section) -> list[LectureElement]:
    """Flatten a section tree into ordered atomic units.

    Depth-first, document-order traversal; every content block becomes
    one element with idx assigned 0..N-1 in emission order. The
    section_path is the chain of heading titles; units before any
    heading get the single-element path ("<root>",).

    Raises InputError("no atomic units") if nothing survives.
    """
    out: list[LectureElement] = []

    def walk(section: Section, path: tuple[str, ...]) -> None:
        if section.level == 0:
            here = path
        else:
            here = path + (section.title,)
        for block in section.blocks:
            content = block.text.strip()
            if len(content) < MIN_UNIT_CHARS:
                continue
            idx = len(out)
            out.append(
                LectureElement(
                    id=f"u{idx}",
                    idx=idx,
                    section_path=here if here else (ROOT_TITLE,),
                    content=content,
                )
            )
        for child in section.children:
            walk(child, here)

    walk(tree, ())
    if not out:
        raise InputError("no atomic units")
    return out


def chron_distance(elements: list[LectureElement]) -> np.ndarray:
    """Narrative separation along lecture order: |idx_i - idx_j| / max idx."""
    n = len(elements)
    if n == 1:
        return np.zeros((1, 1))
    idx = np.array([e.idx for e in elements], dtype=np.float64)
    span = idx.max()
    return np.abs(idx[:, None] - idx[None, :]) / span


def logic_distance(elements: list[LectureElement]) -> np.ndarray:
    """Section-hierarchy separation: 1 - LCP(path_i, path_j) / max_depth.

    The diagonal is 1 - |path_i| / max_depth, nonzero for non-maximal
    paths; it is irrelevant downstream because the fused matrix forces a
    zero diagonal.
    """
    paths = [e.section_path for e in elements]
    max_depth = max(len(p) for p in paths)
    n = len(paths)
    d = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            lcp = _common_prefix_len(paths[i], paths[j])
            d[i, j] = d[j, i] = 1.0 - lcp / max_depth
    return d


def semantic_distance(embeddings: np.ndarray) -> np.ndarray:
    """Raw cosine-dissimilarity matrix clip(1 - cos, 0, 2) over unit rows.

    Returned un-normalized (entries in [0, 2], exact-zero diagonal);
    the space builder min-max normalizes it before fusion.
    """
    from .embeddings import feature_cost

    return feature_cost(embeddings, embeddings)


def minmax_normalize(matrix: np.ndarray) -> np.ndarray:
    """Min-max normalize over off-diagonal entries; diagonal forced to 0.

    A constant matrix (max == min) maps to all zeros: constant distance
    carries no information, and zero is neutral under fusion.
    """
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    if n <= 1:
        return np.zeros_like(m)
    off = ~np.eye(n, dtype=bool)
    lo = m[off].min()
    hi = m[off].max()
    out = np.zeros_like(m)
    if hi > lo:
        out[off] = (m[off] - lo) / (hi - lo)
    return out


def combine_lecture_distance(
    d_chron: np.ndarray,
    d_logic: np.ndarray,
    d_sem: np.ndarray,
    alpha: tuple[float, float, float] = DEFAULT_ALPHA,
) -> np.ndarray:
    """Fuse the three normalized components into the lecture distance.

    Convex combination followed by off-diagonal min-max normalization;
    the diagonal is forced to exactly 0.
    """
    a = np.asarray(alpha, dtype=np.float64)
    if a.shape != (3,) or (a < 0).any() or abs(a.sum() - 1.0) > _WEIGHT_TOL:
        raise InputError("invalid weights: alpha must be nonnegative and sum to 1")
    fused = a[0] * d_chron + a[1] * d_logic + a[2] * d_sem
    return minmax_normalize(fused)


def uniform_measure(n: int) -> np.ndarray:
    """Uniform probability vector of length n."""
    if n < 1:
        raise InputError("measure requires at least one element")
    return np.full(n, 1.0 / n)


def build_lecture_space(
    text: str,
    embeddings: np.ndarray | None = None,
    embed=None,
    alpha: tuple[float, float, float] = DEFAULT_ALPHA,
) -> LectureSpace:
    """Parse Markdown text and assemble the full lecture space.

    Embeddings for the unit contents are taken from ``embeddings`` if
    given, else computed with the ``embed`` callable (an embedding
    provider's ``embed`` method).
    """
    tree = parse_markdown(text)
    elements = flatten(tree)
    if embeddings is None:
        if embed is None:
            raise InputError("either embeddings or an embed provider is required")
        embeddings = embed([e.content for e in elements])
    if embeddings.shape[0] != len(elements):
        raise InputError(
            f"embedding rows ({embeddings.shape[0]}) != unit count ({len(elements)})"
        )
    comp = {
        "chron": chron_distance(elements),
        "logic": logic_distance(elements),
        "sem": minmax_normalize(semantic_distance(embeddings)),
    }
    d = combine_lecture_distance(comp["chron"], comp["logic"], comp["sem"], alpha)
    return LectureSpace(
        elements=elements,
        distance=d,
        measure=uniform_measure(len(elements)),
        components=comp,
        alpha=tuple(float(x) for x in alpha),
    )


def save_lecture_space(space: LectureSpace, path: str | Path) -> None:
    """Write the lecture-space JSON artifact.

    Matrix values are serialized with full float precision (well beyond
    the 9 significant digits the format requires) so a reload is
    bit-exact.
    """
    doc = {
        "elements": [
            {
                "id": e.id,
                "idx": e.idx,
                "path": list(e.section_path),
                "content": e.content,
            }
            for e in space.elements
        ],
        "mu": space.measure.tolist(),
        "d": space.distance.tolist(),
        "components": {k: v.tolist() for k, v in space.components.items()},
        "alpha": list(space.alpha),
    }
    # compact separators: the matrices dominate and this file is machine-read
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, separators=(",", ":")), encoding="utf-8"
    )


def load_lecture_space(path: str | Path) -> LectureSpace:
    """Load a lecture-space artifact written by save_lecture_space."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed lecture artifact {path}: {exc}") from exc
    try:
        elements = [
            LectureElement(
                id=e["id"],
                idx=int(e["idx"]),
                section_path=tuple(e["path"]),
                content=e["content"],
            )
            for e in doc["elements"]
        ]
        space = LectureSpace(
            elements=elements,
            distance=np.asarray(doc["d"], dtype=np.float64),
            measure=np.asarray(doc["mu"], dtype=np.float64),
            components={
                k: np.asarray(v, dtype=np.float64) for k, v in doc["components"].items()
            },
            alpha=tuple(float(x) for x in doc["alpha"]),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"lecture artifact {path} missing field: {exc}") from exc
    n = len(space.elements)
    if space.distance.shape != (n, n) or space.measure.shape != (n,):
        raise InputError(f"lecture artifact {path} has inconsistent shapes")
    return space


def _common_prefix_len(a: tuple[str, ...], b: tuple[str, ...]) -> int:
    k = 0
    for x, y in zip(a, b):
        if x != y:
            break
        k += 1
    return k
