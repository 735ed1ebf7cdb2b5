"""Text embedding providers and the shared cosine-distance kernel.

Three interchangeable providers:

* HashEmbedder: offline fallback, lowercase word tokens hashed into a
  signed bag-of-words vector. Fully deterministic (SHA-256 based, no
  process-dependent hashing), so the whole pipeline runs reproducibly
  without network access.
* FileEmbedder: vectors precomputed elsewhere, keyed by the SHA-256 of
  the exact input text.
* HttpEmbedder: a POST endpoint speaking {model, inputs} -> {embeddings},
  with batching, retries and an in-run response cache.

All distance computations normalize rows on the fly; stored embeddings
stay raw.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from pathlib import Path
from threading import Lock

import numpy as np

from .errors import InputError, ProviderError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9_]+")

#: Environment variable holding the embedding endpoint API key (never logged).
API_KEY_ENV = "EMBEDDINGS_API_KEY"


def content_hash(text: str) -> str:
    """Lowercase-hex SHA-256 of the exact input text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class HashEmbedder:
    """Deterministic signed bag-of-words hashing embedder.

    Each lowercase token is mapped by SHA-256(seed:token) to one
    coordinate and a sign; token counts accumulate. Texts without any
    word token fall back to a single pseudo-token derived from the raw
    text so no row is ever zero.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise InputError("embedding dimension must be positive")
        self.dim = dim
        self.seed = seed

    def embed(self, texts: list[str]) -> np.ndarray:
        if not texts:
            raise InputError("no texts to embed")
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            if not text:
                raise InputError("cannot embed empty text")
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                tokens = ["raw:" + content_hash(text)]
            for tok in tokens:
                digest = hashlib.sha256(f"{self.seed}:{tok}".encode()).digest()
                coord = int.from_bytes(digest[:4], "big") % self.dim
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                out[row, coord] += sign
            if not out[row].any():
                # Sign cancellations across duplicate-coordinate tokens are
                # possible in principle; perturb deterministically.
                digest = hashlib.sha256(text.encode("utf-8")).digest()
                out[row, int.from_bytes(digest[:4], "big") % self.dim] = 1.0
        return out


class FileEmbedder:
    """Provider backed by a precomputed-embeddings JSON file.

    File format: {"dim": d, "keys": [content-hash, ...],
    "vectors": [[...], ...]} with keys[i] the SHA-256 of the exact text
    vectors[i] embeds.
    """

    def __init__(self, path: str | Path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read embeddings file {path}: {exc}") from exc
        try:
            self.dim = int(doc["dim"])
            keys = doc["keys"]
            vectors = doc["vectors"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"embeddings file {path} missing field: {exc}") from exc
        if len(keys) != len(vectors):
            raise InputError("embeddings file: keys/vectors count mismatch")
        self._table: dict[str, np.ndarray] = {}
        for key, vec in zip(keys, vectors):
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise InputError(
                    f"embeddings file: dimension mismatch for key {key[:12]}"
                )
            self._table[key] = arr

    def embed(self, texts: list[str]) -> np.ndarray:
        if not texts:
            raise InputError("no texts to embed")
        rows = []
        for text in texts:
            key = content_hash(text)
            if key not in self._table:
                raise InputError(
                    f"embeddings file: dimension/count mismatch, no vector for "
                    f"text hash {key[:12]}"
                )
            rows.append(self._table[key])
        return np.stack(rows)


class HttpEmbedder:
    """Provider calling a remote embedding endpoint.

    Wire contract: POST {"model": ..., "inputs": [text, ...]} returning
    {"embeddings": [[...], ...]}, batched at 64 texts per request, two
    retries with exponential backoff. Responses are cached by content
    hash for the lifetime of the provider so repeated embedding of the
    same text within a run is free and stable.
    """

    BATCH = 64

    def __init__(
        self,
        base_url: str,
        model: str,
        timeout: float = 30.0,
        retries: int = 2,
        transport=None,
    ):
        self.base_url = base_url
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self._transport = transport or _http_post_json
        self._cache: dict[str, np.ndarray] = {}
        self._lock = Lock()

    def embed(self, texts: list[str]) -> np.ndarray:
        if not texts:
            raise InputError("no texts to embed")
        missing: list[str] = []
        with self._lock:
            for text in texts:
                if content_hash(text) not in self._cache and text not in missing:
                    missing.append(text)
        for start in range(0, len(missing), self.BATCH):
            batch = missing[start : start + self.BATCH]
            vectors = self._request(batch)
            if len(vectors) != len(batch):
                raise ProviderError(
                    f"embedding endpoint returned {len(vectors)} vectors "
                    f"for {len(batch)} inputs"
                )
            with self._lock:
                for text, vec in zip(batch, vectors):
                    self._cache[content_hash(text)] = np.asarray(vec, dtype=np.float64)
        with self._lock:
            return np.stack([self._cache[content_hash(t)] for t in texts])

    def _request(self, batch: list[str]) -> list:
        payload = {"model": self.model, "inputs": batch}
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error = None
        for attempt in range(self.retries + 1):
            try:
                reply = self._transport(self.base_url, payload, headers, self.timeout)
                return reply["embeddings"]
            except Exception as exc:  # noqa: BLE001 - provider boundary
                last_error = exc
                if attempt < self.retries:
                    time.sleep(2.0**attempt * 0.5)
        raise ProviderError(f"embedding provider unavailable: {last_error}")


def _http_post_json(url: str, payload: dict, headers: dict, timeout: float) -> dict:
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode("utf-8"), headers=headers, method="POST"
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:  # noqa: S310
        return json.loads(resp.read().decode("utf-8"))


def provider_from_config(cfg) -> HashEmbedder | FileEmbedder | HttpEmbedder:
    """Build a provider from a RunConfig-style object.

    Accepts both the short kind names and their descriptive aliases
    (deterministic-hash, precomputed-file, http-endpoint).
    """
    kind = {"deterministic-hash": "hash", "precomputed-file": "file",
            "http-endpoint": "http"}.get(cfg.embed_provider, cfg.embed_provider)
    if kind == "hash":
        return HashEmbedder(dim=cfg.embed_dim, seed=cfg.embed_seed)
    if kind == "file":
        if not cfg.embeddings_file:
            raise InputError("embed_provider=file requires embeddings_file")
        return FileEmbedder(cfg.embeddings_file)
    if kind == "http":
        if not cfg.embed_url:
            raise InputError("embed_provider=http requires embed_url")
        return HttpEmbedder(
            base_url=cfg.embed_url,
            model=cfg.embed_model,
            timeout=cfg.embed_timeout,
            retries=cfg.embed_retries,
        )
    raise InputError(f"unknown embedding provider kind: {cfg.embed_provider!r}")


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise InputError("embedding matrix must be 2-dimensional")
    if not np.isfinite(m).all():
        raise InputError("embedding matrix has non-finite entries")
    norms = np.linalg.norm(m, axis=1)
    if (norms == 0).any():
        raise InputError("degenerate embedding: zero-norm row")
    return m / norms[:, None]


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """clip(1 - cos(u, v), 0, 2), exactly 0 for identical vectors.

    Computed as half the squared distance of the unit vectors, which is
    algebraically identical to 1 - cos and floating-point-exact at 0.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise InputError("cosine_distance: length mismatch")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise InputError("degenerate embedding: zero-norm vector")
    diff = u / nu - v / nv
    return float(np.clip(0.5 * np.dot(diff, diff), 0.0, 2.0))


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Plain cosine similarity in [-1, 1]."""
    return 1.0 - cosine_distance(u, v)


def feature_cost(
    source: np.ndarray, target: np.ndarray, block: int = 64
) -> np.ndarray:
    """Pairwise cosine-distance cost matrix between two embedding sets.

    Entry (i, j) is clip(1 - cos(source_i, target_j), 0, 2). This is an
    absolute cost (never re-normalized) consumed by the transport
    objective and by coverage. Identical rows give exact zeros. Row
    blocks bound the memory of the broadcasted difference tensor.
    """
    a = _unit_rows(source)
    b = _unit_rows(target)
    if a.shape[1] != b.shape[1]:
        raise InputError(
            f"feature_cost: dimension mismatch ({a.shape[1]} vs {b.shape[1]})"
        )
    out = np.empty((a.shape[0], b.shape[0]))
    for i0 in range(0, a.shape[0], block):
        diff = a[i0 : i0 + block, None, :] - b[None, :, :]
        out[i0 : i0 + block] = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
    np.clip(out, 0.0, 2.0, out=out)
    return out
