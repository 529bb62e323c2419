"""Node feature vectors: a built-in hashed TF-IDF embedder and an external vector loader."""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

MAX_DIM = 1024
_TOKEN = re.compile(r"[^\W_]+")


class EmbeddingError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _bucket(token: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16, key=seed.to_bytes(8, "little", signed=True)).digest()
    bucket = int.from_bytes(digest[:8], "little") % dim
    sign = 1.0 if digest[8] & 1 else -1.0
    return bucket, sign


def embed_hashed_tfidf(texts: Sequence[str], dim: int = 256, seed: int = 0, normalize: bool = True) -> np.ndarray:
    """Signed feature hashing of tf-idf weights; one row per text.

    ``idf = ln((1 + N) / (1 + df)) + 1`` over this batch. Rows are L2-normalized
    unless all zero.
    """
    if not 1 <= dim <= MAX_DIM:
        raise ConfigError(f"embedding dim must be in [1, {MAX_DIM}], got {dim}")
    counts = [Counter(tokenize(t)) for t in texts]
    df: Counter[str] = Counter()
    for c in counts:
        df.update(c.keys())
    n_docs = len(texts)
    idf = {tok: math.log((1 + n_docs) / (1 + d)) + 1.0 for tok, d in df.items()}
    cache: dict[str, tuple[int, float]] = {}

    out = np.zeros((n_docs, dim))
    for row, c in enumerate(counts):
        for tok in sorted(c):
            if tok not in cache:
                cache[tok] = _bucket(tok, dim, seed)
            bucket, sign = cache[tok]
            out[row, bucket] += sign * c[tok] * idf[tok]
        if normalize:
            norm = math.sqrt(math.fsum(v * v for v in out[row]))
            if norm > 0:
                out[row] /= norm
    return out


class EmbeddingTable:
    """Vectors keyed by ``(paper_id, node_index)``; all share one dimension."""

    def __init__(self, dim: int, vectors: dict[tuple[str, int], np.ndarray] | None = None):
        self.dim = dim
        self.vectors = vectors or {}

    def __len__(self) -> int:
        return len(self.vectors)

    def __getitem__(self, key: tuple[str, int]) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise KeyError(f"no embedding for paper {key[0]!r} node {key[1]}") from None

    def matrix(self, paper_id: str, n_nodes: int) -> np.ndarray:
        return np.stack([self[(paper_id, i)] for i in range(n_nodes)]) if n_nodes else np.zeros((0, self.dim))


def load_external_embeddings(path: str | Path, expected_dim: int) -> EmbeddingTable:
    """Read JSON Lines ``{"paper_id", "node_index", "vector"}`` into a table."""
    if not 1 <= expected_dim <= MAX_DIM:
        raise ConfigError(f"embedding dim must be in [1, {MAX_DIM}], got {expected_dim}")
    table = EmbeddingTable(expected_dim)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (str(rec["paper_id"]), int(rec["node_index"]))
                vec = np.asarray(rec["vector"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise EmbeddingError(f"{path}:{lineno}: bad embedding record ({exc})") from exc
            if vec.ndim != 1 or vec.shape[0] != expected_dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: {key} has dim {vec.shape[-1] if vec.ndim else 0}, expected {expected_dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"{path}:{lineno}: {key} contains a non-finite value")
            if key in table.vectors:
                raise EmbeddingError(f"{path}:{lineno}: duplicate key {key}")
            table.vectors[key] = vec
    return table
