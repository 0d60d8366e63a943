"""Static word vectors for node and question features.

Without a vector file every token gets a deterministic pseudo-random vector
derived from a hash of its lowercase form, so runs are reproducible across
machines and processes.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

__all__ = ["EmbeddingProvider", "HashEmbeddings", "KeyedEmbeddings", "load_word_vectors"]


class EmbeddingProvider:
    """Maps tokens to ``dim``-sized float64 vectors."""

    dim: int

    def vector(self, token: str) -> np.ndarray:
        raise NotImplementedError

    def mean(self, tokens: Iterable[str]) -> np.ndarray:
        vecs = [self.vector(t) for t in tokens]
        if not vecs:
            return np.zeros(self.dim)
        return np.mean(vecs, axis=0)

    def matrix(self, tokens: Iterable[str]) -> np.ndarray:
        vecs = [self.vector(t) for t in tokens]
        return np.stack(vecs) if vecs else np.zeros((0, self.dim))


class HashEmbeddings(EmbeddingProvider):
    """Unit-variance Gaussian vectors seeded by a BLAKE2 hash of the token."""

    def __init__(self, dim: int = 300, salt: str = "", scale: float | None = None):
        self.dim = dim
        self.salt = salt
        self.scale = 1.0 / np.sqrt(dim) if scale is None else scale
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, token: str) -> np.ndarray:
        key = token.lower()
        vec = self._cache.get(key)
        if vec is None:
            digest = hashlib.blake2b(f"{self.salt}\x00{key}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim) * self.scale
            vec.flags.writeable = False
            self._cache[key] = vec
        return vec


class KeyedEmbeddings(EmbeddingProvider):
    """Lookup table with a hash fallback for out-of-vocabulary tokens.

    Exact-case lookup is tried first, then lowercase.
    """

    def __init__(self, vectors: Mapping[str, np.ndarray], dim: int, fallback: EmbeddingProvider | None = None):
        self.dim = dim
        self.vectors = dict(vectors)
        self.fallback = fallback or HashEmbeddings(dim)
        if self.fallback.dim != dim:
            raise ValueError("fallback embedding width differs")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors or token.lower() in self.vectors

    def vector(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token)
        if vec is None:
            vec = self.vectors.get(token.lower())
        if vec is None:
            return self.fallback.vector(token)
        return vec


def load_word_vectors(path: str | Path, dim: int | None = None, vocab: Iterable[str] | None = None) -> KeyedEmbeddings:
    """Read a GloVe/word2vec text file: a token followed by ``dim`` floats per line.

    An optional ``"<count> <dim>"`` header line is skipped.  Tokens containing
    spaces (present in some GloVe releases) are handled by taking the last
    ``dim`` fields as the vector.  ``vocab`` restricts which tokens are kept.
    """
    keep = None if vocab is None else set(vocab) | {t.lower() for t in vocab}
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh):
            parts = line.rstrip("\n").rstrip().split(" ")
            if lineno == 0 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = dim or int(parts[1])
                continue
            if len(parts) < 2:
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) < dim + 1:
                logger.warning("%s:%d: short vector line skipped", path, lineno + 1)
                continue
            token = " ".join(parts[: len(parts) - dim])
            if keep is not None and token not in keep:
                continue
            vectors[token] = np.asarray(parts[len(parts) - dim:], dtype=np.float64)
    if dim is None:
        raise ValueError(f"{path}: no vectors found")
    logger.info("loaded %d vectors of width %d from %s", len(vectors), dim, path)
    return KeyedEmbeddings(vectors, dim)
