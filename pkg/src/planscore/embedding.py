"""Text embedding providers for the text similarity index."""

from __future__ import annotations

import hashlib
import math
import re
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import DimensionMismatch, EmbeddingProviderFailure

DEFAULT_DIMENSION = 256

_TOKEN_SPLIT = re.compile(r"[\W_]+")


class Embedder(Protocol):
    provider_id: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _hash64(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def fallback_embed(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    """Signed feature-hashing bag of tokens, L2-normalized.

    The bucket is the 64-bit token hash modulo ``dimension``; the sign comes
    from the next bit above the bucket. Empty input maps to the zero vector.
    """
    vec = np.zeros(dimension, dtype=np.float64)
    for token in tokenize(text):
        h = _hash64(token)
        bucket = h % dimension
        sign = -1.0 if (h // dimension) & 1 else 1.0
        vec[bucket] += sign
    norm = math.sqrt(math.fsum(v * v for v in vec))
    if norm > 0:
        vec /= norm
    return vec


class HashingEmbedder:
    """Offline deterministic embedder; needs no model files or network."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.provider_id = f"hashing-bow-{dimension}"

    def embed(self, text: str) -> np.ndarray:
        return fallback_embed(text, self.dimension)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.vstack([self.embed(t) for t in texts])


class RemoteEmbedder:
    """Client for an embedding service.

    The service accepts ``POST {"texts": [...]}`` and answers
    ``{"vectors": [[...], ...], "dimension": d}``. The first successful call
    pins the dimension; a later change is reported as a provider failure.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        dimension: int | None = None,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url
        self.timeout = timeout
        self.dimension = dimension
        self.provider_id = f"remote:{base_url}"
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dimension or 0))
        try:
            resp = self._client.post(self.base_url, json={"texts": texts}, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except httpx.TimeoutException as exc:
            raise EmbeddingProviderFailure(f"embedding request timed out: {exc}") from exc
        except (httpx.HTTPError, ValueError) as exc:
            raise EmbeddingProviderFailure(f"embedding request failed: {exc}") from exc

        try:
            vectors = np.asarray(body["vectors"], dtype=np.float64)
            dim = int(body["dimension"])
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbeddingProviderFailure(f"malformed embedding response: {exc}") from exc
        if vectors.ndim != 2 or vectors.shape != (len(texts), dim):
            raise EmbeddingProviderFailure(
                f"expected {len(texts)} vectors of dimension {dim}, got shape {vectors.shape}"
            )
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingProviderFailure("embedding response contains non-finite values")
        if self.dimension is None:
            self.dimension = dim
        elif dim != self.dimension:
            raise EmbeddingProviderFailure(
                f"embedding dimension changed from {self.dimension} to {dim}"
            )
        return vectors

    def close(self) -> None:
        self._client.close()


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0 when either is the zero vector."""
    if len(a) != len(b):
        raise DimensionMismatch(f"cannot compare vectors of length {len(a)} and {len(b)}")
    a = a.tolist() if isinstance(a, np.ndarray) else a
    b = b.tolist() if isinstance(b, np.ndarray) else b
    na2 = math.fsum(x * x for x in a)
    nb2 = math.fsum(y * y for y in b)
    if na2 == 0 or nb2 == 0:
        return 0.0
    # sqrt(na2 * nb2) rather than sqrt(na2) * sqrt(nb2) keeps cos(v, v) == 1 exactly
    c = math.fsum(x * y for x, y in zip(a, b)) / math.sqrt(na2 * nb2)
    return min(1.0, max(-1.0, c))
