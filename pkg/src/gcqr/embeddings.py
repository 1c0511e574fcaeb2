"""Text embedding providers and cosine similarity.

Two providers sit behind one interface: a deterministic hashed character
3-gram embedder for offline runs and CI, and an HTTP client for real
embedding services. Each stage of the pipeline binds its own provider so
no single model biases every similarity decision.
"""

from __future__ import annotations

import hashlib
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import requests

API_KEY_ENV = "GCQR_EMBED_API_KEY"

MIN_DIMENSION = 8
DEFAULT_BATCH_SIZE = 64
DEFAULT_MAX_IN_FLIGHT = 4
DEFAULT_MAX_RETRIES = 3

_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class EmbeddingError(RuntimeError):
    """Base class for embedding provider failures."""


class EmbeddingServiceError(EmbeddingError):
    """HTTP or network failure talking to an embedding service."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class EmbeddingProtocolError(EmbeddingError):
    """The service answered, but the payload violates the embed protocol."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    provider_id: str

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EmbedderSpec:
    """Declarative description of an embedding provider."""

    kind: str
    dimension: int | None = None
    endpoint: str | None = None
    model_name: str | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind == "deterministic":
            if self.dimension is None or self.seed is None:
                raise ValueError("deterministic embedder requires dimension and seed")
            if self.dimension < MIN_DIMENSION:
                raise ValueError(f"dimension must be >= {MIN_DIMENSION}")
        elif self.kind == "http":
            if not self.endpoint:
                raise ValueError("http embedder requires an endpoint")
        else:
            raise ValueError(f"unknown embedder kind: {self.kind!r}")


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1]."""
    if u.dimension != v.dimension:
        raise ValueError(
            f"dimension mismatch: {u.dimension} vs {v.dimension}"
        )
    dot = 0.0
    nu = 0.0
    nv = 0.0
    for a, b in zip(u.values, v.values):
        dot += a * b
        nu += a * a
        nv += b * b
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    cos = dot / (math.sqrt(nu) * math.sqrt(nv))
    return max(-1.0, min(1.0, cos))


class Embedder:
    """Base provider: input validation plus a per-run memo keyed by text.

    Subclasses implement ``_embed_uncached``. Providers are stateless apart
    from the memo, which is guarded by a lock so concurrent embed calls are
    safe.
    """

    provider_id: str = "base"

    def __init__(self):
        self._memo: dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("texts must be non-empty")
        for i, text in enumerate(texts):
            if not text or not text.strip():
                raise ValueError(f"texts[{i}] is empty")
        with self._lock:
            misses = [t for t in dict.fromkeys(texts) if t not in self._memo]
        if misses:
            fresh = self._embed_uncached(misses)
            with self._lock:
                self._memo.update(zip(misses, fresh))
        with self._lock:
            return [self._memo[t] for t in texts]

    def embed_one(self, text: str) -> EmbeddingVector:
        return self.embed([text])[0]

    def _embed_uncached(self, texts: list[str]) -> list[EmbeddingVector]:
        raise NotImplementedError


class DeterministicEmbedder(Embedder):
    """Hashed character-3-gram embeddings, a pure function of (text, dim, seed).

    The lowercased text is decomposed into character 3-grams (the whole text
    when shorter than 3 characters), gram counts are hashed into ``dimension``
    buckets with a seeded stable hash, and the vector is L2-normalized.
    """

    def __init__(self, dimension: int, seed: int):
        super().__init__()
        if dimension < MIN_DIMENSION:
            raise ValueError(f"dimension must be >= {MIN_DIMENSION}")
        self.dimension = dimension
        self.seed = seed
        self.provider_id = f"deterministic:d{dimension}:s{seed}"

    def _embed_uncached(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self._vectorize(text) for text in texts]

    def _vectorize(self, text: str) -> EmbeddingVector:
        buckets = [0.0] * self.dimension
        for gram in char_trigrams(text.lower()):
            buckets[_stable_bucket(gram, self.seed, self.dimension)] += 1.0
        norm = math.sqrt(sum(v * v for v in buckets))
        values = tuple(v / norm for v in buckets)
        return EmbeddingVector(values=values, provider_id=self.provider_id)


def char_trigrams(text: str) -> list[str]:
    """Character 3-grams of ``text``; the text itself when shorter than 3."""
    if len(text) < 3:
        return [text]
    return [text[i : i + 3] for i in range(len(text) - 2)]


def _stable_bucket(gram: str, seed: int, dimension: int) -> int:
    digest = hashlib.blake2b(
        f"{seed}\x1f{gram}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") % dimension


class HttpEmbedder(Embedder):
    """Client for the POST {endpoint}/embed protocol.

    Requests carry ``{"model": ..., "texts": [...]}`` and the response must
    return ``{"vectors": [[...], ...]}`` in request order. Texts are sent in
    batches, with bounded in-flight requests and exponential backoff on
    retryable failures.
    """

    def __init__(
        self,
        endpoint: str,
        model_name: str | None = None,
        dimension: int | None = None,
        batch_size: int = DEFAULT_BATCH_SIZE,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_base: float = 0.5,
        timeout: float = 30.0,
    ):
        super().__init__()
        self.endpoint = endpoint.rstrip("/")
        self.model_name = model_name
        self.dimension = dimension
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.provider_id = f"http:{model_name or self.endpoint}"
        self._response_dimension: int | None = None

    def _embed_uncached(self, texts: list[str]) -> list[EmbeddingVector]:
        batches = [
            texts[i : i + self.batch_size]
            for i in range(0, len(texts), self.batch_size)
        ]
        if len(batches) == 1:
            results = [self._post_batch(batches[0])]
        else:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                results = list(pool.map(self._post_batch, batches))
        vectors: list[EmbeddingVector] = []
        for batch_vectors in results:
            vectors.extend(batch_vectors)
        return vectors

    def _post_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        payload = {"model": self.model_name or "", "texts": texts}
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: EmbeddingServiceError | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = requests.post(
                    f"{self.endpoint}/embed",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = EmbeddingServiceError(f"embed request failed: {exc}")
            else:
                if response.status_code == 200:
                    return self._parse_response(response, len(texts))
                last_error = EmbeddingServiceError(
                    f"embed request returned HTTP {response.status_code}",
                    status=response.status_code,
                )
                if response.status_code not in _RETRYABLE_STATUSES:
                    raise last_error
            if attempt < self.max_retries:
                time.sleep(self.backoff_base * (2**attempt))
        assert last_error is not None
        raise last_error

    def _parse_response(self, response, expected: int) -> list[EmbeddingVector]:
        try:
            body = response.json()
        except ValueError as exc:
            raise EmbeddingProtocolError(f"embed response is not json: {exc}") from exc
        vectors = body.get("vectors") if isinstance(body, dict) else None
        if not isinstance(vectors, list):
            raise EmbeddingProtocolError("embed response missing 'vectors' list")
        if len(vectors) != expected:
            raise EmbeddingProtocolError(
                f"embed response returned {len(vectors)} vectors for {expected} texts"
            )
        out: list[EmbeddingVector] = []
        for row in vectors:
            if not isinstance(row, list) or not all(
                isinstance(x, (int, float)) for x in row
            ):
                raise EmbeddingProtocolError("embed response vector is not numeric")
            if len(row) < MIN_DIMENSION:
                raise EmbeddingProtocolError(
                    f"embed response dimension {len(row)} below minimum {MIN_DIMENSION}"
                )
            if self.dimension is not None and len(row) != self.dimension:
                raise EmbeddingProtocolError(
                    f"embed response dimension {len(row)} != declared {self.dimension}"
                )
            with self._lock:
                if self._response_dimension is None:
                    self._response_dimension = len(row)
                elif len(row) != self._response_dimension:
                    raise EmbeddingProtocolError(
                        f"embed response dimension drifted: {len(row)} after "
                        f"{self._response_dimension}"
                    )
            out.append(
                EmbeddingVector(
                    values=tuple(float(x) for x in row),
                    provider_id=self.provider_id,
                )
            )
        return out


def build_embedder(spec: EmbedderSpec) -> Embedder:
    if spec.kind == "deterministic":
        assert spec.dimension is not None and spec.seed is not None
        return DeterministicEmbedder(dimension=spec.dimension, seed=spec.seed)
    assert spec.endpoint is not None
    return HttpEmbedder(
        endpoint=spec.endpoint,
        model_name=spec.model_name,
        dimension=spec.dimension,
    )


def as_embedder(embedder: Embedder | EmbedderSpec) -> Embedder:
    """Accept either a spec or an already-built provider."""
    if isinstance(embedder, EmbedderSpec):
        return build_embedder(embedder)
    return embedder


def embed(spec: EmbedderSpec | Embedder, texts: list[str]) -> list[EmbeddingVector]:
    """One-shot embedding of a text batch; order is preserved."""
    return as_embedder(spec).embed(texts)
