"""Embedding provider port: a deterministic in-process mock and an HTTP client.

The wire contract for the HTTP provider: POST ``{"model": ..., "input":
[texts]}`` to the endpoint; response ``{"data": [{"embedding": [...]}, ...]}``
in input order. Batches may be issued concurrently up to ``max_in_flight``;
results are reassembled in input order.
"""

from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ProviderContractViolation, RetryableProviderError


class EmbeddingProvider(Protocol):
    """Anything that maps a list of texts to fixed-dimension vectors."""

    dimension: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def _check_batch(vectors: list[np.ndarray], n_texts: int, dimension: int) -> None:
    if len(vectors) != n_texts:
        raise ProviderContractViolation(
            f"provider returned {len(vectors)} vectors for {n_texts} texts"
        )
    for v in vectors:
        if v.shape != (dimension,):
            raise ProviderContractViolation(
                f"provider returned dimension {v.shape} != ({dimension},)"
            )
        if not np.all(np.isfinite(v)):
            raise ProviderContractViolation("provider returned non-finite values")


class MockEmbedder:
    """Seeded hash-to-vector embedder: deterministic, offline, unit-norm.

    Identical texts always map to identical vectors, so a query equal to an
    indexed text scores cosine 1.0 against it. Instruction prefixes are not
    treated specially.
    """

    def __init__(self, dimension: int = 32, seed: int = 0):
        self.dimension = dimension
        self.seed = seed

    def _vector_for(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "big")))
        v = rng.standard_normal(self.dimension)
        norm = np.linalg.norm(v)
        if norm == 0.0:  # astronomically unlikely; keep the contract total
            v[0] = 1.0
            norm = 1.0
        return v / norm

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        vectors = [self._vector_for(t) for t in texts]
        _check_batch(vectors, len(texts), self.dimension)
        return vectors


@dataclass
class HttpEmbedderConfig:
    endpoint: str
    model: str
    dimension: int
    auth_token_env: str | None = None
    batch_size: int = 64
    max_in_flight: int = 4
    max_attempts: int = 3
    timeout: float = 60.0
    retry_backoff: float = 1.0


class HttpEmbedder:
    """HTTP embedding client with per-batch retries and ordered reassembly."""

    def __init__(self, config: HttpEmbedderConfig):
        self.config = config
        self.dimension = config.dimension

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token_env:
            token = os.environ.get(self.config.auth_token_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        import requests

        last_error: Exception | None = None
        for attempt in range(1, self.config.max_attempts + 1):
            try:
                response = requests.post(
                    self.config.endpoint,
                    json={"model": self.config.model, "input": list(texts)},
                    headers=self._headers(),
                    timeout=self.config.timeout,
                )
                response.raise_for_status()
                payload = response.json()
                vectors = [np.asarray(item["embedding"], dtype=np.float64)
                           for item in payload["data"]]
                _check_batch(vectors, len(texts), self.dimension)
                return vectors
            except ProviderContractViolation:
                raise
            except Exception as exc:  # transport / HTTP / payload shape
                last_error = exc
                if attempt < self.config.max_attempts:
                    time.sleep(self.config.retry_backoff * attempt)
        raise RetryableProviderError(
            f"embedding request failed: {last_error}",
            attempts=self.config.max_attempts,
        )

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        size = self.config.batch_size
        batches = [texts[i:i + size] for i in range(0, len(texts), size)]
        if len(batches) == 1:
            return self._post_batch(batches[0])
        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            results = list(pool.map(self._post_batch, batches))
        return [v for batch in results for v in batch]
