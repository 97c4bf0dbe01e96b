"""Text embedding providers and cosine distance."""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .llm.providers import ProtocolError, TransportError

DEFAULT_DIM = 256
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray
    zero: bool = False  # input hashed to the zero vector; it carries no direction

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "Embedding":
        raw = np.asarray(raw, dtype=np.float64)
        norm = float(np.linalg.norm(raw))
        vec = np.zeros_like(raw) if norm == 0.0 else raw / norm
        vec.flags.writeable = False
        return cls(vec, zero=norm == 0.0)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> Embedding: ...


class HashingEmbedder:
    """Character trigram counts hashed into ``dim`` signed buckets, L2-normalized."""

    n = 3

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.name = f"hashing-char{self.n}:{dim}"
        self._slots: dict[str, tuple[int, float]] = {}

    def _slot(self, gram: str) -> tuple[int, float]:
        slot = self._slots.get(gram)
        if slot is None:
            h = fnv1a_64(gram.encode("utf-8"))
            slot = (h % self.dim, -1.0 if h >> 63 else 1.0)
            self._slots[gram] = slot
        return slot

    def embed(self, text: str) -> Embedding:
        if not text:
            raise EmbeddingError("empty text")
        grams = [text] if len(text) < self.n else [text[i : i + self.n] for i in range(len(text) - self.n + 1)]
        raw = np.zeros(self.dim)
        for g in grams:
            idx, sign = self._slot(g)
            raw[idx] += sign
        return Embedding.from_raw(raw)


class RemoteEmbedder:
    """OpenAI-compatible ``/embeddings`` client with an in-memory LRU cache."""

    def __init__(
        self,
        endpoint_url: str,
        model_name: str,
        api_key: str | None = None,
        timeout_s: float = 30.0,
        cache_size: int = 4096,
        transport: httpx.BaseTransport | None = None,
    ):
        url = endpoint_url.rstrip("/")
        self._url = url if url.endswith("/embeddings") else url + "/embeddings"
        self.model_name = model_name
        self.name = f"remote:{model_name}@{endpoint_url}"
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout_s, transport=transport)
        self._cache: OrderedDict[str, Embedding] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()
        self.dim = 0  # learned from the first response

    def embed(self, text: str) -> Embedding:
        if not text:
            raise EmbeddingError("empty text")
        with self._lock:
            if text in self._cache:
                self._cache.move_to_end(text)
                return self._cache[text]
        try:
            resp = self._client.post(
                self._url, json={"model": self.model_name, "input": [text]}, headers=self._headers
            )
        except httpx.TransportError as exc:
            raise TransportError(f"{self._url}: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise ProtocolError(f"HTTP {resp.status_code}", status=resp.status_code)
        try:
            vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed embedding response: {exc}") from exc
        if self.dim and vec.shape[0] != self.dim:
            raise ProtocolError(f"embedding dimension changed from {self.dim} to {vec.shape[0]}")
        self.dim = int(vec.shape[0])
        emb = Embedding.from_raw(vec)
        with self._lock:
            self._cache[text] = emb
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return emb


def embed_text(provider: EmbeddingProvider, text: str) -> Embedding:
    return provider.embed(text)


def embed_many(provider: EmbeddingProvider, texts: Sequence[str]) -> np.ndarray:
    """Stack embeddings row-wise into an (n, dim) matrix."""
    return np.vstack([provider.embed(t).vector for t in texts]) if texts else np.zeros((0, provider.dim))


def cosine_distance(a: Embedding | np.ndarray, b: Embedding | np.ndarray) -> float:
    va = a.vector if isinstance(a, Embedding) else np.asarray(a)
    vb = b.vector if isinstance(b, Embedding) else np.asarray(b)
    if va.shape != vb.shape:
        raise EmbeddingError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    return float(np.clip(1.0 - np.dot(va, vb), 0.0, 2.0))
