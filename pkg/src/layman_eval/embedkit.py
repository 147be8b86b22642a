"""Embedding providers, cosine similarity, and a persistent vector cache.

Two provider kinds are supported: a deterministic local hashed bag-of-words
embedder for offline/reproducible runs, and a remote HTTP provider speaking
the common embeddings-API shape (POST {model, input: [...]} returning
{data: [{embedding: [...]}, ...]}). ``embed`` routes every lookup through an
optional append-only cache file and returns vectors canonicalized to float32,
so warm and cold cache paths are value-exact.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ProviderError
from .textcore import tokenize

logger = logging.getLogger(__name__)

__all__ = [
    "Vector",
    "EmbeddingProvider",
    "EmbeddingProviderSpec",
    "LocalHashProvider",
    "RemoteHTTPProvider",
    "EmbeddingCache",
    "embed",
    "cosine",
    "local_embed",
    "fnv1a64",
]

ENV_EMBED_URL = "LAYMAN_EVAL_EMBED_URL"
ENV_API_KEY = "LAYMAN_EVAL_API_KEY"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_KEY_SIZE = 16
_DIM_STRUCT = struct.Struct("<I")


@dataclass(frozen=True)
class Vector:
    """A fixed-dimension embedding tagged with the provider that made it."""

    provider_id: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("vector values must be a non-empty 1-D array")
        if not np.all(np.isfinite(values)):
            raise ValueError("vector values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash (fixed constants; identical on every platform)."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def local_embed(text: str, dim: int = 256, provider_id: str | None = None) -> Vector:
    """Deterministic hashed bag-of-words embedding.

    Each token hashes to a slot (hash mod dim) with a sign taken from bit 63;
    occurrence counts accumulate and the vector is L2-normalized. Texts with
    no tokens raise a degenerate-vector error.
    """
    if dim < 16:
        raise ValueError(f"dim must be >= 16, got {dim}")
    tokens = tokenize(text).tokens
    if not tokens:
        raise ValueError(f"degenerate vector: no tokens in {text!r}")
    values = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        h = fnv1a64(token.encode("utf-8"))
        sign = -1.0 if (h >> 63) & 1 else 1.0
        values[h % dim] += sign
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise ValueError(f"degenerate vector: sign cancellation in {text!r}")
    values /= norm
    return Vector(provider_id=provider_id or f"local-fnv1a-{dim}", values=values)


def cosine(a: Vector, b: Vector) -> float:
    """Cosine similarity of two vectors from the same provider, in [-1, 1]."""
    if a.provider_id != b.provider_id:
        raise ValueError(
            f"provider mismatch: {a.provider_id!r} vs {b.provider_id!r}"
        )
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    av = a.values.astype(np.float64, copy=False)
    bv = b.values.astype(np.float64, copy=False)
    norm_a = float(np.linalg.norm(av))
    norm_b = float(np.linalg.norm(bv))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("degenerate vector: zero norm")
    value = float(np.dot(av, bv) / (norm_a * norm_b))
    return max(-1.0, min(1.0, value))


class EmbeddingProvider:
    """Common surface for embedding backends.

    Subclasses set ``provider_id``, ``dim``, ``max_batch`` and implement
    ``fetch(texts)`` returning one float list per input text. Instances are
    stateless with respect to requests and shareable across threads.
    """

    provider_id: str
    dim: int
    max_batch: int
    instruction_prefix: str = ""

    def fetch(self, texts: list[str]) -> list[list[float]]:
        raise NotImplementedError

    def cache_key(self, text: str) -> bytes:
        normalized = " ".join(text.split())
        payload = "\x1f".join((self.provider_id, self.instruction_prefix, normalized))
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=_KEY_SIZE).digest()


class LocalHashProvider(EmbeddingProvider):
    """Offline deterministic provider backed by ``local_embed``."""

    def __init__(self, dim: int = 256, max_batch: int = 1024):
        self.dim = dim
        self.max_batch = max_batch
        self.provider_id = f"local-fnv1a-{dim}"

    def fetch(self, texts: list[str]) -> list[list[float]]:
        return [local_embed(t, self.dim, self.provider_id).values.tolist() for t in texts]


class RemoteHTTPProvider(EmbeddingProvider):
    """Remote embeddings endpoint with exponential-backoff retries.

    Failures are retried with delays 1s, 2s, 4s, 8s between the five total
    attempts before a provider-unavailable error is raised. ``post`` and
    ``sleep`` are injectable for testing.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str = "default",
        dim: int = 1024,
        max_batch: int = 50,
        api_key: str | None = None,
        instruction_prefix: str = "",
        provider_id: str | None = None,
        post=None,
        sleep=time.sleep,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
    ):
        endpoint = endpoint or os.environ.get(ENV_EMBED_URL)
        if not endpoint:
            raise ValueError(f"remote embedding endpoint not configured (set {ENV_EMBED_URL})")
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.max_batch = max_batch
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self.instruction_prefix = instruction_prefix
        self.provider_id = provider_id or f"remote-{model}"
        if post is None:
            import requests

            post = requests.post
        self._post = post
        self._sleep = sleep
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base

    def fetch(self, texts: list[str]) -> list[list[float]]:
        payload = {
            "model": self.model,
            "input": [self.instruction_prefix + t for t in texts],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                response = self._post(self.endpoint, json=payload, headers=headers, timeout=60)
                response.raise_for_status()
                body = response.json()
                vectors = [item["embedding"] for item in body["data"]]
            except Exception as exc:  # noqa: BLE001 - every failure is retriable
                last_error = exc
                logger.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if len(vectors) != len(texts):
                raise ProviderError(
                    f"provider returned {len(vectors)} vectors for {len(texts)} inputs"
                )
            for vec in vectors:
                if len(vec) != self.dim:
                    raise ProviderError(f"dimension mismatch: expected {self.dim}, got {len(vec)}")
            return vectors
        raise ProviderError(f"provider unavailable after {self.max_attempts} attempts: {last_error}")


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    """Declarative provider selection, resolvable from config/flags."""

    kind: str = "deterministic-local"
    provider_id: str | None = None
    dim: int = 256
    max_batch: int = 50
    endpoint: str | None = None
    model: str = "default"
    api_key: str | None = None
    instruction_prefix: str = ""

    def build(self) -> EmbeddingProvider:
        if self.kind == "deterministic-local":
            return LocalHashProvider(dim=self.dim, max_batch=self.max_batch)
        if self.kind == "remote-http":
            return RemoteHTTPProvider(
                endpoint=self.endpoint,
                model=self.model,
                dim=self.dim,
                max_batch=self.max_batch,
                api_key=self.api_key,
                instruction_prefix=self.instruction_prefix,
                provider_id=self.provider_id,
            )
        raise ValueError(f"unknown embedding provider kind: {self.kind!r}")


class EmbeddingCache:
    """Append-only on-disk vector cache.

    Record layout: 16-byte key, 4-byte little-endian dimension, then that many
    little-endian float32 values. The in-memory index is rebuilt on open;
    a corrupt trailing record (torn write) is truncated with a warning. Later
    records for the same key win. Writes are serialized through one lock.
    """

    def __init__(self, path: str):
        self.path = str(path)
        self._lock = threading.Lock()
        self._index: dict[bytes, np.ndarray] = {}
        self._load()

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        good = 0
        with open(self.path, "rb") as fh:
            data = fh.read()
        offset = 0
        while offset < len(data):
            header_end = offset + _KEY_SIZE + _DIM_STRUCT.size
            if header_end > len(data):
                break
            key = data[offset : offset + _KEY_SIZE]
            (dim,) = _DIM_STRUCT.unpack_from(data, offset + _KEY_SIZE)
            record_end = header_end + 4 * dim
            if dim == 0 or record_end > len(data):
                break
            values = np.frombuffer(data[header_end:record_end], dtype="<f4").copy()
            self._index[key] = values
            offset = record_end
            good += 1
        if offset != len(data):
            logger.warning(
                "truncating corrupt trailing record in cache %s (%d bytes dropped)",
                self.path,
                len(data) - offset,
            )
            with open(self.path, "r+b") as fh:
                fh.truncate(offset)

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: bytes) -> np.ndarray | None:
        return self._index.get(key)

    def put(self, key: bytes, values: np.ndarray) -> None:
        values = np.ascontiguousarray(values, dtype="<f4")
        record = key + _DIM_STRUCT.pack(values.size) + values.tobytes()
        with self._lock:
            with open(self.path, "ab") as fh:
                fh.write(record)
                fh.flush()
            self._index[key] = values


def embed(
    texts: list[str],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> list[Vector]:
    """Embed texts through the cache, fetching misses in provider-size batches.

    Output order matches input order. All values round-trip through float32
    (the cache storage type), so results are identical whether they were
    fetched or replayed from the cache.
    """
    for text in texts:
        if not isinstance(text, str) or not text:
            raise ValueError("texts must be non-empty strings")

    keys = [provider.cache_key(t) for t in texts]
    resolved: dict[bytes, np.ndarray] = {}
    fetch_order: list[int] = []
    for i, key in enumerate(keys):
        if key in resolved:
            continue
        hit = cache.get(key) if cache is not None else None
        if hit is not None and hit.size == provider.dim:
            resolved[key] = hit
        else:
            resolved[key] = None  # placeholder marks the key as scheduled
            fetch_order.append(i)
    for start in range(0, len(fetch_order), provider.max_batch):
        chunk = fetch_order[start : start + provider.max_batch]
        fetched = provider.fetch([texts[i] for i in chunk])
        for i, values in zip(chunk, fetched):
            arr = np.asarray(values, dtype="<f4")
            if arr.size != provider.dim:
                raise ProviderError(
                    f"dimension mismatch: expected {provider.dim}, got {arr.size}"
                )
            if cache is not None:
                cache.put(keys[i], arr)
            resolved[keys[i]] = arr

    return [
        Vector(provider_id=provider.provider_id, values=resolved[key].astype(np.float64))
        for key in keys
    ]
