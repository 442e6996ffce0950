"""Embedding providers behind one interface.

Vectors are plain ``numpy.ndarray`` rows of a fixed, provider-wide dimension.
The deterministic provider hashes the text into a PRNG seed and draws a unit
vector, which makes every embedding-dependent pipeline fully reproducible
offline.  The remote provider speaks the common JSON-over-HTTP embeddings
shape and can be wrapped with an on-disk cache.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
import time
from collections import deque
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import httpx
import numpy as np

from .errors import DomainError, EmbeddingError

EMBED_ENDPOINT_ENV = "EMBED_ENDPOINT"
EMBED_API_KEY_ENV = "EMBED_API_KEY"
EMBED_MODEL_ENV = "EMBED_MODEL"


@runtime_checkable
class EmbeddingProvider(Protocol):
    kind: str
    dim: int
    batch_size: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding.

    Raises :class:`DomainError` for mismatched dimensions or zero-norm input.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DomainError(f"cosine: dimension mismatch {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine: zero-norm vector")
    return max(-1.0, min(1.0, float(np.dot(u, v)) / (nu * nv)))


def _text_seed(text: str) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class DeterministicEmbeddingProvider:
    """Pure function of the text bytes: hash-seeded pseudo-random unit vector."""

    kind = "deterministic"

    def __init__(self, dim: int = 64, batch_size: int = 64):
        if dim < 2:
            raise DomainError("embedding dim must be >= 2")
        self.dim = dim
        self.batch_size = batch_size

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise DomainError("embed requires at least one text")
        out = []
        for text in texts:
            rng = np.random.default_rng(_text_seed(text))
            vec = rng.standard_normal(self.dim)
            norm = np.linalg.norm(vec)
            if norm < 1e-12:
                vec[0] = 1.0
                norm = 1.0
            out.append(vec / norm)
        return out


class _MinuteBudget:
    """Blocks callers so at most ``limit`` requests start per rolling minute."""

    def __init__(self, limit: int):
        self.limit = limit
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                while self._stamps and now - self._stamps[0] > 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            time.sleep(max(wait, 0.01))


class RemoteEmbeddingProvider:
    """JSON-over-HTTP embeddings endpoint client.

    Request: ``{"input": [...texts], "model": "<model>"}``; response:
    ``{"data": [{"embedding": [...]}, ...]}`` in input order.  Endpoint,
    key and model default to the EMBED_* environment variables.
    """

    kind = "remote"

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        dim: int = 384,
        batch_size: int = 32,
        timeout_s: float = 30.0,
        retries: int = 2,
        max_in_flight: int = 4,
        requests_per_minute: int | None = None,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint or os.environ.get(EMBED_ENDPOINT_ENV, "")
        self.model = model or os.environ.get(EMBED_MODEL_ENV, "")
        self.api_key = api_key if api_key is not None else os.environ.get(EMBED_API_KEY_ENV, "")
        if not self.endpoint:
            raise EmbeddingError(f"no embedding endpoint configured ({EMBED_ENDPOINT_ENV})")
        self.dim = dim
        self.batch_size = batch_size
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout_s)
        self._in_flight = threading.BoundedSemaphore(max_in_flight)
        self._budget = _MinuteBudget(requests_per_minute) if requests_per_minute else None
        self._observed_dim: int | None = None

    def _post_batch(self, batch: Sequence[str]) -> list[np.ndarray]:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"input": list(batch), "model": self.model}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if self._budget is not None:
                self._budget.acquire()
            try:
                with self._in_flight:
                    response = self._client.post(self.endpoint, json=payload, headers=headers)
                response.raise_for_status()
                data = response.json()["data"]
                vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
                if len(vectors) != len(batch):
                    raise EmbeddingError(
                        f"endpoint returned {len(vectors)} vectors for {len(batch)} inputs"
                    )
                dims = {v.shape for v in vectors}
                if len(dims) > 1:
                    raise EmbeddingError(f"mixed dimensions in one batch: {sorted(dims)}")
                if vectors:
                    got_dim = vectors[0].size
                    if self._observed_dim is None:
                        self._observed_dim = got_dim
                    elif got_dim != self._observed_dim:
                        raise EmbeddingError(
                            f"dimension changed across batches: {self._observed_dim} -> {got_dim}"
                        )
                    if not all(np.isfinite(v).all() for v in vectors):
                        raise EmbeddingError("endpoint returned non-finite values")
                return vectors
            except EmbeddingError:
                raise
            except Exception as exc:  # transport / schema errors: retry then fail
                last_error = exc
                if attempt < self.retries:
                    time.sleep(0.2 * (attempt + 1))
        raise EmbeddingError(f"embedding request failed after {self.retries + 1} attempts: {last_error}")

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise DomainError("embed requires at least one text")
        out: list[np.ndarray] = []
        for i in range(0, len(texts), self.batch_size):
            out.extend(self._post_batch(texts[i : i + self.batch_size]))
        return out


class EmbeddingCache:
    """Append-only on-disk vector cache.

    One binary file per (provider kind, model): records of
    ``32-byte blake2b(text) | uint32 dim | dim * float32`` little-endian.
    """

    _HASH_SIZE = 32

    def __init__(self, directory: str | Path, provider_kind: str, model: str):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        stem = hashlib.blake2b(f"{provider_kind}\x00{model}".encode("utf-8"), digest_size=10).hexdigest()
        self.path = self.directory / f"{stem}.vecs"
        self._lock = threading.Lock()
        self._table: dict[bytes, np.ndarray] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        raw = self.path.read_bytes()
        pos = 0
        while pos + self._HASH_SIZE + 4 <= len(raw):
            key = raw[pos : pos + self._HASH_SIZE]
            pos += self._HASH_SIZE
            (dim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            if pos + 4 * dim > len(raw):  # torn tail from an interrupted append
                break
            vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=pos).astype(np.float64)
            pos += 4 * dim
            self._table[key] = vec

    @staticmethod
    def _key(text: str) -> bytes:
        return hashlib.blake2b(text.encode("utf-8"), digest_size=32).digest()

    def get(self, text: str) -> np.ndarray | None:
        return self._table.get(self._key(text))

    def put(self, text: str, vector: np.ndarray) -> None:
        key = self._key(text)
        with self._lock:
            if key in self._table:
                return
            self._table[key] = np.asarray(vector, dtype=np.float64)
            vec32 = np.asarray(vector, dtype="<f4")
            with self.path.open("ab") as fh:
                fh.write(key)
                fh.write(struct.pack("<I", vec32.size))
                fh.write(vec32.tobytes())


class CachedEmbeddingProvider:
    """Wraps any provider with an :class:`EmbeddingCache`."""

    def __init__(self, inner: EmbeddingProvider, cache: EmbeddingCache):
        self.inner = inner
        self.cache = cache
        self.kind = inner.kind
        self.dim = inner.dim
        self.batch_size = inner.batch_size

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray | None] = []
        missing: list[str] = []
        positions: list[int] = []
        for i, text in enumerate(texts):
            hit = self.cache.get(text)
            out.append(hit)
            if hit is None:
                missing.append(text)
                positions.append(i)
        if missing:
            fresh = self.inner.embed(missing)
            for pos, text, vec in zip(positions, missing, fresh):
                self.cache.put(text, vec)
                out[pos] = vec
        return [v for v in out if v is not None]
