"""Embedding backends and the EVT1 binary token-vector format.

Two backends satisfy the same duck-typed contract (``dim``, ``backend_id``,
``embed(tokens)``, ``embed_many(token_lists)``):

* ``StaticTableBackend`` - an in-memory token -> vector table, optionally
  loaded from an EVT1 file. Tokens missing from the table fall back to a
  deterministic hash-seeded unit vector, so embedding never fails.
* ``HttpEmbeddingBackend`` - a client for a remote service exposing
  ``POST /embed`` with body ``{"tokens": [...]}`` and response
  ``{"dim": int, "vectors": [[...]]}``.

All embedding rows are L2-normalized in float64 and then quantized through
float32. The float64 matrices handed to scorers therefore contain exactly
the values that the float32 on-disk formats store, which makes cache hits
bit-identical to fresh computation.
"""
from __future__ import annotations

import hashlib
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Mapping, Sequence

import numpy as np
import requests

from .errors import ConfigError, TransportError

EVT_MAGIC = b"EVT1"
_HEADER = struct.Struct("<4sIQ")
_TOKEN_LEN = struct.Struct("<H")


def hashed_unit_vector(token: str, dim: int) -> np.ndarray:
    """Deterministic fallback embedding for out-of-table tokens.

    The first 8 bytes of sha256(token), read little-endian, seed numpy's
    default PCG64 generator; the vector is a standard-normal draw of length
    ``dim``, L2-normalized and quantized through float32 like every other
    embedding row. Documented so independent code can reproduce it.
    """
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    vec = vec / np.linalg.norm(vec)
    return vec.astype(np.float32).astype(np.float64)


def quantize_unit(vec: np.ndarray) -> np.ndarray:
    """Normalize to unit L2 norm, then round-trip through float32.

    Returns a float64 vector whose components are exactly representable in
    float32, so writing it to disk as f32 and reading it back is lossless.
    """
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return (vec / norm).astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# EVT1 file format
# ---------------------------------------------------------------------------

def encode_embedding_table(dim: int, records: Iterable[tuple[str, np.ndarray]]) -> bytes:
    """Encode ``(token, vector)`` records into EVT1 bytes.

    Layout: magic ``EVT1``, dim u32-LE, count u64-LE, then per record a
    u16-LE token byte length, the UTF-8 token bytes, and dim f32-LE
    components. Record order (including duplicate tokens) is preserved.
    """
    records = list(records)
    parts = [_HEADER.pack(EVT_MAGIC, dim, len(records))]
    for token, vec in records:
        token_b = token.encode("utf-8")
        if len(token_b) > 0xFFFF:
            raise ValueError(f"token too long for EVT1: {len(token_b)} bytes")
        vec = np.asarray(vec)
        if vec.shape != (dim,):
            raise ValueError(f"vector shape {vec.shape} does not match dim {dim}")
        parts.append(_TOKEN_LEN.pack(len(token_b)))
        parts.append(token_b)
        parts.append(vec.astype("<f4").tobytes())
    return b"".join(parts)


def decode_embedding_table(data: bytes, origin: str = "<bytes>") -> tuple[int, list[tuple[str, np.ndarray]]]:
    """Decode EVT1 bytes; returns (dim, [(token, float32 vector), ...])."""
    if len(data) < _HEADER.size:
        raise ValueError(f"{origin}: truncated EVT1 header")
    magic, dim, count = _HEADER.unpack_from(data, 0)
    if magic != EVT_MAGIC:
        raise ValueError(f"{origin}: bad magic {magic!r}, expected {EVT_MAGIC!r}")
    vec_bytes = 4 * dim
    offset = _HEADER.size
    records: list[tuple[str, np.ndarray]] = []
    for _ in range(count):
        if offset + _TOKEN_LEN.size > len(data):
            raise ValueError(f"{origin}: truncated EVT1 record")
        (token_len,) = _TOKEN_LEN.unpack_from(data, offset)
        offset += _TOKEN_LEN.size
        end = offset + token_len + vec_bytes
        if end > len(data):
            raise ValueError(f"{origin}: truncated EVT1 record")
        token = data[offset : offset + token_len].decode("utf-8")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset + token_len).copy()
        offset = end
        records.append((token, vec))
    if offset != len(data):
        raise ValueError(f"{origin}: trailing bytes after {count} records")
    return dim, records


def write_embedding_table(path, dim: int, records: Iterable[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_embedding_table(dim, records))


def read_embedding_table(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_embedding_table(data, origin=str(path))


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class StaticTableBackend:
    """Context-free embedding backend over a fixed token -> vector table.

    Table rows are L2-normalized on load. Unknown tokens map to
    :func:`hashed_unit_vector` output, memoized per token. An empty table
    (``StaticTableBackend.hashed(dim)``) is a valid backend where every
    token takes the hashed fallback.
    """

    def __init__(self, table: Mapping[str, np.ndarray], dim: int, source: str = "inline"):
        if dim <= 0:
            raise ConfigError(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}
        for token, vec in table.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise ConfigError(
                    f"table row for {token!r} has shape {vec.shape}, expected ({dim},)"
                )
            self._vectors[token] = quantize_unit(vec)
        self._table_tokens = frozenset(self._vectors)
        self._source = source

    @property
    def backend_id(self) -> str:
        return f"static:{self._source}:{self.dim}"

    @classmethod
    def hashed(cls, dim: int) -> "StaticTableBackend":
        """Backend with an empty table: every token gets the hashed fallback."""
        return cls({}, dim, source="hashed")

    @classmethod
    def from_file(cls, path) -> "StaticTableBackend":
        dim, records = read_embedding_table(path)
        table: dict[str, np.ndarray] = {}
        for token, vec in records:
            if token in table:
                raise ValueError(f"{path}: duplicate token {token!r} in table")
            table[token] = vec
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
        return cls(table, dim, source=digest.hexdigest()[:16])

    def _vector(self, token: str) -> np.ndarray:
        vec = self._vectors.get(token)
        if vec is None:
            vec = hashed_unit_vector(token, self.dim)
            self._vectors[token] = vec
        return vec

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack([self._vector(t) for t in tokens])

    def embed_many(self, token_lists: Sequence[Sequence[str]]) -> list[np.ndarray]:
        return [self.embed(tokens) for tokens in token_lists]


class HttpEmbeddingBackend:
    """Client for a remote embedding service.

    Requests go to ``<base_url>/embed`` as ``{"tokens": [...]}``; the service
    answers ``{"dim": int, "vectors": [[...]]}``. Connection failures and
    5xx responses are retried ``retries`` times with linear backoff; any
    other non-200 response raises ``TransportError`` immediately. A response
    dim different from the configured one is a fatal ``ConfigError``.
    ``embed_many`` issues requests from a bounded thread pool.
    """

    def __init__(
        self,
        base_url: str,
        dim: int,
        parallelism: int = 4,
        timeout: float = 10.0,
        retries: int = 3,
        backoff: float = 0.2,
    ):
        if dim <= 0:
            raise ConfigError(f"embedding dim must be positive, got {dim}")
        if parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {parallelism}")
        self.dim = dim
        self.base_url = base_url.rstrip("/")
        self.parallelism = parallelism
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._local = threading.local()

    @property
    def backend_id(self) -> str:
        return f"http:{self.base_url}:{self.dim}"

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _post(self, tokens: Sequence[str]) -> dict:
        url = self.base_url + "/embed"
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * attempt)
            try:
                resp = self._session().post(
                    url, json={"tokens": list(tokens)}, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 200:
                return resp.json()
            last_error = TransportError(
                f"embedding service returned HTTP {resp.status_code}: {resp.text[:200]}"
            )
            if resp.status_code < 500:
                break
        raise TransportError(f"embedding request to {url} failed: {last_error}")

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim), dtype=np.float64)
        body = self._post(tokens)
        if not isinstance(body, dict) or "dim" not in body or "vectors" not in body:
            raise TransportError("embedding service response missing dim/vectors")
        if int(body["dim"]) != self.dim:
            raise ConfigError(
                f"embedding service dim {body['dim']} does not match configured {self.dim}"
            )
        vectors = body["vectors"]
        if len(vectors) != len(tokens):
            raise TransportError(
                f"embedding service returned {len(vectors)} vectors for {len(tokens)} tokens"
            )
        return np.stack([quantize_unit(np.asarray(v, dtype=np.float64)) for v in vectors])

    def embed_many(self, token_lists: Sequence[Sequence[str]]) -> list[np.ndarray]:
        if len(token_lists) <= 1 or self.parallelism == 1:
            return [self.embed(tokens) for tokens in token_lists]
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(self.embed, token_lists))


def embed(backend, tokens: Sequence[str]) -> np.ndarray:
    """One unit-norm row per token, deterministic for identical input."""
    return backend.embed(tokens)
