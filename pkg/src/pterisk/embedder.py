"""Token-level text embeddings, pooling and an on-disk embedding cache.

Two backends are available. ``hash`` is a deterministic offline embedder used
for tests and desk-scale runs: text is lowercased, split on whitespace and
punctuation, prefixed with a ``[CLS]`` marker, and each token is expanded into
``dim`` signed values by :func:`hash_token_vector`. ``remote`` talks to an
embedding service over HTTP::

    POST endpoint  {"texts": [...], "level": "token" | "pooled"}
    200            {"dim": int, "embeddings": [...], "tokens": [[...], ...]?}

Token-level responses carry one ``token_count x dim`` matrix per text; pooled
responses carry one vector per text. ``tokens`` is optional.
"""

from __future__ import annotations

import concurrent.futures
import functools
import hashlib
import json
import logging
import os
import re
import struct
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .serializer import ASPECTS, AspectId, AspectParagraph

log = logging.getLogger(__name__)

CLS_TOKEN = "[CLS]"
POOLED_TOKEN = "[POOLED]"
POOLING_STRATEGIES = ("mean", "cls", "max")
API_KEY_ENV = "PTERISK_EMBED_API_KEY"

_TOKEN_RE = re.compile(r"[^\W_]+")


class BackendError(RuntimeError):
    """Embedding backend failure. ``retryable`` is False for fatal errors."""

    def __init__(self, message, attempts=1, retryable=True):
        super().__init__(message)
        self.attempts = attempts
        self.retryable = retryable


class EmbeddingDimensionError(BackendError):
    def __init__(self, message):
        super().__init__(message, attempts=1, retryable=False)


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    dim: int
    kind: str = "hash"
    endpoint: Optional[str] = None
    max_batch: int = 32
    seed: int = 0
    level: str = "token"
    service_pooling: Optional[str] = None
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.max_batch <= 0:
            raise ValueError("max_batch must be positive")
        if self.kind == "remote":
            if not self.endpoint:
                raise ValueError("remote backend requires an endpoint")
            if self.level not in ("token", "pooled"):
                raise ValueError(f"unknown response level {self.level!r}")
            if self.level == "pooled" and self.service_pooling not in POOLING_STRATEGIES:
                raise ValueError("pooled remote backend must declare service_pooling")
        elif self.kind == "hash":
            if self.endpoint:
                raise ValueError("hash backend takes no endpoint")
            if self.level != "token":
                raise ValueError("hash backend is token-level")
        else:
            raise ValueError(f"unknown backend kind {self.kind!r}")

    @property
    def pooling_strategies(self) -> tuple:
        if self.level == "pooled":
            return (self.service_pooling,)
        return POOLING_STRATEGIES

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class TokenEmbeddingMatrix:
    tokens: tuple
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
            raise ValueError("token matrix must be (token_count >= 1) x (dim >= 1)")
        if len(self.tokens) != vectors.shape[0]:
            raise ValueError("one token string per row required")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("token matrix has non-finite entries")
        vectors.setflags(write=False)
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, TokenEmbeddingMatrix)
            and self.tokens == other.tokens
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass(frozen=True, eq=False)
class PooledEmbedding:
    vector: np.ndarray
    strategy: str
    backend_id: str = ""
    aspect: object = None


def tokenize(text: str) -> list:
    return [CLS_TOKEN] + _TOKEN_RE.findall(text.lower())


@functools.lru_cache(maxsize=200_000)
def _hash_token_vector(token: str, dim: int, seed: int) -> bytes:
    words = []
    block = 0
    data = token.encode("utf-8")
    while len(words) < dim:
        digest = hashlib.blake2b(b"%d:%d:" % (seed, block) + data, digest_size=32).digest()
        words.extend(struct.unpack("<8I", digest))
        block += 1
    values = np.array(words[:dim], dtype=np.float64) / 2.0**31 - 1.0
    return values.astype(np.float32).tobytes()


def hash_token_vector(token: str, dim: int, seed: int = 0) -> np.ndarray:
    """Expand a token into ``dim`` values in [-1, 1].

    Block ``b`` is ``blake2b(f"{seed}:{b}:".encode() + token.encode(), digest_size=32)``,
    read as eight little-endian uint32 words ``u``; each word maps to
    ``u / 2**31 - 1``. Blocks are concatenated and truncated to ``dim``, then
    stored as float32.
    """
    return np.frombuffer(_hash_token_vector(token, dim, seed), dtype=np.float32)


def pool(matrix: TokenEmbeddingMatrix, strategy: str = "mean", backend_id: str = "", aspect=None) -> PooledEmbedding:
    vectors = matrix.vectors
    if strategy == "mean":
        vec = vectors.astype(np.float64).mean(axis=0)
    elif strategy == "cls":
        vec = vectors[0]
    elif strategy == "max":
        vec = vectors.max(axis=0)
    else:
        raise ValueError(f"unknown pooling strategy {strategy!r}")
    vec = np.array(vec, dtype=np.float32)
    vec.setflags(write=False)
    return PooledEmbedding(vector=vec, strategy=strategy, backend_id=backend_id, aspect=aspect)


class HashBackend:
    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor

    def embed_batch(self, texts: Sequence[str]) -> list:
        d = self.descriptor
        out = []
        for text in texts:
            tokens = tokenize(text)
            rows = np.stack([hash_token_vector(t, d.dim, d.seed) for t in tokens])
            out.append(TokenEmbeddingMatrix(tokens=tokens, vectors=rows))
        return out


class RemoteBackend:
    """HTTP client for an embedding service (see module docstring)."""

    def __init__(self, descriptor: BackendDescriptor, session=None, sleep=time.sleep):
        import requests

        self.descriptor = descriptor
        self._requests = requests
        self._session = session or requests.Session()
        self._sleep = sleep

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, texts):
        d = self.descriptor
        body = {"texts": list(texts), "level": d.level}
        attempts = 0
        last = None
        while attempts <= d.retries:
            attempts += 1
            try:
                resp = self._session.post(d.endpoint, json=body, headers=self._headers(), timeout=d.timeout)
            except self._requests.RequestException as exc:
                last = f"transport error: {exc}"
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except ValueError:
                        raise BackendError("embedding service returned invalid JSON", attempts, retryable=False)
                if resp.status_code < 500 and resp.status_code != 429:
                    raise BackendError(f"embedding service rejected request: HTTP {resp.status_code}", attempts, retryable=False)
                last = f"HTTP {resp.status_code}"
            if attempts <= d.retries:
                self._sleep(d.backoff * 2 ** (attempts - 1))
        raise BackendError(f"embedding service unavailable after {attempts} attempts ({last})", attempts)

    def _parse(self, payload, texts):
        d = self.descriptor
        if not isinstance(payload, dict) or "embeddings" not in payload:
            raise BackendError("malformed embedding response", retryable=False)
        if int(payload.get("dim", -1)) != d.dim:
            raise EmbeddingDimensionError(f"service dim {payload.get('dim')} != declared dim {d.dim}")
        embeddings = payload["embeddings"]
        if len(embeddings) != len(texts):
            raise BackendError("embedding count does not match request", retryable=False)
        token_lists = payload.get("tokens")
        out = []
        for i, emb in enumerate(embeddings):
            arr = np.asarray(emb, dtype=np.float32)
            if d.level == "pooled":
                arr = arr.reshape(1, -1)
                tokens = (POOLED_TOKEN,)
            else:
                if arr.ndim != 2:
                    raise BackendError("token-level response must nest one matrix per text", retryable=False)
                tokens = tuple(token_lists[i]) if token_lists else (CLS_TOKEN,) + tuple(f"#{j}" for j in range(1, len(arr)))
            if arr.shape[-1] != d.dim:
                raise EmbeddingDimensionError(f"vector width {arr.shape[-1]} != declared dim {d.dim}")
            out.append(TokenEmbeddingMatrix(tokens=tokens, vectors=arr))
        return out

    def embed_batch(self, texts: Sequence[str]) -> list:
        return self._parse(self._post(texts), texts)


def make_backend(descriptor: BackendDescriptor, **kwargs):
    if descriptor.kind == "hash":
        return HashBackend(descriptor)
    return RemoteBackend(descriptor, **kwargs)


_MAGIC = b"PTEEMB1\n"


class EmbeddingCache:
    """Content-addressed store of token matrices, one binary file per entry.

    File layout: ``PTEEMB1\\n``, a JSON header line (backend_id, dim,
    token_count, dtype, tokens), then ``token_count * dim`` little-endian
    float32 values. Writes go through a temp file and an atomic rename.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(backend_id: str, text: str) -> str:
        return hashlib.sha256(backend_id.encode("utf-8") + b"\x00" + text.encode("utf-8")).hexdigest()

    def path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.bin"

    def lookup(self, backend_id: str, text: str) -> Optional[TokenEmbeddingMatrix]:
        path = self.path(self.key(backend_id, text))
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            self.misses += 1
            return None
        try:
            matrix = self._decode(raw, backend_id)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            log.warning("corrupt cache entry %s treated as miss: %s", path.name, exc)
            self.misses += 1
            return None
        self.hits += 1
        return matrix

    @staticmethod
    def _decode(raw: bytes, backend_id: str) -> TokenEmbeddingMatrix:
        if not raw.startswith(_MAGIC):
            raise ValueError("bad magic")
        end = raw.index(b"\n", len(_MAGIC))
        header = json.loads(raw[len(_MAGIC):end].decode("utf-8"))
        if header["backend_id"] != backend_id or header["dtype"] != "float32-le":
            raise ValueError("header mismatch")
        count, dim = int(header["token_count"]), int(header["dim"])
        payload = raw[end + 1:]
        if len(payload) != count * dim * 4 or len(header["tokens"]) != count:
            raise ValueError("truncated payload")
        vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
        return TokenEmbeddingMatrix(tokens=tuple(header["tokens"]), vectors=vectors)

    def store(self, backend_id: str, text: str, matrix: TokenEmbeddingMatrix):
        header = {
            "backend_id": backend_id,
            "dim": matrix.dim,
            "token_count": len(matrix.tokens),
            "dtype": "float32-le",
            "tokens": list(matrix.tokens),
        }
        blob = _MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + matrix.vectors.astype("<f4").tobytes()
        path = self.path(self.key(backend_id, text))
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(blob)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise

    def __len__(self):
        return sum(1 for _ in self.directory.glob("*/*.bin"))


class Embedder:
    """Backend plus optional cache; turns paragraphs into pooled vectors."""

    def __init__(self, descriptor: BackendDescriptor, cache: Optional[EmbeddingCache] = None, backend=None):
        self.descriptor = descriptor
        self.backend = backend if backend is not None else make_backend(descriptor)
        self.cache = cache
        self._memo = {}

    def embed_texts(self, texts: Sequence[str]) -> list:
        """Token matrices for ``texts``; misses are batched and sent concurrently."""
        d = self.descriptor
        results = {}
        todo = []
        for text in dict.fromkeys(texts):
            if not text:
                raise ValueError("cannot embed empty text")
            if text in self._memo:
                results[text] = self._memo[text]
                continue
            hit = self.cache.lookup(d.backend_id, text) if self.cache is not None else None
            if hit is not None:
                results[text] = hit
            else:
                todo.append(text)
        batches = [todo[i:i + d.max_batch] for i in range(0, len(todo), d.max_batch)]
        if batches:
            workers = max(1, min(d.max_in_flight, len(batches))) if d.kind == "remote" else 1
            if workers == 1:
                computed = [self.backend.embed_batch(b) for b in batches]
            else:
                with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool_:
                    computed = list(pool_.map(self.backend.embed_batch, batches))
            for batch, matrices in zip(batches, computed):
                for text, matrix in zip(batch, matrices):
                    if matrix.dim != d.dim:
                        raise EmbeddingDimensionError(f"backend returned dim {matrix.dim}, declared {d.dim}")
                    results[text] = matrix
            if self.cache is not None:
                for batch, matrices in zip(batches, computed):
                    for text, matrix in zip(batch, matrices):
                        self.cache.store(d.backend_id, text, matrix)
        for text, matrix in results.items():
            self._memo[text] = matrix
        return [results[t] for t in texts]

    def embed_tokens(self, paragraph: AspectParagraph) -> TokenEmbeddingMatrix:
        return self.embed_texts([paragraph.text])[0]

    def check_strategy(self, strategy: str):
        if strategy not in self.descriptor.pooling_strategies:
            raise ValueError(
                f"backend {self.descriptor.backend_id!r} supports pooling {self.descriptor.pooling_strategies}, not {strategy!r}"
            )

    def embed_subject(self, paragraphs: Sequence[AspectParagraph], strategy: str = "mean") -> list:
        if len(paragraphs) != len(ASPECTS) or {AspectId(p.aspect) for p in paragraphs} != set(ASPECTS):
            raise ValueError("embed_subject needs exactly one paragraph per aspect")
        self.check_strategy(strategy)
        ordered = sorted(paragraphs, key=lambda p: ASPECTS.index(AspectId(p.aspect)))
        matrices = self.embed_texts([p.text for p in ordered])
        return [pool(m, strategy, self.descriptor.backend_id, p.aspect) for p, m in zip(ordered, matrices)]

    def pooled_matrix(self, texts: Sequence[str], strategy: str = "mean") -> np.ndarray:
        """Stack pooled vectors for ``texts`` into an ``(n, dim)`` float32 array."""
        self.check_strategy(strategy)
        matrices = self.embed_texts(texts)
        return np.stack([pool(m, strategy).vector for m in matrices]) if matrices else np.zeros((0, self.descriptor.dim), np.float32)


def embed_tokens(backend: BackendDescriptor, paragraph: AspectParagraph, cache: Optional[EmbeddingCache] = None):
    return Embedder(backend, cache).embed_tokens(paragraph)


def embed_subject(backend: BackendDescriptor, subject_paragraphs, strategy="mean", cache: Optional[EmbeddingCache] = None):
    return Embedder(backend, cache).embed_subject(subject_paragraphs, strategy)
