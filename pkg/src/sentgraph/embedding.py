"""Embedding providers, similarity kernels and the BM25 neighbor scorer.

Every vector that enters the engine goes through :func:`embed`, which
L2-normalizes it and snaps each component onto a 2**-20 grid. On that grid
each pairwise product is a multiple of 2**-40 and every partial sum of a dot
product stays below 2 in magnitude, so float64 dot products are exact and
independent of summation order. BLAS, the compiled kernels and a plain Python
loop therefore agree bit for bit, which keeps tie-breaking reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import sparse

from sentgraph.errors import DimensionMismatch, ProviderUnavailable, ZeroVector

log = logging.getLogger(__name__)

GRID = float(2**20)
BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN = re.compile(r"\w+", re.UNICODE)

STOPWORDS = frozenset(
    "a an and are as at be but by did do does for from had has have he her his i if in is it its "
    "me my of on or our she so that the their them they this to was we were what when where which "
    "who why will with you your".split()
)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class ScorerKind(str, Enum):
    DENSE = "dense"
    BM25 = "bm25"


@runtime_checkable
class EmbeddingProvider(Protocol):
    name: str
    dim: int

    @property
    def fingerprint(self) -> str: ...

    def embed_raw(self, texts: Sequence[str]) -> np.ndarray: ...


def quantize(vectors: np.ndarray) -> np.ndarray:
    """L2-normalize rows and snap them onto the 2**-20 grid (float32, exact)."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding contains non-finite values")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("cannot normalize a zero vector")
    q = np.round(v / norms[:, None] * GRID) / GRID
    if np.any(~q.any(axis=1)):
        raise ZeroVector("vector vanished after quantization")
    return q.astype(np.float32)


def embed(provider: EmbeddingProvider, texts: Sequence[str]) -> np.ndarray:
    """Embed ``texts`` into an ``(n, dim)`` float32 array of unit vectors."""
    if isinstance(texts, str):
        raise TypeError("embed expects a list of strings")
    if not texts:
        return np.zeros((0, provider.dim), dtype=np.float32)
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise ValueError("cannot embed an empty text")
    raw = np.asarray(provider.embed_raw(list(texts)), dtype=np.float64)
    if raw.ndim != 2 or raw.shape != (len(texts), provider.dim):
        raise DimensionMismatch(f"{provider.name} returned shape {raw.shape}, expected ({len(texts)}, {provider.dim})")
    return quantize(raw)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension {a.shape[0]} != {b.shape[0]}")
    return a, b


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    saa = float(np.dot(a, a))
    sbb = float(np.dot(b, b))
    if saa == 0.0 or sbb == 0.0:
        raise ZeroVector("cosine undefined for a zero vector")
    c = float(np.dot(a, b)) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, c))


def shifted_similarity(q: np.ndarray, u: np.ndarray, epsilon: float = 1.0) -> float:
    return cosine(q, u) + epsilon


def squared_norms(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    return np.einsum("ij,ij->i", v, v)


def cosine_matrix(left: np.ndarray, right: np.ndarray,
                  left_sq: np.ndarray | None = None, right_sq: np.ndarray | None = None) -> np.ndarray:
    """All-pairs cosine between rows of ``left`` and rows of ``right`` (float64)."""
    L = np.asarray(left, dtype=np.float64)
    R = np.asarray(right, dtype=np.float64)
    if L.ndim == 1:
        L = L[None, :]
    if L.shape[1] != R.shape[1]:
        raise DimensionMismatch(f"dimension {L.shape[1]} != {R.shape[1]}")
    ls = squared_norms(L) if left_sq is None else left_sq
    rs = squared_norms(R) if right_sq is None else right_sq
    if np.any(ls == 0) or np.any(rs == 0):
        raise ZeroVector("cosine undefined for a zero vector")
    out = L @ R.T
    out /= np.sqrt(np.multiply.outer(ls, rs))
    np.clip(out, -1.0, 1.0, out=out)
    return out


class HashEmbedder:
    """Deterministic offline provider: hashed bag of words.

    Each non-stopword token is hashed with BLAKE2b (64-bit digest) into one of
    ``dim`` buckets and counted. Texts made only of stopwords fall back to all
    of their tokens, and token-free texts to the raw string.
    """

    def __init__(self, dim: int = 512, use_stopwords: bool = True):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.use_stopwords = use_stopwords
        self.name = "hash"

    @property
    def fingerprint(self) -> str:
        return f"hash-blake2b64:dim={self.dim}:stop={int(self.use_stopwords)}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def tokens(self, text: str) -> list[str]:
        toks = tokenize(text)
        if self.use_stopwords:
            kept = [t for t in toks if t not in STOPWORDS]
            toks = kept or toks
        return toks or [text.strip()]

    def embed_raw(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            for tok, count in Counter(self.tokens(text)).items():
                out[i, self.bucket(tok)] += count
        return out


class HttpEmbedder:
    """OpenAI-compatible ``/embeddings`` endpoint.

    The API key is read from the environment variable named by ``api_key_env``.
    Requests are batched and the number of in-flight requests across threads is
    bounded by ``max_in_flight``.
    """

    def __init__(self, base_url: str, model: str, dim: int, api_key_env: str = "SENTGRAPH_API_KEY",
                 batch_size: int = 64, timeout: float = 60.0, retries: int = 2, max_in_flight: int = 4):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.batch_size = batch_size
        self.timeout = timeout
        self.retries = retries
        self.name = f"http:{model}"
        self._gate = threading.BoundedSemaphore(max_in_flight)

    @property
    def fingerprint(self) -> str:
        return f"http:{self.model}:dim={self.dim}"

    def _post(self, batch: list[str]) -> list[list[float]]:
        body = json.dumps({"model": self.model, "input": batch}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(f"{self.base_url}/embeddings", data=body, headers=headers)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._gate, urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                rows = sorted(payload["data"], key=lambda d: d.get("index", 0))
                return [r["embedding"] for r in rows]
            except (urllib.error.URLError, OSError, KeyError, ValueError) as exc:
                last = exc
                time.sleep(min(2.0**attempt, 8.0))
        raise ProviderUnavailable(f"{self.base_url}: {last}") from last

    def embed_raw(self, texts: Sequence[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for i in range(0, len(texts), self.batch_size):
            rows.extend(self._post(list(texts[i : i + self.batch_size])))
        return np.asarray(rows, dtype=np.float64)


class SentenceTransformerEmbedder:
    """Local sentence-transformers model (optional dependency)."""

    def __init__(self, model: str = "all-MiniLM-L6-v2", device: str | None = None):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover - optional
            raise ProviderUnavailable("sentence-transformers is not installed") from exc
        self._model = SentenceTransformer(model, device=device)
        self._lock = threading.Lock()
        self.model = model
        self.dim = int(self._model.get_sentence_embedding_dimension())
        self.name = f"st:{model}"

    @property
    def fingerprint(self) -> str:
        return f"st:{self.model}:dim={self.dim}"

    def embed_raw(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            return np.asarray(self._model.encode(list(texts), convert_to_numpy=True), dtype=np.float64)


def provider_from_spec(spec: dict) -> EmbeddingProvider:
    """Rebuild a provider from the dict stored in a build manifest."""
    kind = spec.get("kind", "hash")
    if kind == "hash":
        return HashEmbedder(dim=int(spec.get("dim", 512)), use_stopwords=bool(spec.get("stopwords", True)))
    if kind == "http":
        return HttpEmbedder(spec["base_url"], spec["model"], int(spec["dim"]),
                            api_key_env=spec.get("api_key_env", "SENTGRAPH_API_KEY"))
    if kind == "st":
        return SentenceTransformerEmbedder(spec.get("model", "all-MiniLM-L6-v2"))
    raise ValueError(f"unknown embedder kind {kind!r}")


def provider_spec(provider: EmbeddingProvider) -> dict:
    if isinstance(provider, HashEmbedder):
        return {"kind": "hash", "dim": provider.dim, "stopwords": provider.use_stopwords}
    if isinstance(provider, HttpEmbedder):
        return {"kind": "http", "base_url": provider.base_url, "model": provider.model,
                "dim": provider.dim, "api_key_env": provider.api_key_env}
    if isinstance(provider, SentenceTransformerEmbedder):
        return {"kind": "st", "model": provider.model}
    return {"kind": "custom", "name": provider.name, "dim": provider.dim}


@dataclass
class BM25Index:
    """Okapi BM25 over a fixed document list.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); each distinct query term
    contributes idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl)).
    """

    weights: sparse.csr_matrix  # documents x vocabulary, per-term BM25 contribution
    vocabulary: dict[str, int]
    k1: float = BM25_K1
    b: float = BM25_B

    @classmethod
    def fit(cls, documents: Sequence[str], k1: float = BM25_K1, b: float = BM25_B) -> "BM25Index":
        docs = [Counter(tokenize(d)) for d in documents]
        vocab: dict[str, int] = {}
        for d in docs:
            for t in sorted(d):
                vocab.setdefault(t, len(vocab))
        n = len(docs)
        df = np.zeros(len(vocab))
        for d in docs:
            for t in d:
                df[vocab[t]] += 1
        idf = np.log1p((n - df + 0.5) / (df + 0.5))
        lens = np.array([sum(d.values()) for d in docs], dtype=np.float64)
        avgdl = lens.mean() if n and lens.mean() > 0 else 1.0
        rows, cols, vals = [], [], []
        for i, d in enumerate(docs):
            norm = k1 * (1.0 - b + b * lens[i] / avgdl)
            for t, tf in d.items():
                j = vocab[t]
                rows.append(i)
                cols.append(j)
                vals.append(idf[j] * tf * (k1 + 1.0) / (tf + norm))
        w = sparse.csr_matrix((vals, (rows, cols)), shape=(n, len(vocab)), dtype=np.float64)
        return cls(weights=w, vocabulary=vocab, k1=k1, b=b)

    def query_matrix(self, queries: Sequence[str]) -> sparse.csr_matrix:
        rows, cols = [], []
        for i, q in enumerate(queries):
            for t in set(tokenize(q)):
                j = self.vocabulary.get(t)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
        return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)),
                                 shape=(len(queries), len(self.vocabulary)))

    def scores(self, query: str) -> np.ndarray:
        return np.asarray((self.query_matrix([query]) @ self.weights.T).todense()).ravel()
