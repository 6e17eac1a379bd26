"""Per-scope indexes over a benchmark split, and the on-disk store that holds them.

Store layout::

    <store>/manifest.json            build manifest
    <store>/split.json               the split in native form
    <store>/scopes/<name>/tables.sgx
    <store>/scopes/<name>/memories.json
    <store>/scopes/<name>/graph-<granularity>-k<k>-<scorer>.sgg
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from sentgraph.conversation import ConversationCorpus, Granularity
from sentgraph.datasets import BenchmarkSplit, QuestionRecord, load_custom, save_split
from sentgraph.embedding import EmbeddingProvider, ScorerKind, provider_from_spec, provider_spec
from sentgraph.graph import SentenceGraph, build_graph, load_graph, save_graph
from sentgraph.index_store import IndexTables, build_tables, load_tables, save_tables
from sentgraph.llm import LlmClient
from sentgraph.memory import GeneratedMemory, generate_memories
from sentgraph.retrieval import RelevantContext, RetrievalConfig, retrieve

STORE_FORMAT = "sentgraph-store"
STORE_VERSION = 1

GraphKey = tuple[Granularity, int, ScorerKind]


class CachedProvider:
    """Memoises raw embeddings by text, so sessions shared across scopes embed once."""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self.name = inner.name
        self.dim = inner.dim
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def fingerprint(self) -> str:
        return self.inner.fingerprint

    def embed_raw(self, texts: Sequence[str]) -> np.ndarray:
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self._cache))
        if missing:
            rows = np.asarray(self.inner.embed_raw(missing))
            with self._lock:
                for t, row in zip(missing, rows):
                    self._cache[t] = row
        with self._lock:
            return np.stack([self._cache[t] for t in texts]) if texts else np.zeros((0, self.dim))


def graph_key(granularity: Granularity | str, k: int, scorer: ScorerKind | str = ScorerKind.DENSE) -> GraphKey:
    return Granularity.parse(granularity), int(k), ScorerKind(scorer)


@dataclass
class ScopeIndex:
    scope: str
    corpus: ConversationCorpus
    memories: list[GeneratedMemory]
    tables: IndexTables
    graphs: dict[GraphKey, SentenceGraph] = field(default_factory=dict)
    knn_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def graph(self, granularity: Granularity | str, k: int,
              scorer: ScorerKind | str = ScorerKind.DENSE) -> SentenceGraph:
        """The graph for ``(granularity, k, scorer)``, built on first use."""
        key = graph_key(granularity, k, scorer)
        with self._lock:
            if key not in self.graphs:
                self.graphs[key] = build_graph(self.corpus, key[0], self.tables, key[1], key[2], self.knn_cache)
            return self.graphs[key]

    def graph_for(self, config: RetrievalConfig) -> SentenceGraph | None:
        if config.method.value != "sgmem":
            return None
        return self.graph(config.granularity, config.knn_k, config.scorer)


def build_scope(scope: str, corpus: ConversationCorpus, provider: EmbeddingProvider,
                client: LlmClient | None = None, graphs: Iterable[GraphKey] = (),
                workers: int = 4, session_cache: dict | None = None) -> ScopeIndex:
    memories = generate_memories(client, corpus, workers, session_cache=session_cache) if client else []
    index = ScopeIndex(scope, corpus, memories, build_tables(corpus, memories, provider))
    for key in graphs:
        index.graph(*key)
    return index


def _safe_name(scope: str) -> str:
    clean = re.sub(r"[^A-Za-z0-9._-]", "_", scope)
    if clean != scope:
        clean += "-" + hashlib.sha1(scope.encode("utf-8")).hexdigest()[:8]
    return clean


def _graph_file(key: GraphKey) -> str:
    return f"graph-{key[0].value}-k{key[1]}-{key[2].value}.sgg"


def graph_stats(graph: SentenceGraph) -> dict[str, Any]:
    deg = graph.out_degrees()
    return {
        "granularity": graph.granularity.value,
        "k": graph.k,
        "scorer": graph.scorer.value,
        "chunks": len(graph.chunk_ids),
        "sentences": len(graph.sentence_ids),
        "membership_edges": int((graph.sentence_chunk >= 0).sum()),
        "knn_edges": len(graph.knn_edges),
        "max_out_degree": int(deg.max()) if deg.size else 0,
    }


class Engine:
    """A split plus one :class:`ScopeIndex` per scope, optionally backed by a store."""

    def __init__(self, split: BenchmarkSplit, provider: EmbeddingProvider,
                 scopes: dict[str, ScopeIndex] | None = None, store: Path | None = None):
        self.split = split
        self.provider = provider
        self._scopes = dict(scopes or {})
        self.store = store
        self._lock = threading.Lock()

    @classmethod
    def build(cls, split: BenchmarkSplit, provider: EmbeddingProvider, client: LlmClient | None = None,
              graphs: Iterable[GraphKey] = (), workers: int = 4) -> "Engine":
        cached = CachedProvider(provider)
        session_cache: dict = {}
        graphs = list(graphs)
        scopes = {s: build_scope(s, split.scope_corpus(s), cached, client, graphs, workers, session_cache)
                  for s in split.scopes}
        return cls(split, provider, scopes)

    def index(self, scope: str) -> ScopeIndex:
        with self._lock:
            if scope not in self._scopes:
                if self.store is None or scope not in self.split.scopes:
                    raise KeyError(f"unknown scope {scope!r}")
                self._scopes[scope] = self._load_scope(scope)
            return self._scopes[scope]

    def retrieve(self, config: RetrievalConfig, question: QuestionRecord | str,
                 scope: str | None = None, query_date: str | None = None) -> RelevantContext:
        if isinstance(question, QuestionRecord):
            scope, query_date, text = question.scope, question.question_date, question.text
        else:
            text = question
            scope = scope or next(iter(self.split.scopes))
        idx = self.index(scope)
        return retrieve(idx.tables, idx.graph_for(config), config, text,
                        provider=self.provider, query_date=query_date)

    # -- persistence --------------------------------------------------------

    def manifest(self, extra: dict[str, Any] | None = None) -> dict[str, Any]:
        scopes, totals = {}, {}
        keys: set[GraphKey] = set()
        for name in self.split.scopes:
            idx = self.index(name)
            sizes = idx.tables.sizes()
            for t, n in sizes.items():
                totals[t] = totals.get(t, 0) + n
            keys.update(idx.graphs)
            scopes[name] = {
                "dir": _safe_name(name),
                "table_sizes": sizes,
                "graphs": [graph_stats(idx.graphs[k]) for k in sorted(idx.graphs, key=_key_order)],
            }
        return {
            "format": STORE_FORMAT,
            "version": STORE_VERSION,
            "split": self.split.name,
            "questions": len(self.split.questions),
            "question_types": self.split.type_counts(),
            "provider": provider_spec(self.provider),
            "provider_fingerprint": self.provider.fingerprint,
            "table_sizes": totals,
            "graphs": [{"granularity": g.value, "k": k, "scorer": s.value}
                       for g, k, s in sorted(keys, key=_key_order)],
            "scopes": scopes,
            **(extra or {}),
        }

    def save(self, store: str | Path, force: bool = False, extra: dict[str, Any] | None = None) -> dict:
        store = Path(store)
        if (store / "manifest.json").exists() and not force:
            raise FileExistsError(f"{store} already holds a store; pass force to overwrite")
        (store / "scopes").mkdir(parents=True, exist_ok=True)
        save_split(self.split, store / "split.json")
        for name in self.split.scopes:
            idx = self.index(name)
            d = store / "scopes" / _safe_name(name)
            d.mkdir(exist_ok=True)
            for old in d.glob("graph-*.sgg"):
                old.unlink()
            save_tables(idx.tables, d / "tables.sgx")
            (d / "memories.json").write_text(
                json.dumps([m.to_dict() for m in idx.memories], ensure_ascii=False, indent=1), encoding="utf-8")
            for key, g in idx.graphs.items():
                save_graph(g, d / _graph_file(key))
        manifest = self.manifest(extra)
        tmp = store / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, ensure_ascii=False, indent=2), encoding="utf-8")
        tmp.replace(store / "manifest.json")
        self.store = store
        return manifest

    @classmethod
    def open(cls, store: str | Path, provider: EmbeddingProvider | None = None) -> "Engine":
        store = Path(store)
        manifest = read_manifest(store)
        split = load_custom(store / "split.json")
        provider = provider or provider_from_spec(manifest["provider"])
        return cls(split, provider, store=store)

    def _load_scope(self, scope: str) -> ScopeIndex:
        d = self.store / "scopes" / _safe_name(scope)
        tables = load_tables(d / "tables.sgx", expected_fingerprint=self.provider.fingerprint)
        mems = [GeneratedMemory.from_dict(m) for m in json.loads((d / "memories.json").read_text("utf-8"))]
        idx = ScopeIndex(scope, self.split.scope_corpus(scope), mems, tables)
        for f in sorted(d.glob("graph-*.sgg")):
            g = load_graph(f)
            idx.graphs[graph_key(g.granularity, g.k, g.scorer)] = g
        return idx


def _key_order(key: GraphKey) -> tuple:
    return list(Granularity).index(key[0]), key[1], key[2].value


def read_manifest(store: str | Path) -> dict[str, Any]:
    path = Path(store) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{store}: no store manifest")
    manifest = json.loads(path.read_text("utf-8"))
    if manifest.get("format") != STORE_FORMAT or manifest.get("version") != STORE_VERSION:
        raise ValueError(f"{store}: unsupported store format")
    return manifest
