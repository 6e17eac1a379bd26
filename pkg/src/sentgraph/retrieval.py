"""Query-time retrieval: memory lookup, sentence-graph chunk ranking, context assembly.

Chunk ranking with the sentence graph:

1. sentences whose shifted similarity to the query reaches ``gamma``, at most
   ``max_sentences`` of them, seed the search;
2. the seeds grow by ``hops`` steps over KNN edges;
3. every reached sentence is scored against the query and grouped under its
   chunk; a chunk scores the mean of its sentences' shifted similarities;
4. the ``top_k`` best chunks are kept (ties: more sentences first, then id).

Rankings are computed on raw cosine; the shift ``epsilon`` is added to the
reported scores only, so changing it never reorders anything.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from sentgraph.conversation import Granularity, chronological_key
from sentgraph.embedding import EmbeddingProvider, ScorerKind, embed
from sentgraph.errors import GraphMissing
from sentgraph.graph import SentenceGraph, expand_hops, sentences_to_chunks
from sentgraph.index_store import IndexTables, ScoredHit, Table, search_sentences, search_topk


class Method(str, Enum):
    RAG = "rag"
    SGMEM = "sgmem"
    NONE = "none"


_METHOD_LABEL = {Method.RAG: "RAG", Method.SGMEM: "SGMem"}
_VARIANT = re.compile(r"^(RAG|SGMem)-([TRS])(M?)(F?)(I?)$", re.I)


@dataclass(frozen=True)
class RetrievalConfig:
    method: Method = Method.SGMEM
    granularity: Granularity = Granularity.SESSION
    summaries: bool = False
    facts: bool = False
    insights: bool = False
    top_k: int = 5
    knn_k: int = 3
    hops: int = 1
    max_sentences: int = 15
    gamma: float = 1.0
    epsilon: float = 1.0
    scorer: ScorerKind = ScorerKind.DENSE
    max_context_chars: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "granularity", Granularity.parse(self.granularity))
        object.__setattr__(self, "scorer", ScorerKind(self.scorer))
        if self.top_k < 1 or self.knn_k < 1 or self.max_sentences < 1:
            raise ValueError("top_k, knn_k and max_sentences must be >= 1")
        if self.hops < 0:
            raise ValueError("hops must be >= 0")
        if not 0.0 <= self.gamma <= 2.0:
            raise ValueError("gamma must lie in [0, 2]")

    @property
    def variant(self) -> str:
        return variant_name(self)

    @property
    def label(self) -> str:
        return (f"k={self.knn_k},h={self.hops},n={self.max_sentences},"
                f"γ={self.gamma:.1f},K={self.top_k}")

    def replace(self, **changes: Any) -> "RetrievalConfig":
        return dataclasses.replace(self, **changes)

    def with_variant(self, name: str) -> "RetrievalConfig":
        return self.replace(**parse_variant(name))

    @classmethod
    def from_variant(cls, name: str, **overrides: Any) -> "RetrievalConfig":
        return cls(**{**parse_variant(name), **overrides})

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        for key in ("method", "granularity", "scorer"):
            out[key] = out[key].value
        out["variant"] = self.variant
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RetrievalConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


PRESETS: dict[str, RetrievalConfig] = {
    "longmemeval": RetrievalConfig(granularity=Granularity.TURN, facts=True,
                                   knn_k=3, hops=1, max_sentences=15, gamma=1.0, top_k=5),
    "locomo": RetrievalConfig(granularity=Granularity.SESSION, facts=True,
                              knn_k=1, hops=1, max_sentences=15, gamma=1.2, top_k=5),
}


def variant_name(config: RetrievalConfig) -> str:
    if config.method is Method.NONE:
        return "NoHistory"
    flags = ("M" if config.summaries else "") + ("F" if config.facts else "") + ("I" if config.insights else "")
    return f"{_METHOD_LABEL[config.method]}-{config.granularity.letter}{flags}"


def parse_variant(name: str) -> dict[str, Any]:
    if name.strip().lower() in ("nohistory", "none"):
        return {"method": Method.NONE, "summaries": False, "facts": False, "insights": False}
    m = _VARIANT.match(name.strip())
    if not m:
        raise ValueError(f"unrecognised variant {name!r}")
    method, g, mm, ff, ii = m.groups()
    return {
        "method": Method.RAG if method.upper() == "RAG" else Method.SGMEM,
        "granularity": Granularity.parse(g),
        "summaries": bool(mm),
        "facts": bool(ff),
        "insights": bool(ii),
    }


def all_variants() -> list[str]:
    """Every method x granularity x memory-set combination the comparison table uses."""
    out = []
    for method in ("RAG", "SGMem"):
        for g in "TRS":
            for mem in ("", "F", "MFI"):
                out.append(f"{method}-{g}{mem}")
    return out


@dataclass(frozen=True)
class RankedChunk:
    """A retrieved chunk.

    For graph retrieval ``sentences`` maps each contributing sentence to its
    shifted similarity and ``score`` is their mean. For plain chunk retrieval
    ``sentences`` is empty and ``score`` is the chunk's own shifted similarity.
    """

    chunk_id: str
    score: float
    mean_cosine: float
    sentences: dict[str, float]
    text: str
    timestamp: str | None
    session_id: str


@dataclass
class RelevantContext:
    query: str
    variant: str
    query_date: str | None = None
    chunks: list[RankedChunk] = field(default_factory=list)  # chronological
    ranked_chunk_ids: list[str] = field(default_factory=list)  # best first
    summaries: list[ScoredHit] | None = None
    facts: list[ScoredHit] | None = None
    insights: list[ScoredHit] | None = None
    seed_sentence_ids: list[str] = field(default_factory=list)
    chunk_to_sentences: dict[str, list[str]] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.chunks and not any(self.summaries or []) and not any(self.facts or []) \
            and not any(self.insights or [])

    def to_dict(self) -> dict[str, Any]:
        def hits(h: list[ScoredHit] | None):
            if h is None:
                return None
            return [{"id": x.unit_id, "score": x.score, "text": x.ref.text, "timestamp": x.ref.timestamp}
                    for x in h]

        by_id = {c.chunk_id: c for c in self.chunks}
        return {
            "query": self.query,
            "query_date": self.query_date,
            "variant": self.variant,
            "topk_chunk_ids": list(self.ranked_chunk_ids),
            "topk_sentence_ids": list(self.seed_sentence_ids),
            "chunk_to_sentences": {k: list(v) for k, v in self.chunk_to_sentences.items()},
            "chunks": [
                {"id": cid, "score": by_id[cid].score, "session_id": by_id[cid].session_id,
                 "timestamp": by_id[cid].timestamp, "sentences": by_id[cid].sentences,
                 "text": by_id[cid].text}
                for cid in self.ranked_chunk_ids
            ],
            "summaries": hits(self.summaries),
            "facts": hits(self.facts),
            "insights": hits(self.insights),
        }


def retrieve(tables: IndexTables, graph: SentenceGraph | None, config: RetrievalConfig, query: str,
             *, provider: EmbeddingProvider, query_date: str | None = None) -> RelevantContext:
    if config.method is Method.NONE:
        return RelevantContext(query=query, variant=config.variant, query_date=query_date)
    qvec = embed(provider, [query])[0]
    return retrieve_vector(tables, graph, config, qvec, query=query, query_date=query_date)


def _check_graph(graph: SentenceGraph | None, config: RetrievalConfig) -> SentenceGraph:
    if graph is None:
        raise GraphMissing(f"{config.variant} needs a sentence graph")
    if (graph.granularity, graph.k, graph.scorer) != (config.granularity, config.knn_k, config.scorer):
        raise GraphMissing(
            f"{config.variant} needs a {config.granularity.value}/k={config.knn_k}/{config.scorer.value} graph, "
            f"got {graph.granularity.value}/k={graph.k}/{graph.scorer.value}")
    return graph


def rank_chunks(graph: SentenceGraph, cosines: dict[str, float], top_k: int,
                epsilon: float) -> tuple[list[tuple[str, list[str], float]], dict[str, set[str]]]:
    """Group sentences by chunk and keep the best ``top_k`` by mean cosine.

    Returns ``[(chunk_id, member sentence ids, mean cosine)]`` best first, and
    the full grouping.
    """
    groups = sentences_to_chunks(graph, cosines)
    scored = []
    for cid, members in groups.items():
        ordered = sorted(members)
        mean = math.fsum(cosines[s] for s in ordered) / len(ordered)
        scored.append((cid, ordered, mean))
    scored.sort(key=lambda t: (-t[2], -len(t[1]), t[0]))
    return scored[:top_k], groups


def retrieve_vector(tables: IndexTables, graph: SentenceGraph | None, config: RetrievalConfig,
                    query_vec: np.ndarray, query: str = "", query_date: str | None = None) -> RelevantContext:
    eps = config.epsilon
    ctx = RelevantContext(query=query, variant=config.variant, query_date=query_date)
    if config.method is Method.NONE:
        return ctx
    for flag, table, attr in ((config.summaries, Table.SUMMARY, "summaries"),
                              (config.facts, Table.FACT, "facts"),
                              (config.insights, Table.INSIGHT, "insights")):
        if flag:
            setattr(ctx, attr, search_topk(tables, table, query_vec, config.top_k, eps))

    chunk_tab = tables[Table.for_granularity(config.granularity)]
    picked: list[RankedChunk] = []
    if config.method is Method.RAG:
        for hit in search_topk(tables, chunk_tab.table, query_vec, config.top_k, eps):
            picked.append(RankedChunk(hit.unit_id, hit.score, hit.cosine, {}, hit.ref.text,
                                      hit.ref.timestamp, hit.ref.source))
    else:
        graph = _check_graph(graph, config)
        seeds = search_sentences(tables, query_vec, config.gamma, config.max_sentences, eps)
        ctx.seed_sentence_ids = [h.unit_id for h in seeds]
        expanded = expand_hops(graph, ctx.seed_sentence_ids, config.hops)
        sent_tab = tables[Table.SENTENCE]
        all_cos = sent_tab.cosines(query_vec)
        cosines = {s: float(all_cos[sent_tab.position(s)]) for s in expanded}
        best, groups = rank_chunks(graph, cosines, config.top_k, eps)
        ctx.chunk_to_sentences = {c: sorted(m) for c, m in groups.items()}
        for cid, members, mean in best:
            row = chunk_tab.position(cid)
            picked.append(RankedChunk(cid, mean + eps, mean, {s: cosines[s] + eps for s in members},
                                      chunk_tab.texts[row], chunk_tab.timestamps[row], chunk_tab.sources[row]))
    ctx.ranked_chunk_ids = [c.chunk_id for c in picked]
    ctx.chunks = sorted(picked, key=lambda c: chronological_key(c.timestamp, c.chunk_id))
    return ctx


def _memory_lines(hits: list[ScoredHit]) -> list[str]:
    return [f"- [{h.ref.timestamp}] {h.ref.text}" if h.ref.timestamp else f"- {h.ref.text}" for h in hits]


def render_context(ctx: RelevantContext, max_chars: int | None = None) -> str:
    """Render a context as prompt text.

    A header with the query date, then conversation excerpts in chronological
    order, then summaries, facts and insights. Empty sections are omitted.
    With ``max_chars``, the lowest-ranked excerpts are dropped until it fits.
    """
    header = f"# Relevant context\nQuery date: {ctx.query_date or 'unknown'}"
    rank = {cid: i for i, cid in enumerate(ctx.ranked_chunk_ids)}
    chunks = list(ctx.chunks)
    while True:
        sections = [header]
        if chunks:
            blocks = [f"[{c.timestamp or 'unknown'}] {c.text}" for c in chunks]
            sections.append("## Conversation excerpts\n\n" + "\n\n".join(blocks))
        for title, hits in (("Summaries", ctx.summaries), ("Facts", ctx.facts), ("Insights", ctx.insights)):
            if hits:
                sections.append(f"## {title}\n\n" + "\n".join(_memory_lines(hits)))
        text = "\n\n".join(sections)
        if max_chars is None or len(text) <= max_chars or not chunks:
            return text
        worst = max(chunks, key=lambda c: rank.get(c.chunk_id, len(rank)))
        chunks.remove(worst)
