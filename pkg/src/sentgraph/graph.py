"""Sentence graph: chunk membership edges plus sentence KNN edges.

The KNN relation is computed per sentence (its top-k most similar other
sentences, ties to the smaller id) and traversed as an undirected graph.
Only sentence-sentence edges are walked during expansion; chunks are reached
afterwards through membership.

File layout (little-endian)::

    magic b"SGMG" | version u8 | granularity u8 | scorer u8 | k u32 | provider str
    nchunks u32 | chunk ids | nsentences u32 | sentence ids
    nmembership u32 | (chunk u32, sentence u32) pairs
    nknn u32 | (source u32, target u32) directed pairs, in rank order per source
    crc32 u32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, MutableMapping

import numpy as np

from sentgraph._binio import open_checked, put_str, write_checked
from sentgraph.conversation import ConversationCorpus, Granularity, chunks_at
from sentgraph.embedding import BM25Index, ScorerKind, cosine_matrix
from sentgraph.errors import EmptyCorpus, OrphanSentence, StorageError, UnknownNode
from sentgraph.index_store import IndexTables, Table
from sentgraph.kernels import bfs_expand, topk_rows

MAGIC = b"SGMG"
VERSION = 1
BLOCK_ROWS = 1024

_GRANS = list(Granularity)
_SCORERS = list(ScorerKind)


@dataclass(frozen=True)
class GraphNode:
    id: str
    kind: str  # "chunk" | "sentence"
    granularity: Granularity | None = None


@dataclass
class SentenceGraph:
    granularity: Granularity
    k: int
    scorer: ScorerKind
    chunk_ids: tuple[str, ...]
    sentence_ids: tuple[str, ...]
    sentence_chunk: np.ndarray  # (N,) index into chunk_ids, -1 if orphaned
    knn: np.ndarray  # (N, k) directed neighbour indices, -1 padded
    provider_fingerprint: str = ""
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = len(self.sentence_ids)
        self.sentence_chunk = np.asarray(self.sentence_chunk, dtype=np.int64).reshape(n)
        self.knn = np.asarray(self.knn, dtype=np.int64).reshape(n, self.k)
        self._sent_pos = {s: i for i, s in enumerate(self.sentence_ids)}
        self._chunk_pos = {c: i for i, c in enumerate(self.chunk_ids)}
        src = np.repeat(np.arange(n, dtype=np.int64), self.k)
        dst = self.knn.ravel()
        keep = dst >= 0
        if np.any(src[keep] == dst[keep]):
            raise ValueError("self-loop in KNN relation")
        pairs = np.unique(np.concatenate([
            np.stack([src[keep], dst[keep]], axis=1),
            np.stack([dst[keep], src[keep]], axis=1),
        ]), axis=0) if keep.any() else np.zeros((0, 2), dtype=np.int64)
        self.indices = np.ascontiguousarray(pairs[:, 1], dtype=np.int64)
        counts = np.bincount(pairs[:, 0], minlength=n) if n else np.zeros(0, dtype=np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @property
    def nodes(self) -> dict[str, GraphNode]:
        out = {c: GraphNode(c, "chunk", self.granularity) for c in self.chunk_ids}
        out.update({s: GraphNode(s, "sentence") for s in self.sentence_ids})
        return out

    @property
    def membership_edges(self) -> set[tuple[str, str]]:
        return {(self.chunk_ids[c], s) for s, c in zip(self.sentence_ids, self.sentence_chunk) if c >= 0}

    @property
    def directed_edges(self) -> set[tuple[str, str]]:
        return {(self.sentence_ids[i], self.sentence_ids[j])
                for i, row in enumerate(self.knn) for j in row if j >= 0}

    @property
    def knn_edges(self) -> set[frozenset[str]]:
        return {frozenset(e) for e in self.directed_edges}

    def out_degrees(self) -> np.ndarray:
        return (self.knn >= 0).sum(axis=1)

    def neighbors(self, sentence_id: str) -> list[str]:
        i = self.sentence_position(sentence_id)
        return [self.sentence_ids[j] for j in self.indices[self.indptr[i] : self.indptr[i + 1]]]

    def sentence_position(self, sentence_id: str) -> int:
        try:
            return self._sent_pos[sentence_id]
        except KeyError:
            raise UnknownNode(sentence_id) from None


def knn_relation(tables: IndexTables, k: int, scorer: ScorerKind | str = ScorerKind.DENSE,
                 block_rows: int = BLOCK_ROWS) -> np.ndarray:
    """Directed top-k neighbours of every sentence, as row positions in the sentence table."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scorer = ScorerKind(scorer)
    tab = tables[Table.SENTENCE]
    n = len(tab)
    out = np.full((n, k), -1, dtype=np.int64)
    if scorer is ScorerKind.DENSE:
        vecs = tab.vectors
        for start in range(0, n, block_rows):
            stop = min(n, start + block_rows)
            sims = cosine_matrix(vecs[start:stop], vecs, tab.sq_norms[start:stop], tab.sq_norms)
            out[start:stop] = topk_rows(sims, k, start)
    else:
        bm25 = BM25Index.fit(tab.texts)
        queries = bm25.query_matrix(tab.texts)
        weights_t = bm25.weights.T.tocsc()
        for start in range(0, n, block_rows):
            stop = min(n, start + block_rows)
            sims = np.ascontiguousarray((queries[start:stop] @ weights_t).toarray(), dtype=np.float64)
            out[start:stop] = topk_rows(sims, k, start)
    return out


def build_graph(corpus: ConversationCorpus, granularity: Granularity | str, tables: IndexTables, k: int,
                scorer: ScorerKind | str = ScorerKind.DENSE,
                knn_cache: MutableMapping | None = None) -> SentenceGraph:
    """Build the sentence graph for one chunk granularity.

    ``knn_cache`` may be shared across granularities; it is keyed by
    ``(provider fingerprint, scorer, k)``.
    """
    gran = Granularity.parse(granularity)
    scorer = ScorerKind(scorer)
    if not corpus.sentences:
        raise EmptyCorpus("corpus has no sentences")
    sent_tab = tables[Table.SENTENCE]
    if set(sent_tab.ids) != set(corpus.sentences):
        raise ValueError("sentence table does not match the corpus")
    chunks = sorted(chunks_at(corpus, gran), key=lambda c: c.id)
    chunk_ids = tuple(c.id for c in chunks)
    member = np.full(len(sent_tab), -1, dtype=np.int64)
    for ci, chunk in enumerate(chunks):
        for sid in chunk.sentence_ids:
            member[sent_tab.position(sid)] = ci

    key = (tables.provider_fingerprint, scorer.value, k)
    if knn_cache is not None and key in knn_cache:
        knn = knn_cache[key]
    else:
        knn = knn_relation(tables, k, scorer)
        if knn_cache is not None:
            knn_cache[key] = knn
    return SentenceGraph(gran, k, scorer, chunk_ids, tuple(sent_tab.ids), member, knn,
                         tables.provider_fingerprint)


def with_k(graph: SentenceGraph, tables: IndexTables, k: int,
           scorer: ScorerKind | str | None = None) -> SentenceGraph:
    """Same chunk membership, KNN relation recomputed for a different k or scorer."""
    scorer = ScorerKind(scorer or graph.scorer)
    if tuple(tables[Table.SENTENCE].ids) != graph.sentence_ids:
        raise ValueError("tables do not match graph")
    return SentenceGraph(graph.granularity, k, scorer, graph.chunk_ids, graph.sentence_ids,
                         graph.sentence_chunk, knn_relation(tables, k, scorer), tables.provider_fingerprint)


def expand_hops(graph: SentenceGraph, seeds: Iterable[str], h: int) -> set[str]:
    """Seeds plus every sentence within ``h`` KNN hops of them."""
    if h < 0:
        raise ValueError("h must be >= 0")
    pos = np.array([graph.sentence_position(s) for s in seeds], dtype=np.int64)
    if pos.size == 0:
        return set()
    reached = bfs_expand(graph.indptr, graph.indices, pos, int(h))
    return {graph.sentence_ids[i] for i in reached}


def sentences_to_chunks(graph: SentenceGraph, sentence_ids: Iterable[str]) -> dict[str, set[str]]:
    groups: dict[str, set[str]] = {}
    for sid in sentence_ids:
        c = graph.sentence_chunk[graph.sentence_position(sid)]
        if c < 0:
            raise OrphanSentence(sid)
        groups.setdefault(graph.chunk_ids[c], set()).add(sid)
    return dict(sorted(groups.items()))


def save_graph(graph: SentenceGraph, path: str | Path) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<BBBI", VERSION, _GRANS.index(graph.granularity),
                       _SCORERS.index(graph.scorer), graph.k)
    put_str(buf, graph.provider_fingerprint)
    for ids in (graph.chunk_ids, graph.sentence_ids):
        buf += struct.pack("<I", len(ids))
        for i in ids:
            put_str(buf, i)
    member = [(int(c), s) for s, c in enumerate(graph.sentence_chunk) if c >= 0]
    buf += struct.pack("<I", len(member))
    buf += np.asarray(member, dtype="<u4").reshape(-1, 2).tobytes()
    directed = [(i, int(j)) for i, row in enumerate(graph.knn) for j in row if j >= 0]
    buf += struct.pack("<I", len(directed))
    buf += np.asarray(directed, dtype="<u4").reshape(-1, 2).tobytes()
    write_checked(path, buf)


def load_graph(path: str | Path) -> SentenceGraph:
    r = open_checked(path, MAGIC, VERSION)
    g, s, k = r.u8(), r.u8(), r.u32()
    if g >= len(_GRANS) or s >= len(_SCORERS) or k < 1:
        raise StorageError(f"{path}: corrupt header")
    fingerprint = r.string() or ""
    chunk_ids = tuple(r.string() for _ in range(r.u32()))
    sentence_ids = tuple(r.string() for _ in range(r.u32()))
    n = len(sentence_ids)
    m = r.u32()
    member_pairs = np.frombuffer(r.take(8 * m), dtype="<u4").reshape(m, 2).astype(np.int64)
    e = r.u32()
    knn_pairs = np.frombuffer(r.take(8 * e), dtype="<u4").reshape(e, 2).astype(np.int64)
    if r.pos != len(r.data):
        raise StorageError(f"{path}: trailing bytes")
    member = np.full(n, -1, dtype=np.int64)
    if m and (member_pairs[:, 0].max() >= len(chunk_ids) or member_pairs[:, 1].max() >= n):
        raise StorageError(f"{path}: membership edge out of range")
    member[member_pairs[:, 1]] = member_pairs[:, 0]
    knn = np.full((n, k), -1, dtype=np.int64)
    fill = np.zeros(n, dtype=np.int64)
    for src, dst in knn_pairs:
        if src >= n or dst >= n or fill[src] >= k:
            raise StorageError(f"{path}: KNN edge out of range")
        knn[src, fill[src]] = dst
        fill[src] += 1
    return SentenceGraph(_GRANS[g], k, _SCORERS[s], chunk_ids, sentence_ids, member, knn, fingerprint)
