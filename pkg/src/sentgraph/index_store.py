"""The seven vector index tables with exact search and a binary file format.

File layout (all integers little-endian)::

    magic      4 bytes  b"SGMX"
    version    u8
    dim        u32
    provider   str      (u32 byte length + UTF-8)
    ntables    u8
    per table:
        code       u8       position of the table in ``Table``
        count      u32
        ids        count x str
        texts      count x str
        timestamps count x str   (length 0xFFFFFFFF encodes a missing timestamp)
        sources    count x str
        vectors    count*dim float32
    crc32      u32      of every preceding byte
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from sentgraph._binio import open_checked, put_str, write_checked
from sentgraph.conversation import ConversationCorpus, Granularity, chunks_at
from sentgraph.embedding import EmbeddingProvider, cosine_matrix, embed, squared_norms
from sentgraph.errors import ProviderFingerprintMismatch, StorageError, UnknownTable
from sentgraph.kernels import topk_rows
from sentgraph.memory import GeneratedMemory, MemoryKind

MAGIC = b"SGMX"
VERSION = 1


class Table(str, Enum):
    SESSION = "session"
    ROUND = "round"
    TURN = "turn"
    SENTENCE = "sentence"
    SUMMARY = "summary"
    FACT = "fact"
    INSIGHT = "insight"

    @classmethod
    def for_granularity(cls, g: Granularity | str) -> "Table":
        return cls(Granularity.parse(g).value)

    @classmethod
    def for_memory(cls, kind: MemoryKind) -> "Table":
        return cls(kind.value)


_CODES = list(Table)


@dataclass(frozen=True)
class MemoryUnitRef:
    table: Table
    unit_id: str
    text: str
    timestamp: str | None
    source: str
    vector: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class ScoredHit:
    ref: MemoryUnitRef
    score: float
    cosine: float

    @property
    def unit_id(self) -> str:
        return self.ref.unit_id


@dataclass
class VectorTable:
    """Rows are kept sorted by unit id, so row order is the id tie-break order."""

    table: Table
    ids: list[str]
    texts: list[str]
    timestamps: list[str | None]
    sources: list[str]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if len(set(self.ids)) != len(self.ids):
            raise ValueError(f"duplicate ids in table {self.table.value}")
        if self.ids != sorted(self.ids):
            raise ValueError(f"table {self.table.value} rows must be sorted by id")
        self.sq_norms = squared_norms(self.vectors) if len(self.ids) else np.zeros(0)
        self._pos = {u: i for i, u in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, unit_id: str) -> int:
        return self._pos[unit_id]

    def ref(self, i: int) -> MemoryUnitRef:
        return MemoryUnitRef(self.table, self.ids[i], self.texts[i], self.timestamps[i],
                             self.sources[i], self.vectors[i])

    def cosines(self, query_vec: np.ndarray) -> np.ndarray:
        if not len(self.ids):
            return np.zeros(0)
        return cosine_matrix(np.asarray(query_vec).reshape(1, -1), self.vectors, right_sq=self.sq_norms)[0]

    @classmethod
    def from_rows(cls, table: Table, rows: Iterable[tuple[str, str, str | None, str]],
                  vectors: np.ndarray) -> "VectorTable":
        rows = list(rows)
        order = sorted(range(len(rows)), key=lambda i: rows[i][0])
        vecs = np.asarray(vectors)[order] if rows else np.asarray(vectors)
        return cls(table, [rows[i][0] for i in order], [rows[i][1] for i in order],
                   [rows[i][2] for i in order], [rows[i][3] for i in order], vecs)


@dataclass
class IndexTables:
    tables: dict[Table, VectorTable]
    provider_fingerprint: str
    dim: int

    def __post_init__(self) -> None:
        missing = [t for t in Table if t not in self.tables]
        if missing:
            raise ValueError(f"missing tables: {[t.value for t in missing]}")

    def __getitem__(self, table: Table | str) -> VectorTable:
        try:
            return self.tables[Table(table)]
        except (ValueError, KeyError):
            raise UnknownTable(str(table)) from None

    def sizes(self) -> dict[str, int]:
        return {t.value: len(self.tables[t]) for t in Table}


def _embed_rows(provider: EmbeddingProvider, texts: Sequence[str]) -> np.ndarray:
    if not texts:
        return np.zeros((0, provider.dim), dtype=np.float32)
    return embed(provider, list(texts))


def build_tables(corpus: ConversationCorpus, generated: Sequence[GeneratedMemory],
                 provider: EmbeddingProvider) -> IndexTables:
    """Embed every raw and generated unit into its table.

    Nothing is written to disk here, so a provider failure leaves no partial store.
    """
    tables: dict[Table, VectorTable] = {}
    for gran in Granularity:
        chunks = chunks_at(corpus, gran)
        vecs = _embed_rows(provider, [c.text for c in chunks])
        tables[Table.for_granularity(gran)] = VectorTable.from_rows(
            Table.for_granularity(gran),
            [(c.id, c.dialogue, c.timestamp, c.session_id) for c in chunks], vecs)

    sent_rows = []
    for sent in corpus.sentences.values():
        turn = corpus.turns[sent.turn_id]
        ts = turn.timestamp or corpus.sessions[turn.session_id].timestamp
        sent_rows.append((sent.id, sent.text, ts, turn.session_id))
    tables[Table.SENTENCE] = VectorTable.from_rows(
        Table.SENTENCE, sent_rows, _embed_rows(provider, [r[1] for r in sent_rows]))

    for kind in MemoryKind:
        mems = [m for m in generated if m.kind is kind]
        tables[Table.for_memory(kind)] = VectorTable.from_rows(
            Table.for_memory(kind),
            [(m.id, m.content, m.timestamp, m.source_session_id or "") for m in mems],
            _embed_rows(provider, [m.content for m in mems]))
    return IndexTables(tables, provider.fingerprint, provider.dim)


def _hits(tab: VectorTable, cos: np.ndarray, idx: np.ndarray, epsilon: float) -> list[ScoredHit]:
    return [ScoredHit(tab.ref(int(i)), float(cos[i]) + epsilon, float(cos[i])) for i in idx if i >= 0]


def search_topk(tables: IndexTables, table: Table | str, query_vec: np.ndarray, K: int,
                epsilon: float = 1.0) -> list[ScoredHit]:
    """Exact top-K by shifted similarity; ties go to the smaller unit id."""
    if K < 1:
        raise ValueError("K must be >= 1")
    tab = tables[table]
    if not len(tab):
        return []
    cos = tab.cosines(query_vec)
    return _hits(tab, cos, topk_rows(cos[None, :], K)[0], epsilon)


def search_sentences(tables: IndexTables, query_vec: np.ndarray, gamma: float, n: int,
                     epsilon: float = 1.0) -> list[ScoredHit]:
    """Sentences with shifted similarity >= gamma, capped at the n best."""
    if not 0.0 <= gamma <= 2.0:
        raise ValueError("gamma must lie in [0, 2]")
    if n < 1:
        raise ValueError("n must be >= 1")
    tab = tables[Table.SENTENCE]
    if not len(tab):
        return []
    cos = tab.cosines(query_vec)
    key = np.where(cos + epsilon >= gamma, cos, -np.inf)
    return _hits(tab, cos, topk_rows(key[None, :], n)[0], epsilon)


# -- persistence -------------------------------------------------------------

def save_tables(tables: IndexTables, path: str | Path) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<BI", VERSION, tables.dim)
    put_str(buf, tables.provider_fingerprint)
    buf += struct.pack("<B", len(Table))
    for code, table in enumerate(_CODES):
        tab = tables.tables[table]
        buf += struct.pack("<BI", code, len(tab))
        for column in (tab.ids, tab.texts, tab.timestamps, tab.sources):
            for value in column:
                put_str(buf, value)
        buf += np.ascontiguousarray(tab.vectors, dtype="<f4").tobytes()
    write_checked(path, buf)


def load_tables(path: str | Path, expected_fingerprint: str | None = None) -> IndexTables:
    r = open_checked(path, MAGIC, VERSION)
    dim = r.u32()
    fingerprint = r.string() or ""
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        warnings.warn(
            f"{path}: built with provider {fingerprint!r}, current provider is {expected_fingerprint!r}",
            ProviderFingerprintMismatch, stacklevel=2)
    tables = {}
    for _ in range(r.u8()):
        code = r.u8()
        if code >= len(_CODES):
            raise StorageError(f"{path}: unknown table code {code}")
        count = r.u32()
        cols = [[r.string() for _ in range(count)] for _ in range(4)]
        vecs = np.frombuffer(r.take(count * dim * 4), dtype="<f4").reshape(count, dim)
        table = _CODES[code]
        tables[table] = VectorTable(table, cols[0], cols[1], cols[2], cols[3], vecs.astype(np.float32))
    if r.pos != len(r.data):
        raise StorageError(f"{path}: trailing bytes")
    return IndexTables(tables, fingerprint, dim)
