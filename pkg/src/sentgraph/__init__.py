"""Sentence-graph memory for long multi-session dialogue."""

from sentgraph.conversation import ConversationCorpus, Granularity, build_corpus, chunks_at
from sentgraph.embedding import HashEmbedder, ScorerKind
from sentgraph.graph import SentenceGraph, build_graph, expand_hops
from sentgraph.index_store import IndexTables, Table, build_tables, search_sentences, search_topk
from sentgraph.kernels import BACKEND
from sentgraph.retrieval import RetrievalConfig, render_context, retrieve

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConversationCorpus",
    "Granularity",
    "HashEmbedder",
    "IndexTables",
    "RetrievalConfig",
    "ScorerKind",
    "SentenceGraph",
    "Table",
    "build_corpus",
    "build_graph",
    "build_tables",
    "chunks_at",
    "expand_hops",
    "render_context",
    "retrieve",
    "search_sentences",
    "search_topk",
]
