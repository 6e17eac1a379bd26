import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentgraph.conversation import Granularity, build_corpus, chunks_at
from sentgraph.embedding import HashEmbedder, tokenize
from sentgraph.errors import EmptyCorpus, StorageError, UnknownNode
from sentgraph.graph import (
    build_graph,
    expand_hops,
    knn_relation,
    load_graph,
    save_graph,
    sentences_to_chunks,
    with_k,
)
from sentgraph.index_store import build_tables

import oracles
from factories import random_corpus

P = HashEmbedder(dim=64)


def _setup(seed, **kw):
    corpus = random_corpus(random.Random(seed), **kw)
    return corpus, build_tables(corpus, [], P)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5))
def test_dense_knn_matches_all_pairs_oracle(seed, k):
    corpus, tables = _setup(seed, max_sentences=40)
    tab = tables["sentence"]
    graph = build_graph(corpus, "turn", tables, k)
    vec = dict(zip(tab.ids, tab.vectors))
    want = oracles.directed_knn(tab.ids, lambda a, b: oracles.cos(vec[a], vec[b]), k)
    assert graph.directed_edges == want
    assert graph.knn_edges == oracles.knn_edges(tab.ids, tab.vectors, k)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 4))
def test_bm25_knn_picks_oracle_best_scores(seed, k):
    corpus, tables = _setup(seed, max_sentences=30)
    tab = tables["sentence"]
    graph = build_graph(corpus, "turn", tables, k, scorer="bm25")
    docs = [tokenize(t) for t in tab.texts]
    for i, a in enumerate(tab.ids):
        oracle = oracles.bm25_scores(docs, docs[i])
        others = sorted((oracle[j] for j in range(len(docs)) if j != i), reverse=True)[:k]
        got = sorted((oracle[tab.position(b)] for b in graph.neighbors(a)
                      if (a, b) in graph.directed_edges), reverse=True)
        assert got == pytest.approx(others, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5), g=st.sampled_from(list(Granularity)))
def test_graph_invariants(seed, k, g):
    corpus, tables = _setup(seed, max_sentences=40)
    graph = build_graph(corpus, g, tables, k)
    n = len(corpus.sentences)
    # every sentence belongs to exactly one chunk, and chunks match the partition
    assert np.all(graph.sentence_chunk >= 0)
    expected = {(c.id, s) for c in chunks_at(corpus, g) for s in c.sentence_ids}
    assert graph.membership_edges == expected
    # out-degree is min(k, N - 1), no self loops
    assert np.all(graph.out_degrees() == min(k, n - 1))
    assert all(a != b for a, b in graph.directed_edges)
    # traversal is undirected
    for a, b in graph.directed_edges:
        assert b in graph.neighbors(a) and a in graph.neighbors(b)


def test_single_sentence_corpus_has_no_knn_edges():
    corpus = build_corpus([("s", None, [("user", "Only one sentence here.")])])
    tables = build_tables(corpus, [], P)
    graph = build_graph(corpus, "session", tables, 3)
    assert graph.knn_edges == set()
    assert expand_hops(graph, ["s_0_0"], 2) == {"s_0_0"}


def test_empty_corpus_rejected():
    corpus = random_corpus(random.Random(0), sessions=1)
    tables = build_tables(corpus, [], P)
    with pytest.raises(EmptyCorpus):
        build_graph(corpus.subset([]), "turn", tables, 2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(0, 3), data=st.data())
def test_expand_hops_matches_oracle(seed, h, data):
    corpus, tables = _setup(seed, max_sentences=40)
    graph = build_graph(corpus, "round", tables, 2)
    ids = list(graph.sentence_ids)
    seeds = data.draw(st.lists(st.sampled_from(ids), max_size=4, unique=True))
    got = expand_hops(graph, seeds, h)
    assert got == oracles.bfs(oracles.adjacency(graph.knn_edges), seeds, h)
    assert set(seeds) <= got
    if h:
        assert expand_hops(graph, seeds, h - 1) <= got


def test_expand_hops_errors():
    corpus, tables = _setup(3)
    graph = build_graph(corpus, "turn", tables, 2)
    with pytest.raises(ValueError):
        expand_hops(graph, [], -1)
    with pytest.raises(UnknownNode):
        expand_hops(graph, ["nope"], 1)
    assert expand_hops(graph, [], 2) == set()


def test_sentences_to_chunks_groups_by_membership():
    corpus, tables = _setup(4, sessions=2)
    graph = build_graph(corpus, "session", tables, 2)
    groups = sentences_to_chunks(graph, graph.sentence_ids)
    assert set(groups) == set(corpus.sessions)
    for chunk, members in groups.items():
        assert all(corpus.turns[corpus.sentences[s].turn_id].session_id == chunk for s in members)


def test_knn_cache_is_shared_across_granularities():
    corpus, tables = _setup(6)
    cache = {}
    a = build_graph(corpus, "turn", tables, 3, knn_cache=cache)
    b = build_graph(corpus, "session", tables, 3, knn_cache=cache)
    assert len(cache) == 1 and np.array_equal(a.knn, b.knn)


def test_with_k_recomputes_relation():
    corpus, tables = _setup(7, max_sentences=30)
    g1 = build_graph(corpus, "turn", tables, 1)
    g3 = with_k(g1, tables, 3)
    assert g3.k == 3 and g3.chunk_ids == g1.chunk_ids
    assert g3.directed_edges == build_graph(corpus, "turn", tables, 3).directed_edges
    assert g1.directed_edges <= g3.directed_edges


def test_knn_relation_rejects_bad_k():
    _, tables = _setup(0)
    with pytest.raises(ValueError):
        knn_relation(tables, 0)


def test_save_load_round_trip(tmp_path):
    corpus, tables = _setup(8, max_sentences=60)
    graph = build_graph(corpus, "round", tables, 3, scorer="bm25")
    path = tmp_path / "g.sgg"
    save_graph(graph, path)
    back = load_graph(path)
    assert back.granularity is graph.granularity and back.k == 3 and back.scorer == graph.scorer
    assert back.chunk_ids == graph.chunk_ids and back.sentence_ids == graph.sentence_ids
    assert back.membership_edges == graph.membership_edges
    assert back.directed_edges == graph.directed_edges
    assert back.provider_fingerprint == P.fingerprint


def test_load_corrupt_graph(tmp_path):
    corpus, tables = _setup(8)
    path = tmp_path / "g.sgg"
    save_graph(build_graph(corpus, "turn", tables, 2), path)
    data = bytearray(path.read_bytes())
    data[-10] ^= 0x55
    path.write_bytes(bytes(data))
    with pytest.raises(StorageError):
        load_graph(path)
