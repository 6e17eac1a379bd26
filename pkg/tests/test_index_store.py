import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentgraph.conversation import build_corpus
from sentgraph.embedding import HashEmbedder, embed
from sentgraph.errors import ProviderFingerprintMismatch, SchemaVersionMismatch, StorageError, UnknownTable
from sentgraph.index_store import (
    Table,
    build_tables,
    load_tables,
    save_tables,
    search_sentences,
    search_topk,
)
from sentgraph.memory import GeneratedMemory, MemoryKind

import oracles
from factories import random_corpus

P = HashEmbedder(dim=64)


def _tables(seed, **kw):
    corpus = random_corpus(random.Random(seed), **kw)
    return corpus, build_tables(corpus, [], P)


def test_every_table_is_present_and_sized():
    corpus, tables = _tables(1, sessions=3)
    sizes = tables.sizes()
    assert set(sizes) == {t.value for t in Table}
    assert sizes["sentence"] == len(corpus.sentences)
    assert sizes["turn"] == len(corpus.turns)
    assert sizes["session"] == len(corpus.sessions)
    assert sizes["summary"] == sizes["fact"] == sizes["insight"] == 0
    with pytest.raises(UnknownTable):
        tables["nope"]


def test_memory_rows_land_in_their_tables():
    corpus, _ = _tables(2, sessions=2)
    sid = next(iter(corpus.sessions))
    mems = [GeneratedMemory(f"{sid}_summary", MemoryKind.SUMMARY, "A short recap.", sid),
            GeneratedMemory(f"{sid}_fact_0", MemoryKind.FACT, "User likes tea.", sid),
            GeneratedMemory("insight_0", MemoryKind.INSIGHT, "User drinks tea daily.", None, (f"{sid}_fact_0",))]
    tables = build_tables(corpus, mems, P)
    assert tables["summary"].ids == [f"{sid}_summary"]
    assert tables["fact"].sources == [sid]
    assert tables["insight"].sources == [""]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 12), words=st.lists(st.sampled_from(
    ["apple", "river", "coffee", "puppy", "garden", "winter"]), min_size=1, max_size=4))
def test_search_topk_matches_full_scan(seed, K, words):
    _, tables = _tables(seed, max_sentences=50)
    q = embed(P, [" ".join(words)])[0]
    for table in ("turn", "round", "session", "sentence"):
        tab = tables[table]
        hits = search_topk(tables, table, q, K)
        want = oracles.search_topk(tab.ids, tab.vectors, q, K)
        assert [(h.unit_id, h.score) for h in hits] == want


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 20), gamma=st.sampled_from([0.0, 1.0, 1.2, 1.5, 2.0]))
def test_search_sentences_threshold_and_cap(seed, n, gamma):
    _, tables = _tables(seed, max_sentences=50)
    q = embed(P, ["apple coffee garden"])[0]
    tab = tables["sentence"]
    hits = search_sentences(tables, q, gamma, n)
    assert [(h.unit_id, h.score) for h in hits] == oracles.search_sentences(tab.ids, tab.vectors, q, gamma, n)
    assert len(hits) <= n
    assert all(h.score >= gamma for h in hits)


def test_search_argument_checks():
    _, tables = _tables(0)
    q = embed(P, ["apple"])[0]
    with pytest.raises(ValueError):
        search_topk(tables, "turn", q, 0)
    with pytest.raises(ValueError):
        search_sentences(tables, q, 2.5, 3)
    with pytest.raises(ValueError):
        search_sentences(tables, q, 1.0, 0)
    assert search_topk(tables, "fact", q, 5) == []


def test_ties_go_to_the_smaller_id():
    # two identical sessions produce identical vectors
    turns = [("user", "Same words here."), ("assistant", "Yes indeed.")]
    corpus = build_corpus([("b", None, turns), ("a", None, turns)])
    tables = build_tables(corpus, [], P)
    q = embed(P, ["same words"])[0]
    hits = search_topk(tables, "session", q, 2)
    assert [h.unit_id for h in hits] == ["a", "b"]
    assert hits[0].score == hits[1].score


def test_save_load_round_trip(tmp_path):
    _, tables = _tables(5)
    path = tmp_path / "tables.sgx"
    save_tables(tables, path)
    back = load_tables(path, expected_fingerprint=P.fingerprint)
    assert back.sizes() == tables.sizes()
    for t in Table:
        a, b = tables[t], back[t]
        assert a.ids == b.ids and a.texts == b.texts and a.timestamps == b.timestamps and a.sources == b.sources
        assert np.array_equal(a.vectors, b.vectors)


def test_load_warns_on_fingerprint_mismatch(tmp_path):
    _, tables = _tables(5)
    path = tmp_path / "tables.sgx"
    save_tables(tables, path)
    with pytest.warns(ProviderFingerprintMismatch):
        load_tables(path, expected_fingerprint="other")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_tables(path, expected_fingerprint=P.fingerprint)


def test_corrupt_files_are_rejected(tmp_path):
    _, tables = _tables(5)
    path = tmp_path / "tables.sgx"
    save_tables(tables, path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    bad = tmp_path / "bad.sgx"
    bad.write_bytes(bytes(data))
    with pytest.raises(StorageError):
        load_tables(bad)
    short = tmp_path / "short.sgx"
    short.write_bytes(path.read_bytes()[:20])
    with pytest.raises(StorageError):
        load_tables(short)
    with pytest.raises(StorageError):
        load_tables(tmp_path / "missing.sgx")


def test_version_mismatch(tmp_path):
    _, tables = _tables(5)
    path = tmp_path / "tables.sgx"
    save_tables(tables, path)
    data = bytearray(path.read_bytes())
    data[4] = 99
    path.write_bytes(bytes(data))
    with pytest.raises(SchemaVersionMismatch):
        load_tables(path)
