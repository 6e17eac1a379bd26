import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentgraph.datasets import QuestionRecord
from sentgraph.llm import ExtractiveLlm, MockLlm
from sentgraph.prompts import template
from sentgraph.retrieval import PRESETS, RetrievalConfig, all_variants
from sentgraph.harness import (
    QaResult,
    _report,
    answer_question,
    config_key,
    judge,
    read_log,
    recall_at_k,
    reports_from_results,
    reports_json,
    reports_table,
    run_benchmark,
    run_sweep,
    sweep_configs,
    sweep_csv,
)

from factories import LONGMEMEVAL_COUNTS

SF = RetrievalConfig.from_variant("SGMem-SF")


def _result(qid="q", qtype="t", score=1, evidence=("a",), retrieved=("a",), config="c", variant="v"):
    return QaResult(qid, qtype, variant, config, "?", "!", "r", score, [], [], {}, list(retrieved),
                    list(evidence))


# -- judge ----------------------------------------------------------------------

@pytest.mark.parametrize("completion, score", [
    ('{"score": 1}', 1),
    ('```json\n{"score": 0}\n```', 0),
    ('Verdict:\n```json\n{\n  "score": 1\n}\n```', 1),
])
def test_judge_parses(completion, score):
    v = judge(MockLlm(fallback=lambda p: completion), "Q?", "gold", "cand")
    assert v.score == score and not v.malformed


def test_judge_retries_once_then_flags():
    llm = MockLlm(fallback=lambda p: "maybe")
    v = judge(llm, "Q?", "gold", "cand")
    assert (v.score, v.malformed) == (0, True)
    assert len(llm.calls) == 2


def test_judge_recovers_on_retry():
    replies = iter(["maybe", '{"score": 1}'])
    v = judge(MockLlm(fallback=lambda p: next(replies)), "Q?", "gold", "cand")
    assert (v.score, v.malformed) == (1, False)


def test_judge_rejects_out_of_range_and_empty_inputs():
    assert judge(MockLlm(fallback=lambda p: '{"score": 2}'), "Q", "g", "c").malformed
    assert judge(MockLlm(fallback=lambda p: '{"score": true}'), "Q", "g", "c").malformed
    with pytest.raises(ValueError):
        judge(MockLlm(), " ", "g", "c")


def test_judge_prompt_is_template():
    llm = MockLlm(fallback=lambda p: '{"score": 1}')
    seen = []
    llm.fallback = lambda p: seen.append(p) or '{"score": 1}'
    judge(llm, "Q?", "gold", "cand")
    assert seen[0].startswith(template("evaluation") + "\n\n")


# -- answering ------------------------------------------------------------------

def test_answer_includes_question_date(toy_engine):
    q = QuestionRecord("x", "What is my dog called?", "Biscuit", "single-session-user",
                       question_date="2023/03/25 (Sat) 17:18", scope="all")
    prompts = []
    llm = MockLlm(fallback=lambda p: prompts.append(p) or "Biscuit")
    response, ctx = answer_question(llm, toy_engine, SF, q)
    assert response == "Biscuit"
    assert "Question date: 2023/03/25 (Sat) 17:18" in prompts[0]
    assert prompts[0].startswith(template("response") + "\n\n")
    assert "---Data---" in prompts[0] and ctx.ranked_chunk_ids


def test_no_history_prompt_has_question_only(toy_engine):
    q = toy_engine.split.questions[0]
    prompts = []
    llm = MockLlm(fallback=lambda p: prompts.append(p) or "I don't know.")
    answer_question(llm, toy_engine, RetrievalConfig(method="none"), q)
    tail = prompts[0][len(template("response") + "\n\n"):]
    assert tail == f"---Question---\n\nQuestion date: {q.question_date}\n{q.text}"


def test_mock_answers_are_deterministic(toy_engine):
    a = run_benchmark(toy_engine, [SF], ExtractiveLlm(), record_latency=False)[1]
    b = run_benchmark(toy_engine, [SF], ExtractiveLlm(), record_latency=False, workers=1)[1]
    assert [r.to_json() for r in a] == [r.to_json() for r in b]


# -- aggregation ----------------------------------------------------------------

def test_accuracy_examples():
    assert _report("v", "c", 5, [_result(f"q{i}", score=1) for i in range(4)]).accuracy == 1.0
    rs = [_result(f"q{i}", score=s) for i, s in enumerate((1, 0, 1, 0))]
    assert _report("v", "c", 5, rs).accuracy == 0.5


def test_per_type_buckets_follow_longmemeval_counts():
    rs = []
    for t, n in LONGMEMEVAL_COUNTS.items():
        rs += [_result(f"{t}{i}", t, score=i % 2) for i in range(n)]
    rep = _report("v", "c", 5, rs)
    assert {t: b["count"] for t, b in rep.per_type.items()} == LONGMEMEVAL_COUNTS
    assert list(rep.per_type) == list(LONGMEMEVAL_COUNTS)


@settings(max_examples=60)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(0, 1)), min_size=1, max_size=40))
def test_per_type_accuracy_averages_back(items):
    rs = [_result(f"q{i}", t, s) for i, (t, s) in enumerate(items)]
    rep = _report("v", "c", 5, rs)
    assert rep.accuracy == pytest.approx(sum(s for _, s in items) / len(items))
    weighted = sum(b["accuracy"] * b["count"] for b in rep.per_type.values()) / len(items)
    assert weighted == pytest.approx(rep.accuracy)


def test_recall_examples():
    always = [_result(f"q{i}", evidence=("a", "b"), retrieved=("b", "a", "z")) for i in range(3)]
    never = [_result(f"q{i}", evidence=("a",), retrieved=("b",)) for i in range(3)]
    assert recall_at_k(always) == {"c": 1.0}
    assert recall_at_k(never) == {"c": 0.0}
    case = [_result("conv", evidence=("s_1", "s_2", "s_3"), retrieved=("s_1", "s_3"))]
    assert recall_at_k(case, mode="overlap")["c"] == pytest.approx(2 / 3)
    assert recall_at_k(case, mode="all")["c"] == 0.0
    assert recall_at_k([_result(evidence=())]) == {}
    with pytest.raises(ValueError):
        recall_at_k(case, mode="bogus")


# -- runs, logs, resume ---------------------------------------------------------

def test_every_variant_runs_on_toy(toy_engine):
    configs = [RetrievalConfig.from_variant(v) for v in all_variants()]
    reports, results = run_benchmark(toy_engine, configs, ExtractiveLlm(), record_latency=False)
    assert len(results) == len(configs) * 12
    assert all(r.error is None for r in results)
    assert all(r.score in (0, 1) for r in results)
    assert all(0.0 <= rep.accuracy <= 1.0 for rep in reports)


def test_proxy_mode_leaves_scores_empty(toy_engine):
    (rep,), results = run_benchmark(toy_engine, [SF], None, record_latency=False)
    assert rep.accuracy is None and rep.recall_all is not None
    assert all(r.score is None and r.response == "" for r in results)


def test_log_is_deterministic_and_resumable(tmp_path, toy_engine):
    configs = [SF, RetrievalConfig.from_variant("RAG-S")]
    full = tmp_path / "full.jsonl"
    run_benchmark(toy_engine, configs, ExtractiveLlm(), log_path=full, record_latency=False)
    again = tmp_path / "again.jsonl"
    run_benchmark(toy_engine, configs, ExtractiveLlm(), log_path=again, record_latency=False)
    assert full.read_bytes() == again.read_bytes()

    part = tmp_path / "part.jsonl"
    run_benchmark(toy_engine, configs, ExtractiveLlm(), log_path=part, record_latency=False, limit=7)
    assert len(read_log(part)) == 7
    # simulate a torn final write
    with open(part, "a", encoding="utf-8") as fh:
        fh.write('{"question_id": "toy_q')
    calls = []

    class Counting(ExtractiveLlm):
        def complete(self, prompt):
            calls.append(prompt)
            return super().complete(prompt)

    reports, _ = run_benchmark(toy_engine, configs, Counting(), log_path=part, record_latency=False)
    assert len(calls) == 2 * (24 - 7)
    uninterrupted, _ = run_benchmark(toy_engine, configs, ExtractiveLlm(), record_latency=False)
    assert reports_json(reports) == reports_json(uninterrupted)
    logged = read_log(part)
    assert sorted((r.config, r.question_id) for r in logged) == \
        sorted((config_key(c), q.id) for c in configs for q in toy_engine.split.questions)


def test_log_records_use_result_field_names(tmp_path, toy_engine):
    log = tmp_path / "log.jsonl"
    run_benchmark(toy_engine, [SF], ExtractiveLlm(), log_path=log)
    rec = json.loads(log.read_text().splitlines()[0])
    for key in ("question_id", "question_type", "topk_sentence_ids", "chunk_to_sentences",
                "topk_chunk_ids", "response", "score"):
        assert key in rec
    assert rec["latency_ms"] > 0


def test_errors_are_recorded_per_question(toy_engine):
    class Down:
        name = "down"

        def complete(self, prompt):
            from sentgraph.errors import LlmUnavailable
            raise LlmUnavailable("offline")

    (rep,), results = run_benchmark(toy_engine, [SF], Down(), record_latency=False)
    assert rep.errors == 12 and rep.accuracy == 0.0
    assert all(r.error.startswith("LlmUnavailable") for r in results)


def test_reports_from_log_match_run(toy_engine):
    reports, results = run_benchmark(toy_engine, [SF], ExtractiveLlm(), record_latency=False)
    assert reports_json(reports_from_results(results)) == reports_json(reports)
    table = reports_table(reports)
    assert table.splitlines()[0].startswith("config")
    assert config_key(SF) in table


# -- sweeps ---------------------------------------------------------------------

def test_sweep_grid_rows_and_labels():
    rows = sweep_configs(PRESETS["longmemeval"], {"h": [0, 1, 2]})
    assert [c.hops for c in rows] == [0, 1, 2]
    assert sweep_configs(PRESETS["longmemeval"], {})[0].label == "k=3,h=1,n=15,γ=1.0,K=5"
    assert sweep_configs(PRESETS["locomo"], {})[0].label == "k=1,h=1,n=15,γ=1.2,K=5"
    big = sweep_configs(PRESETS["locomo"], {"k": [1, 2], "K": [5, 10]})
    assert [(c.knn_k, c.top_k) for c in big] == [(1, 5), (1, 10), (2, 5), (2, 10)]
    with pytest.raises(ValueError):
        sweep_configs(PRESETS["locomo"], {"zeta": [1]})


def test_run_sweep_records_row_failures(toy_engine):
    base = RetrievalConfig.from_variant("SGMem-SF")
    rows = run_sweep(toy_engine, base, {"h": [0, 1], "gamma": [1.0]})
    assert len(rows) == 2 and all(r.failure is None for r in rows)
    csv_text = sweep_csv(rows)
    lines = csv_text.splitlines()
    assert lines[0].startswith("label,variant,k,h,n,gamma,K")
    assert lines[1].startswith('"k=3,h=0,n=15,γ=1.0,K=5",SGMem-SF')
    assert sweep_csv(rows) == csv_text
