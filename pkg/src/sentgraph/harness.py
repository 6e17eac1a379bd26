"""End-to-end QA: answer, judge, aggregate; plus an LLM-free evidence recall metric."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from sentgraph.datasets import BenchmarkSplit, QuestionRecord
from sentgraph.engine import Engine
from sentgraph.errors import MalformedJson, SentGraphError
from sentgraph.llm import LlmClient, parse_json_object
from sentgraph.prompts import render_evaluation_prompt, render_response_prompt
from sentgraph.retrieval import RelevantContext, RetrievalConfig, render_context

log = logging.getLogger(__name__)

# every question type reported for these splits, in display order
TYPE_ORDER = (
    "single-session-user", "single-session-assistant", "single-session-preference",
    "multi-session", "knowledge-update", "temporal-reasoning",
    "single-hop", "multi-hop", "temporal reasoning", "open-domain knowledge", "adversarial",
)


def config_key(config: RetrievalConfig) -> str:
    """Identifies a configuration in logs and reports."""
    key = f"{config.variant}[{config.label},ε={config.epsilon:g},{config.scorer.value}]"
    return key if config.max_context_chars is None else key[:-1] + f",chars={config.max_context_chars}]"


@dataclass
class JudgeVerdict:
    score: int
    malformed: bool = False
    raw: str = ""


@dataclass
class QaResult:
    question_id: str
    question_type: str
    variant: str
    config: str
    question: str
    answer: str
    response: str
    score: int | None
    topk_chunk_ids: list[str]
    topk_sentence_ids: list[str]
    chunk_to_sentences: dict[str, list[str]]
    retrieved_session_ids: list[str]
    evidence_ids: list[str]
    judge_malformed: bool = False
    error: str | None = None
    latency_ms: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QaResult":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class AccuracyReport:
    variant: str
    config: str
    K: int
    questions: int
    accuracy: float | None  # None when answers were not judged
    per_type: dict[str, dict[str, float | int | None]]
    recall_all: float | None = None
    recall_overlap: float | None = None
    judge_malformed: int = 0
    errors: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def answer_question(client: LlmClient, engine: Engine, config: RetrievalConfig,
                    question: QuestionRecord) -> tuple[str, RelevantContext]:
    ctx = engine.retrieve(config, question)
    context = None if ctx.is_empty else render_context(ctx, config.max_context_chars)
    prompt = render_response_prompt(question.text, context, question.question_date)
    return client.complete(prompt), ctx


def _verdict(text: str) -> int:
    value = parse_json_object(text).get("score")
    if isinstance(value, bool) or value not in (0, 1):
        raise MalformedJson(f"score must be 0 or 1, got {value!r}")
    return int(value)


def judge(client: LlmClient, question: str, gold_answer: str, candidate: str) -> JudgeVerdict:
    """Binary verdict. A completion that does not parse is asked for once more;
    if that also fails the verdict is 0 with ``malformed`` set."""
    if not question.strip() or not gold_answer.strip():
        raise ValueError("question and gold answer must be non-empty")
    prompt = render_evaluation_prompt(question, gold_answer, candidate if candidate.strip() else "(no answer)")
    text = ""
    for _ in range(2):
        text = client.complete(prompt)
        try:
            return JudgeVerdict(_verdict(text), raw=text)
        except MalformedJson:
            continue
    return JudgeVerdict(0, malformed=True, raw=text)


def _session_ids(ctx: RelevantContext) -> list[str]:
    return list(dict.fromkeys(c.session_id for c in ctx.chunks))


def evaluate_question(engine: Engine, config: RetrievalConfig, question: QuestionRecord,
                      client: LlmClient | None, judge_client: LlmClient | None,
                      record_latency: bool = True) -> QaResult:
    start = time.perf_counter()
    response, score, malformed, error = "", None, False, None
    ctx = RelevantContext(query=question.text, variant=config.variant)
    try:
        if client is None:
            ctx = engine.retrieve(config, question)
        else:
            response, ctx = answer_question(client, engine, config, question)
            verdict = judge(judge_client or client, question.text, question.answer, response)
            score, malformed = verdict.score, verdict.malformed
    except (SentGraphError, OSError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        if client is not None:
            score = 0
        log.warning("question %s under %s failed: %s", question.id, config.variant, error)
    return QaResult(
        question_id=question.id,
        question_type=question.question_type,
        variant=config.variant,
        config=config_key(config),
        question=question.text,
        answer=question.answer,
        response=response,
        score=score,
        topk_chunk_ids=list(ctx.ranked_chunk_ids),
        topk_sentence_ids=list(ctx.seed_sentence_ids),
        chunk_to_sentences={k: list(v) for k, v in ctx.chunk_to_sentences.items()},
        retrieved_session_ids=_session_ids(ctx),
        evidence_ids=list(question.evidence_ids),
        judge_malformed=malformed,
        error=error,
        latency_ms=round((time.perf_counter() - start) * 1000.0, 3) if record_latency else 0.0,
    )


def read_log(path: str | Path) -> list[QaResult]:
    """Results from a JSON-lines log; a torn final line from an interrupted run is ignored."""
    out = []
    p = Path(path)
    if not p.exists():
        return out
    for line in p.read_text("utf-8").splitlines():
        if not line.strip():
            continue
        try:
            out.append(QaResult.from_dict(json.loads(line)))
        except (ValueError, TypeError):
            log.warning("%s: skipping unreadable log line", path)
    return out


def run_benchmark(engine: Engine, configs: Sequence[RetrievalConfig], client: LlmClient | None = None,
                  *, judge_client: LlmClient | None = None, log_path: str | Path | None = None,
                  workers: int = 4, questions: Sequence[QuestionRecord] | None = None,
                  record_latency: bool = True, limit: int | None = None,
                  ) -> tuple[list[AccuracyReport], list[QaResult]]:
    """Answer and judge every question under every config.

    Without ``client`` only retrieval runs (scores stay ``None``) and the
    reports carry evidence recall alone. With ``log_path`` each result is
    appended as it completes, in question order, and results already in the
    log are reused, so an interrupted run resumes where it stopped. ``limit``
    stops after that many new results (used to simulate interruption).
    """
    questions = list(questions if questions is not None else engine.split.questions)
    done: dict[tuple[str, str], QaResult] = {}
    if log_path is not None:
        for r in read_log(log_path):
            done[(r.config, r.question_id)] = r
    todo = [(c, q) for c in configs for q in questions if (config_key(c), q.id) not in done]
    if limit is not None:
        todo = todo[:limit]

    write_lock = threading.Lock()
    fh = None
    if log_path is not None:
        fh = open(log_path, "a+", encoding="utf-8")
        if fh.tell() > 0:
            fh.seek(fh.tell() - 1)
            if fh.read(1) != "\n":
                fh.write("\n")  # terminate a torn line left by an interrupted run
    try:
        def work(item):
            c, q = item
            return evaluate_question(engine, c, q, client, judge_client, record_latency)

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for r in pool.map(work, todo):
                done[(r.config, r.question_id)] = r
                if fh is not None:
                    with write_lock:
                        fh.write(r.to_json() + "\n")
                        fh.flush()
    finally:
        if fh is not None:
            fh.close()

    results = [done[(config_key(c), q.id)] for c in configs for q in questions
               if (config_key(c), q.id) in done]
    reports = [build_report(c, [r for r in results if r.config == config_key(c)], engine.split)
               for c in configs]
    return reports, results


def _question_recall(r: QaResult, mode: str) -> float | None:
    evidence = set(r.evidence_ids)
    if not evidence:
        return None
    got = evidence & set(r.retrieved_session_ids)
    if mode == "all":
        return float(got == evidence)
    if mode == "overlap":
        return len(got) / len(evidence)
    raise ValueError(f"unknown recall mode {mode!r}")


def recall_at_k(results: Iterable[QaResult], split: BenchmarkSplit | None = None,
                mode: str = "all") -> dict[str, float]:
    """Per-config mean evidence recall over questions that have evidence.

    ``all``: a question counts when every evidence session was retrieved;
    ``overlap``: the fraction of its evidence sessions retrieved.
    """
    wanted = {q.id for q in split.questions} if split is not None else None
    sums: dict[str, list[float]] = {}
    for r in results:
        if wanted is not None and r.question_id not in wanted:
            continue
        v = _question_recall(r, mode)
        if v is not None:
            sums.setdefault(r.config, []).append(v)
    return {k: sum(v) / len(v) for k, v in sums.items()}


def _type_rank(t: str) -> tuple:
    return (TYPE_ORDER.index(t), t) if t in TYPE_ORDER else (len(TYPE_ORDER), t)


def build_report(config: RetrievalConfig, results: Sequence[QaResult],
                 split: BenchmarkSplit | None = None) -> AccuracyReport:
    if split is not None:
        wanted = {q.id for q in split.questions}
        results = [r for r in results if r.question_id in wanted]
    return _report(config.variant, config_key(config), config.top_k, results)


def _report(variant: str, key: str, K: int, results: Sequence[QaResult]) -> AccuracyReport:
    judged = [r for r in results if r.score is not None]
    per_type: dict[str, dict[str, Any]] = {}
    for t in sorted({r.question_type for r in results}, key=_type_rank):
        rs = [r for r in results if r.question_type == t]
        js = [r.score for r in rs if r.score is not None]
        rec = [v for v in (_question_recall(r, "all") for r in rs) if v is not None]
        per_type[t] = {
            "count": len(rs),
            "accuracy": sum(js) / len(js) if js else None,
            "recall": sum(rec) / len(rec) if rec else None,
        }
    rec_all = recall_at_k(results, mode="all").get(key)
    rec_ovl = recall_at_k(results, mode="overlap").get(key)
    return AccuracyReport(
        variant=variant,
        config=key,
        K=K,
        questions=len(results),
        accuracy=sum(r.score for r in judged) / len(judged) if judged else None,
        per_type=per_type,
        recall_all=rec_all,
        recall_overlap=rec_ovl,
        judge_malformed=sum(r.judge_malformed for r in results),
        errors=sum(r.error is not None for r in results),
    )


def reports_from_results(results: Sequence[QaResult]) -> list[AccuracyReport]:
    """Reports straight from logged results, one per config key in first-seen order."""
    out = []
    for key in dict.fromkeys(r.config for r in results):
        rs = [r for r in results if r.config == key]
        m = re.search(r"K=(\d+)", key)
        out.append(_report(rs[0].variant, key, int(m.group(1)) if m else 0, rs))
    return out


def _fmt(v: float | None) -> str:
    return "-" if v is None else f"{v:.3f}"


def reports_json(reports: Sequence[AccuracyReport]) -> str:
    return json.dumps({"reports": [r.to_dict() for r in reports]}, ensure_ascii=False, indent=2)


def reports_table(reports: Sequence[AccuracyReport]) -> str:
    """Aligned text table: one row per config, one accuracy column per question type."""
    types = sorted({t for r in reports for t in r.per_type}, key=_type_rank)
    header = ["config", "n", "accuracy", "recall", *types]
    rows = [header]
    for r in reports:
        rows.append([r.config, str(r.questions), _fmt(r.accuracy), _fmt(r.recall_all),
                     *(_fmt(r.per_type[t]["accuracy"]) if t in r.per_type else "" for t in types)])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(line.rstrip() for line in lines) + "\n"


# -- hyperparameter sweeps -----------------------------------------------------

SWEEP_FIELDS = {"k": "knn_k", "h": "hops", "n": "max_sentences", "gamma": "gamma", "K": "top_k"}
SWEEP_RANGES = {"k": (1, 2, 3, 4, 5), "h": (0, 1, 2), "n": (5, 10, 15, 20), "gamma": (1.0, 1.2, 1.5), "K": (5, 10)}


@dataclass
class SweepRow:
    label: str
    variant: str
    k: int
    h: int
    n: int
    gamma: float
    K: int
    scorer: str
    questions: int = 0
    recall_all: float | None = None
    recall_overlap: float | None = None
    accuracy: float | None = None
    errors: int = 0
    failure: str | None = None


def sweep_configs(base: RetrievalConfig, grid: dict[str, Sequence[Any]]) -> list[RetrievalConfig]:
    """Cross product over ``grid`` (keys among k, h, n, gamma, K); other fields keep ``base`` values.

    Rows come out in the fixed nesting order k, h, n, gamma, K.
    """
    unknown = set(grid) - set(SWEEP_FIELDS)
    if unknown:
        raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
    axes = [(name, list(grid.get(name, [getattr(base, f)]))) for name, f in SWEEP_FIELDS.items()]
    out = []
    for values in itertools.product(*(v for _, v in axes)):
        out.append(base.replace(**{SWEEP_FIELDS[name]: val for (name, _), val in zip(axes, values)}))
    return out


def run_sweep(engine: Engine, base: RetrievalConfig, grid: dict[str, Sequence[Any]],
              client: LlmClient | None = None, judge_client: LlmClient | None = None,
              workers: int = 4) -> list[SweepRow]:
    rows = []
    for cfg in sweep_configs(base, grid):
        row = SweepRow(cfg.label, cfg.variant, cfg.knn_k, cfg.hops, cfg.max_sentences, cfg.gamma,
                       cfg.top_k, cfg.scorer.value)
        try:
            (report,), _ = run_benchmark(engine, [cfg], client, judge_client=judge_client,
                                         workers=workers, record_latency=False)
            row.questions, row.recall_all, row.recall_overlap = report.questions, report.recall_all, report.recall_overlap
            row.accuracy, row.errors = report.accuracy, report.errors
        except (SentGraphError, ValueError, OSError) as exc:
            row.failure = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    names = list(SweepRow.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = asdict(r)
        w.writerow({k: ("" if d[k] is None else (f"{d[k]:.6f}" if isinstance(d[k], float) and k != "gamma"
                                                  else d[k])) for k in names})
    return buf.getvalue()

