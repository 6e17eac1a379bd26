"""Benchmark ingestion: LongMemEval, LoCoMo and a native JSON format.

Every split carries *scopes*: the set of sessions a question may retrieve
from. A LongMemEval question sees only its own haystack, a LoCoMo question
only its own conversation, and a native file defines its scopes explicitly
(one scope named ``all`` when it does not).
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from sentgraph.conversation import (
    ConversationCorpus,
    Origin,
    RawTurn,
    Speaker,
    decompose_session,
)
from sentgraph.errors import SchemaError

log = logging.getLogger(__name__)

SPLIT_FORMAT = "sentgraph-split"
SPLIT_VERSION = 1

LONGMEMEVAL_TYPES = (
    "single-session-user",
    "single-session-assistant",
    "single-session-preference",
    "multi-session",
    "knowledge-update",
    "temporal-reasoning",
)
LOCOMO_CATEGORIES = {
    1: "multi-hop",
    2: "temporal reasoning",
    3: "open-domain knowledge",
    4: "single-hop",
    5: "adversarial",
}
# per-category counts of the 500-question sample used for the reported results
LOCOMO_SAMPLE_QUOTAS = {"single-hop": 156, "multi-hop": 133, "temporal reasoning": 133,
                        "open-domain knowledge": 78}

_DIA_ID = re.compile(r"D(\d+):(\d+)")


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    text: str
    answer: str
    question_type: str
    question_date: str | None = None
    evidence_ids: tuple[str, ...] = ()  # session ids
    scope: str = "all"
    evidence_dialogue_ids: tuple[str, ...] = ()  # raw dialogue ids, LoCoMo only

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.text,
            "answer": self.answer,
            "question_type": self.question_type,
            "question_date": self.question_date,
            "evidence_ids": list(self.evidence_ids),
            "scope": self.scope,
            "evidence_dialogue_ids": list(self.evidence_dialogue_ids),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QuestionRecord":
        return cls(
            id=str(d["id"]),
            text=str(d["question"]),
            answer=str(d["answer"]),
            question_type=str(d.get("question_type", "unknown")),
            question_date=d.get("question_date"),
            evidence_ids=tuple(d.get("evidence_ids") or ()),
            scope=str(d.get("scope", "all")),
            evidence_dialogue_ids=tuple(d.get("evidence_dialogue_ids") or ()),
        )


@dataclass
class BenchmarkSplit:
    name: str
    corpus: ConversationCorpus
    questions: list[QuestionRecord]
    scopes: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.questions:
            raise SchemaError("split has no questions")
        ids = [q.id for q in self.questions]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise SchemaError(f"duplicate question id {dup!r}")
        if not self.scopes:
            self.scopes = {"all": tuple(self.corpus.sessions)}
        for q in self.questions:
            if q.scope not in self.scopes:
                raise SchemaError(f"question {q.id!r} names unknown scope {q.scope!r}")

    def type_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(q.question_type for q in self.questions).items()))

    def scope_corpus(self, scope: str) -> ConversationCorpus:
        return self.corpus.subset(self.scopes[scope])

    def questions_in(self, scope: str) -> list[QuestionRecord]:
        return [q for q in self.questions if q.scope == scope]

    def select(self, question_ids: Iterable[str]) -> "BenchmarkSplit":
        keep = set(question_ids)
        qs = [q for q in self.questions if q.id in keep]
        used = {q.scope for q in qs}
        return BenchmarkSplit(self.name, self.corpus, qs, {s: v for s, v in self.scopes.items() if s in used})


def _load_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})", str(path)) from None


def _require(record: dict, key: str, where: str) -> Any:
    if not isinstance(record, dict):
        raise SchemaError(f"{where}: expected an object", where)
    if key not in record:
        raise SchemaError(f"{where}: missing field {key!r}", f"{where}.{key}")
    return record[key]


class _SessionPool:
    """Adds sessions to a corpus, sharing identical ones and renaming clashes."""

    def __init__(self, origin: Origin):
        self.corpus = ConversationCorpus(origin=origin)
        self._content: dict[str, tuple] = {}
        self.dropped_turns = 0

    def add(self, session_id: str, timestamp: str | None, turns: Sequence[RawTurn]) -> str | None:
        kept = [t for t in turns if t.text and t.text.strip()]
        self.dropped_turns += len(turns) - len(kept)
        if not kept:
            log.warning("session %s has no text turns; skipped", session_id)
            return None
        key = (timestamp, tuple(kept))
        sid, n = session_id, 1
        while sid in self._content and self._content[sid] != key:
            n += 1
            sid = f"{session_id}~{n}"
        if sid not in self._content:
            self._content[sid] = key
            self.corpus.add_session(*decompose_session(kept, sid, timestamp))
        return sid


def load_longmemeval(path: str | Path, name: str | None = None) -> BenchmarkSplit:
    """Parse a LongMemEval-shaped file: a list of questions, each with its own haystack."""
    data = _load_json(path)
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a list of question records", "$")
    pool = _SessionPool(Origin.LONGMEMEVAL)
    questions, scopes = [], {}
    for i, rec in enumerate(data):
        where = f"[{i}]"
        qid = str(_require(rec, "question_id", where))
        qtype = str(_require(rec, "question_type", where))
        sessions = _require(rec, "haystack_sessions", where)
        sids = _require(rec, "haystack_session_ids", where)
        dates = rec.get("haystack_dates") or [None] * len(sessions)
        if not (isinstance(sessions, list) and isinstance(sids, list) and len(sessions) == len(sids) == len(dates)):
            raise SchemaError(f"{where}: haystack fields differ in length", f"{where}.haystack_sessions")
        renamed: dict[str, str] = {}
        scope_sids = []
        for j, (sid, ts, sess) in enumerate(zip(sids, dates, sessions)):
            if not isinstance(sess, list):
                raise SchemaError(f"{where}.haystack_sessions[{j}]: expected a list of turns",
                                  f"{where}.haystack_sessions[{j}]")
            raw = []
            for w, t in enumerate(sess):
                twhere = f"{where}.haystack_sessions[{j}][{w}]"
                role = _require(t, "role", twhere)
                try:
                    speaker = Speaker.parse(role)
                except ValueError:
                    raise SchemaError(f"{twhere}: unknown role {role!r}", f"{twhere}.role") from None
                raw.append(RawTurn(speaker, str(_require(t, "content", twhere))))
            got = pool.add(str(sid), ts, raw)
            if got is not None:
                renamed[str(sid)] = got
                scope_sids.append(got)
        evidence = tuple(renamed.get(str(s), str(s)) for s in rec.get("answer_session_ids") or ())
        scopes[qid] = tuple(scope_sids)
        questions.append(QuestionRecord(
            id=qid,
            text=str(_require(rec, "question", where)),
            answer=str(_require(rec, "answer", where)),
            question_type=qtype,
            question_date=rec.get("question_date"),
            evidence_ids=evidence,
            scope=qid,
        ))
    if pool.dropped_turns:
        log.warning("%s: dropped %d empty turns", path, pool.dropped_turns)
    return BenchmarkSplit(name or Path(path).stem, pool.corpus, questions, scopes)


def _locomo_sessions(conv: dict, where: str) -> list[tuple[int, str | None, list]]:
    out = []
    for key, turns in conv.items():
        m = re.fullmatch(r"session_(\d+)", key)
        if not m:
            continue
        if not isinstance(turns, list):
            raise SchemaError(f"{where}.{key}: expected a list of turns", f"{where}.{key}")
        out.append((int(m.group(1)), conv.get(f"{key}_date_time"), turns))
    return sorted(out, key=lambda t: t[0])


def _locomo_text(turn: dict) -> str:
    text = str(turn.get("text") or "").strip()
    caption = str(turn.get("blip_caption") or "").strip()
    if text:
        return text
    return f"[shares an image: {caption}]" if caption else ""


def sample_questions(questions: Sequence[QuestionRecord], size: int, seed: int,
                     quotas: dict[str, int] | None = None) -> list[QuestionRecord]:
    """Seeded shuffle then prefix take; with ``quotas``, the prefix is taken per type.

    The sample is returned in the original question order.
    """
    order = list(range(len(questions)))
    random.Random(seed).shuffle(order)
    if quotas is None:
        if size > len(order):
            raise ValueError(f"cannot sample {size} of {len(order)} questions")
        picked = set(order[:size])
    else:
        if sum(quotas.values()) != size:
            raise ValueError("quotas must sum to the sample size")
        left = dict(quotas)
        picked = set()
        for i in order:
            t = questions[i].question_type
            if left.get(t, 0) > 0:
                picked.add(i)
                left[t] -= 1
        short = {t: n for t, n in left.items() if n}
        if short:
            raise ValueError(f"not enough questions for quotas: {short}")
    return [q for i, q in enumerate(questions) if i in picked]


def load_locomo(path: str | Path, sample: tuple[int, int] | None = None, *,
                quotas: dict[str, int] | None = None, include_adversarial: bool = False,
                name: str | None = None) -> BenchmarkSplit:
    """Parse a LoCoMo-shaped file: a list of conversations with QA annotations.

    Session ``session_N`` of conversation ``C`` becomes ``C_s<N-1>``. Speaker A
    is treated as the user side and speaker B as the assistant side; names are
    kept on every turn. Image turns keep their caption; turns with neither text
    nor caption are dropped. Dialogue evidence such as ``D16:9`` is kept and
    resolved to the session that contains it.
    """
    data = _load_json(path)
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a list of conversations", "$")
    pool = _SessionPool(Origin.LOCOMO)
    questions: list[QuestionRecord] = []
    scopes: dict[str, tuple[str, ...]] = {}
    for i, rec in enumerate(data):
        where = f"[{i}]"
        conv_id = str(_require(rec, "sample_id", where))
        conv = _require(rec, "conversation", where)
        if not isinstance(conv, dict):
            raise SchemaError(f"{where}.conversation: expected an object", f"{where}.conversation")
        speaker_a = conv.get("speaker_a")
        dia_session: dict[str, str] = {}
        scope_sids = []
        for number, ts, turns in _locomo_sessions(conv, f"{where}.conversation"):
            sid = f"{conv_id}_s{number - 1}"
            raw = []
            for w, t in enumerate(turns):
                twhere = f"{where}.conversation.session_{number}[{w}]"
                spk = str(_require(t, "speaker", twhere))
                role = Speaker.USER if speaker_a is None or spk == speaker_a else Speaker.ASSISTANT
                raw.append(RawTurn(role, _locomo_text(t), None, spk, t.get("dia_id")))
            got = pool.add(sid, ts, raw)
            if got is None:
                continue
            scope_sids.append(got)
            for t in turns:
                if t.get("dia_id"):
                    dia_session[str(t["dia_id"])] = got
        scopes[conv_id] = tuple(scope_sids)
        for j, qa in enumerate(_require(rec, "qa", where)):
            qwhere = f"{where}.qa[{j}]"
            cat = _require(qa, "category", qwhere)
            if cat not in LOCOMO_CATEGORIES:
                raise SchemaError(f"{qwhere}: unknown category {cat!r}", f"{qwhere}.category")
            if cat == 5 and not include_adversarial:
                continue
            answer = qa.get("answer", qa.get("adversarial_answer"))
            if answer is None:
                raise SchemaError(f"{qwhere}: missing field 'answer'", f"{qwhere}.answer")
            dia_ids = []
            for ev in qa.get("evidence") or ():
                dia_ids.extend(f"D{a}:{b}" for a, b in _DIA_ID.findall(str(ev)))
            ev_sessions = []
            for d in dia_ids:
                sid = dia_session.get(d) or f"{conv_id}_s{int(_DIA_ID.match(d).group(1)) - 1}"
                if sid not in ev_sessions:
                    ev_sessions.append(sid)
            questions.append(QuestionRecord(
                id=f"{conv_id}_q{j}",
                text=str(_require(qa, "question", qwhere)),
                answer=str(answer),
                question_type=LOCOMO_CATEGORIES[cat],
                evidence_ids=tuple(ev_sessions),
                scope=conv_id,
                evidence_dialogue_ids=tuple(dia_ids),
            ))
    if pool.dropped_turns:
        log.warning("%s: dropped %d turns without text or caption", path, pool.dropped_turns)
    if sample is not None:
        questions = sample_questions(questions, sample[0], sample[1], quotas)
    split = BenchmarkSplit(name or Path(path).stem, pool.corpus, questions, scopes)
    used = {q.scope for q in questions}
    split.scopes = {s: v for s, v in scopes.items() if s in used}
    return split


def load_custom(path: str | Path, name: str | None = None) -> BenchmarkSplit:
    """Native format: ``{"sessions": [...], "questions": [...], "scopes": {...}?}``.

    A session is ``{"id", "timestamp"?, "turns": [{"speaker", "text", "timestamp"?, "name"?}]}``;
    a question follows :meth:`QuestionRecord.to_dict`. Files written by
    :func:`save_split` load here as well.
    """
    data = _load_json(path)
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected an object", "$")
    if data.get("format") == SPLIT_FORMAT and data.get("version") != SPLIT_VERSION:
        raise SchemaError(f"{path}: unsupported split version {data.get('version')!r}", "$.version")
    corpus = ConversationCorpus(origin=Origin(data.get("origin", Origin.CUSTOM.value)))
    for i, sess in enumerate(_require(data, "sessions", "$")):
        where = f"sessions[{i}]"
        sid = str(_require(sess, "id", where))
        raw = []
        for w, t in enumerate(_require(sess, "turns", where)):
            twhere = f"{where}.turns[{w}]"
            raw.append(RawTurn(str(_require(t, "speaker", twhere)), str(_require(t, "text", twhere)),
                               t.get("timestamp"), t.get("name"), t.get("source_id")))
        try:
            corpus.add_session(*decompose_session(raw, sid, sess.get("timestamp")))
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}", where) from None
    questions = []
    for i, q in enumerate(_require(data, "questions", "$")):
        where = f"questions[{i}]"
        for key in ("id", "question", "answer"):
            _require(q, key, where)
        questions.append(QuestionRecord.from_dict(q))
    scopes = {str(k): tuple(v) for k, v in (data.get("scopes") or {}).items()}
    for scope, sids in scopes.items():
        missing = [s for s in sids if s not in corpus.sessions]
        if missing:
            raise SchemaError(f"scope {scope!r} names unknown sessions {missing}", f"scopes.{scope}")
    return BenchmarkSplit(name or data.get("name") or Path(path).stem, corpus, questions, scopes)


LOADERS = {"longmemeval": load_longmemeval, "locomo": load_locomo, "custom": load_custom}


def load_dataset(path: str | Path, kind: str = "custom", **kwargs: Any) -> BenchmarkSplit:
    try:
        loader = LOADERS[kind]
    except KeyError:
        raise ValueError(f"unknown dataset kind {kind!r}") from None
    return loader(path, **kwargs)


def split_to_dict(split: BenchmarkSplit) -> dict[str, Any]:
    corpus = split.corpus
    sessions = []
    for sess in corpus.sessions.values():
        turns = [{"speaker": t.speaker.value, "text": t.text, "timestamp": t.timestamp,
                  "name": t.name, "source_id": t.source_id} for t in corpus.session_turns(sess.id)]
        sessions.append({"id": sess.id, "timestamp": sess.timestamp, "turns": turns})
    return {
        "format": SPLIT_FORMAT,
        "version": SPLIT_VERSION,
        "name": split.name,
        "origin": corpus.origin.value,
        "sessions": sessions,
        "scopes": {k: list(v) for k, v in split.scopes.items()},
        "questions": [q.to_dict() for q in split.questions],
    }


def save_split(split: BenchmarkSplit, path: str | Path) -> None:
    """Write the engine-native, versioned JSON form of a split."""
    tmp = Path(f"{path}.tmp")
    tmp.write_text(json.dumps(split_to_dict(split), ensure_ascii=False, indent=1), encoding="utf-8")
    tmp.replace(path)
