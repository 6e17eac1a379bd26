"""Generated memory: per-session summaries and facts, corpus-wide insights."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import MutableMapping, Sequence

from sentgraph.conversation import ConversationCorpus, chronological_key
from sentgraph.errors import EmptyCompletion, EmptySession, MalformedJson
from sentgraph.llm import LlmClient, parse_json_list
from sentgraph.prompts import render_fact_prompt, render_insight_prompt, render_summary_prompt

log = logging.getLogger(__name__)


class MemoryKind(str, Enum):
    SUMMARY = "summary"
    FACT = "fact"
    INSIGHT = "insight"


@dataclass(frozen=True)
class GeneratedMemory:
    id: str
    kind: MemoryKind
    content: str
    source_session_id: str | None = None
    source_ids: tuple[str, ...] = ()
    timestamp: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "content": self.content,
            "source_session_id": self.source_session_id,
            "source_ids": list(self.source_ids),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratedMemory":
        return cls(d["id"], MemoryKind(d["kind"]), d["content"], d.get("source_session_id"),
                   tuple(d.get("source_ids") or ()), d.get("timestamp"))


def _session_turns(corpus: ConversationCorpus, session_id: str):
    turns = corpus.session_turns(session_id)
    if not turns:
        raise EmptySession(session_id)
    return turns


def generate_summary(client: LlmClient, corpus: ConversationCorpus, session_id: str) -> GeneratedMemory:
    text = client.complete(render_summary_prompt(_session_turns(corpus, session_id)))
    if not text or not text.strip():
        raise EmptyCompletion(f"summary of {session_id}")
    return GeneratedMemory(f"{session_id}_summary", MemoryKind.SUMMARY, text.strip(), session_id,
                           timestamp=corpus.sessions[session_id].timestamp)


def extract_facts(client: LlmClient, corpus: ConversationCorpus, session_id: str) -> list[GeneratedMemory]:
    completion = client.complete(render_fact_prompt(_session_turns(corpus, session_id)))
    items = parse_json_list(completion)
    ts = corpus.sessions[session_id].timestamp
    facts = []
    for item in items:
        if not isinstance(item, str):
            log.warning("session %s: dropping non-string fact %r", session_id, item)
            continue
        if item.strip():
            facts.append(GeneratedMemory(f"{session_id}_fact_{len(facts)}", MemoryKind.FACT,
                                         item.strip(), session_id, timestamp=ts))
    return facts


def reflect_insights(client: LlmClient, facts: Sequence[GeneratedMemory],
                     id_prefix: str = "insight") -> list[GeneratedMemory]:
    """Merge facts into insights.

    Facts are presented in chronological order. An insight keeps the timestamp
    the model gave it when that timestamp is one of the input timestamps;
    otherwise it gets the latest input timestamp. Its ``source_ids`` are the
    facts no later than that timestamp.
    """
    if not facts:
        raise ValueError("reflect_insights needs at least one fact")
    ordered = sorted(facts, key=lambda f: chronological_key(f.timestamp, f.id))
    completion = client.complete(render_insight_prompt([(f.timestamp, f.content) for f in ordered]))
    items = parse_json_list(completion)

    known = {f.timestamp for f in ordered if f.timestamp}
    latest = max((f.timestamp for f in ordered if f.timestamp),
                 key=lambda t: chronological_key(t, ""), default=None)
    insights = []
    for item in items:
        if not isinstance(item, dict) or not str(item.get("content", "")).strip():
            log.warning("dropping malformed insight %r", item)
            continue
        ts = item.get("timestamp")
        ts = ts if ts in known else latest
        bound = chronological_key(ts, "\uffff") if ts else None
        sources = tuple(f.id for f in ordered
                        if bound is None or chronological_key(f.timestamp, "") <= bound)
        insights.append(GeneratedMemory(f"{id_prefix}_{len(insights)}", MemoryKind.INSIGHT,
                                        str(item["content"]).strip(), None, sources, ts))
    return insights


def _session_memories(client: LlmClient, corpus: ConversationCorpus, session_id: str) -> list[GeneratedMemory]:
    out = []
    try:
        out.append(generate_summary(client, corpus, session_id))
    except (EmptyCompletion, EmptySession) as exc:
        log.warning("no summary for %s: %s", session_id, exc)
    try:
        out.extend(extract_facts(client, corpus, session_id))
    except MalformedJson as exc:
        log.warning("skipping facts for %s: malformed completion (%s)", session_id, exc)
    return out


def generate_memories(client: LlmClient, corpus: ConversationCorpus, workers: int = 4,
                      insight_prefix: str = "insight",
                      session_cache: MutableMapping[str, list[GeneratedMemory]] | None = None,
                      ) -> list[GeneratedMemory]:
    """Summaries and facts for every session, then one batch of insights over all facts.

    Sessions are processed concurrently (at most ``workers`` at a time); the
    result order follows session order regardless of completion order.
    ``session_cache`` lets corpora that share sessions reuse their summaries
    and facts.
    """
    sids = list(corpus.sessions)

    def one(sid: str) -> list[GeneratedMemory]:
        if session_cache is not None and sid in session_cache:
            return session_cache[sid]
        mems = _session_memories(client, corpus, sid)
        if session_cache is not None:
            session_cache[sid] = mems
        return mems

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_session = list(pool.map(one, sids))
    out = [m for group in per_session for m in group]
    facts = [m for m in out if m.kind is MemoryKind.FACT]
    if facts:
        try:
            out.extend(reflect_insights(client, facts, insight_prefix))
        except MalformedJson as exc:
            log.warning("skipping insights: malformed completion (%s)", exc)
    return out

