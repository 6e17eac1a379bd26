"""Dialogue hierarchy: sessions, rounds, turns and sentences.

Identifiers follow one scheme throughout the engine::

    session   <session_id>
    round     <session_id>_r<v>
    turn      <session_id>_<w>        (w = position of the turn in the session)
    sentence  <turn_id>_<j>           (j = position of the sentence in the turn)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

from sentgraph.errors import EmptySession, InvalidTurn
from sentgraph.segmenter import split_sentences


class Speaker(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"

    @classmethod
    def parse(cls, value: "Speaker | str") -> "Speaker":
        if isinstance(value, Speaker):
            return value
        return cls(str(value).strip().lower())


class Granularity(str, Enum):
    TURN = "turn"
    ROUND = "round"
    SESSION = "session"

    @property
    def letter(self) -> str:
        return self.value[0].upper()

    @classmethod
    def parse(cls, value: "Granularity | str") -> "Granularity":
        if isinstance(value, Granularity):
            return value
        v = str(value).strip().lower()
        for g in cls:
            if v in (g.value, g.value[0]):
                return g
        raise ValueError(f"unknown granularity {value!r}")


class Origin(str, Enum):
    LONGMEMEVAL = "longmemeval"
    LOCOMO = "locomo"
    CUSTOM = "custom"


class RawTurn(NamedTuple):
    speaker: Speaker | str
    text: str
    timestamp: str | None = None
    name: str | None = None
    source_id: str | None = None


@dataclass(frozen=True)
class Turn:
    id: str
    session_id: str
    round_index: int
    speaker: Speaker
    text: str
    timestamp: str | None = None
    name: str | None = None
    source_id: str | None = None

    @property
    def label(self) -> str:
        return self.name or self.speaker.value.upper()


@dataclass(frozen=True)
class Round:
    id: str
    session_id: str
    index: int
    turns: tuple[str, ...]


@dataclass(frozen=True)
class Session:
    id: str
    rounds: tuple[str, ...]
    timestamp: str | None = None


@dataclass(frozen=True)
class Sentence:
    id: str
    turn_id: str
    index: int
    text: str


@dataclass(frozen=True)
class Chunk:
    """A turn, round or session viewed as a retrievable unit.

    ``text`` is the plain concatenation of turn texts (what gets embedded);
    ``dialogue`` prefixes each turn with its speaker label (what gets shown).
    """

    id: str
    granularity: Granularity
    session_id: str
    text: str
    dialogue: str
    sentence_ids: tuple[str, ...]
    timestamp: str | None = None


@dataclass
class ConversationCorpus:
    sessions: dict[str, Session] = field(default_factory=dict)
    rounds: dict[str, Round] = field(default_factory=dict)
    turns: dict[str, Turn] = field(default_factory=dict)
    sentences: dict[str, Sentence] = field(default_factory=dict)
    origin: Origin = Origin.CUSTOM
    # turn id -> ordered sentence ids
    turn_sentences: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def add_session(self, session: Session, rounds: Sequence[Round], turns: Sequence[Turn]) -> None:
        if session.id in self.sessions:
            raise ValueError(f"duplicate session id {session.id!r}")
        self.sessions[session.id] = session
        for r in rounds:
            self.rounds[r.id] = r
        for t in turns:
            if t.id in self.turns:
                raise ValueError(f"duplicate turn id {t.id!r}")
            self.turns[t.id] = t
            sents = segment_turn(t)
            self.turn_sentences[t.id] = tuple(s.id for s in sents)
            for s in sents:
                self.sentences[s.id] = s

    def session_turns(self, session_id: str) -> list[Turn]:
        session = self.sessions[session_id]
        return [self.turns[t] for r in session.rounds for t in self.rounds[r].turns]

    def round_sentences(self, round_id: str) -> tuple[str, ...]:
        return tuple(s for t in self.rounds[round_id].turns for s in self.turn_sentences[t])

    def validate(self) -> None:
        """Check that every cross reference resolves and turns are owned once."""
        owner: dict[str, str] = {}
        for sess in self.sessions.values():
            if not sess.rounds:
                raise ValueError(f"session {sess.id} has no rounds")
            for rid in sess.rounds:
                rnd = self.rounds[rid]
                if rnd.session_id != sess.id:
                    raise ValueError(f"round {rid} points at {rnd.session_id}")
                for tid in rnd.turns:
                    if tid in owner:
                        raise ValueError(f"turn {tid} owned by {owner[tid]} and {rid}")
                    owner[tid] = rid
                    if self.turns[tid].session_id != sess.id:
                        raise ValueError(f"turn {tid} points at wrong session")
        if set(owner) != set(self.turns):
            raise ValueError("turns not reachable from any session")
        for sid, sent in self.sentences.items():
            if sent.turn_id not in self.turns:
                raise ValueError(f"sentence {sid} points at unknown turn")

    def subset(self, session_ids: Iterable[str]) -> "ConversationCorpus":
        """A corpus holding only the given sessions (shared, immutable records)."""
        out = ConversationCorpus(origin=self.origin)
        for sid in session_ids:
            sess = self.sessions[sid]
            out.sessions[sid] = sess
            for rid in sess.rounds:
                out.rounds[rid] = self.rounds[rid]
                for tid in self.rounds[rid].turns:
                    out.turns[tid] = self.turns[tid]
                    out.turn_sentences[tid] = self.turn_sentences[tid]
                    for s in self.turn_sentences[tid]:
                        out.sentences[s] = self.sentences[s]
        return out


def decompose_session(
    raw_session: Sequence[RawTurn | tuple],
    session_id: str,
    timestamp: str | None = None,
) -> tuple[Session, list[Round], list[Turn]]:
    """Group a flat list of turns into user/assistant rounds.

    A user turn always opens a new round; an assistant turn joins the open
    round only when that round holds a user turn and no assistant turn yet,
    otherwise it opens a round of its own.
    """
    if not raw_session:
        raise EmptySession(f"session {session_id!r} has no turns")
    groups: list[list[int]] = []
    open_has_user = False
    open_has_assistant = False
    parsed = [RawTurn(*raw) if not isinstance(raw, RawTurn) else raw for raw in raw_session]
    for w, raw in enumerate(parsed):
        speaker = Speaker.parse(raw.speaker)
        if not raw.text or not raw.text.strip():
            raise InvalidTurn(f"turn {w} of session {session_id!r} is empty")
        if speaker is Speaker.USER or not groups or not open_has_user or open_has_assistant:
            groups.append([w])
            open_has_user = speaker is Speaker.USER
            open_has_assistant = speaker is Speaker.ASSISTANT
        else:
            groups[-1].append(w)
            open_has_assistant = True

    turns: list[Turn] = []
    rounds: list[Round] = []
    for v, members in enumerate(groups):
        rid = f"{session_id}_r{v}"
        ids = []
        for w in members:
            raw = parsed[w]
            tid = f"{session_id}_{w}"
            ids.append(tid)
            turns.append(
                Turn(
                    id=tid,
                    session_id=session_id,
                    round_index=v,
                    speaker=Speaker.parse(raw.speaker),
                    text=raw.text,
                    timestamp=raw.timestamp,
                    name=raw.name,
                    source_id=raw.source_id,
                )
            )
        rounds.append(Round(id=rid, session_id=session_id, index=v, turns=tuple(ids)))
    session = Session(id=session_id, rounds=tuple(r.id for r in rounds), timestamp=timestamp)
    return session, rounds, turns


def segment_turn(turn: Turn) -> list[Sentence]:
    pieces = split_sentences(turn.text) or [turn.text.strip()]
    return [Sentence(id=f"{turn.id}_{j}", turn_id=turn.id, index=j, text=p) for j, p in enumerate(pieces)]


def build_corpus(
    sessions: Iterable[tuple[str, str | None, Sequence[RawTurn | tuple]]],
    origin: Origin = Origin.CUSTOM,
) -> ConversationCorpus:
    """Build a corpus from ``(session_id, timestamp, raw_turns)`` triples."""
    corpus = ConversationCorpus(origin=origin)
    for session_id, ts, raw in sessions:
        corpus.add_session(*decompose_session(raw, session_id, ts))
    return corpus


def _chunk(corpus: ConversationCorpus, cid: str, gran: Granularity, session_id: str,
           turn_ids: Sequence[str], timestamp: str | None) -> Chunk:
    turns = [corpus.turns[t] for t in turn_ids]
    return Chunk(
        id=cid,
        granularity=gran,
        session_id=session_id,
        text="\n".join(t.text.strip() for t in turns),
        dialogue="\n".join(f"{t.label}: {t.text.strip()}" for t in turns),
        sentence_ids=tuple(s for t in turn_ids for s in corpus.turn_sentences[t]),
        timestamp=timestamp,
    )


def chunks_at(corpus: ConversationCorpus, granularity: Granularity | str) -> list[Chunk]:
    """Chunk views of the corpus at one granularity, in dialogue order."""
    gran = Granularity.parse(granularity)
    out = []
    for sess in corpus.sessions.values():
        if gran is Granularity.SESSION:
            tids = [t for r in sess.rounds for t in corpus.rounds[r].turns]
            out.append(_chunk(corpus, sess.id, gran, sess.id, tids, sess.timestamp))
            continue
        for rid in sess.rounds:
            rnd = corpus.rounds[rid]
            if gran is Granularity.ROUND:
                ts = corpus.turns[rnd.turns[0]].timestamp or sess.timestamp
                out.append(_chunk(corpus, rid, gran, sess.id, rnd.turns, ts))
            else:
                for tid in rnd.turns:
                    ts = corpus.turns[tid].timestamp or sess.timestamp
                    out.append(_chunk(corpus, tid, gran, sess.id, [tid], ts))
    return out


def render_dialogue(turns: Iterable[Turn]) -> str:
    return "\n".join(f"{t.label}: {t.text.strip()}" for t in turns)


_LME_FORMAT = re.compile(r"^(\d{4})/(\d{2})/(\d{2})\s*(?:\([A-Za-z]{3}\))?\s*(\d{1,2}):(\d{2})$")
_LOCOMO_FORMATS = ("%I:%M %p on %d %B, %Y", "%I:%M %p on %d %b, %Y", "%I:%M %p on %B %d, %Y")


def parse_timestamp(value: str | None) -> datetime | None:
    """Best-effort parse of the timestamp styles found in the benchmarks.

    Accepts ISO-8601, ``2023/05/30 (Tue) 23:40`` and ``1:56 pm on 8 May, 2023``.
    Returns None for anything else.
    """
    if not value:
        return None
    value = value.strip()
    try:
        dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
        return dt.replace(tzinfo=None)
    except ValueError:
        pass
    m = _LME_FORMAT.match(value)
    if m:
        y, mo, d, hh, mm = (int(x) for x in m.groups())
        return datetime(y, mo, d, hh, mm)
    for fmt in _LOCOMO_FORMATS:
        try:
            return datetime.strptime(value, fmt)
        except ValueError:
            continue
    return None


def chronological_key(timestamp: str | None, ident: str) -> tuple:
    """Sort key: parsed time first, unparseable-but-present next, missing last; then id."""
    dt = parse_timestamp(timestamp)
    if dt is not None:
        return (0, dt.isoformat(), ident)
    if timestamp:
        return (1, timestamp, ident)
    return (2, "", ident)
