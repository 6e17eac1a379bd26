"""Builders for random corpora, hand-placed embeddings and synthetic benchmark files."""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np

from sentgraph.conversation import ConversationCorpus, build_corpus
from sentgraph.embedding import HashEmbedder

WORDS = (
    "apple river mountain coffee guitar puppy marathon garden pasta violin lemon rocket "
    "winter beach novel camera tennis museum bakery forest candle jacket harbor pepper "
    "planet tulip wallet piano yogurt zebra castle desert engine falcon glacier island"
).split()


def random_sentence(rng: random.Random, words=WORDS) -> str:
    toks = [rng.choice(words) for _ in range(rng.randint(2, 6))]
    return toks[0].capitalize() + " " + " ".join(toks[1:]) + rng.choice([".", "!", "?"])


def random_corpus(rng: random.Random, max_sentences: int = 200, sessions: int | None = None,
                  words=WORDS) -> ConversationCorpus:
    """Random sessions of alternating turns holding one to three sentences each."""
    raw = []
    total = 0
    n_sessions = sessions or rng.randint(1, 6)
    for s in range(n_sessions):
        turns = []
        for w in range(rng.randint(1, 8)):
            if total >= max_sentences:
                break
            m = min(rng.randint(1, 3), max_sentences - total)
            total += m
            speaker = "user" if (w % 2 == 0) != (rng.random() < 0.1) else "assistant"
            turns.append((speaker, " ".join(random_sentence(rng, words) for _ in range(m))))
        if turns:
            raw.append((f"s{s}", f"2023/0{1 + s % 9}/1{s % 10} (Mon) 10:00", turns))
    if not raw:
        raw.append(("s0", None, [("user", random_sentence(rng, words))]))
    return build_corpus(raw)


class VectorEmbedder:
    """Provider returning hand-placed vectors for known texts, hashed vectors otherwise."""

    name = "vectors"

    def __init__(self, table: dict[str, list[float]], dim: int):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.dim = dim
        self._fallback = HashEmbedder(dim=dim)

    @property
    def fingerprint(self) -> str:
        return f"vectors:dim={self.dim}:n={len(self.table)}"

    def embed_raw(self, texts):
        out = self._fallback.embed_raw(texts)
        for i, t in enumerate(texts):
            if t in self.table:
                out[i] = self.table[t]
        return out


# -- synthetic benchmark files ---------------------------------------------------

LONGMEMEVAL_COUNTS = {
    "single-session-user": 70,
    "single-session-assistant": 56,
    "single-session-preference": 30,
    "multi-session": 133,
    "knowledge-update": 78,
    "temporal-reasoning": 133,
}


def _pool_date(sid: str) -> str:
    return f"2023/04/{1 + int(sid[-4:]) % 28:02d} (Sat) 10:00"


def longmemeval_records(seed: int = 0, counts: dict[str, int] = LONGMEMEVAL_COUNTS,
                        haystack: int = 3, pool: int = 40) -> list[dict]:
    """LongMemEval-shaped records whose haystacks draw on a shared session pool."""
    rng = random.Random(seed)
    sessions = {}
    for p in range(pool):
        sid = f"sharegpt_{p:04d}"
        sessions[sid] = [{"role": "user", "content": random_sentence(rng)},
                         {"role": "assistant", "content": random_sentence(rng)}]
    types = [t for t, n in counts.items() for _ in range(n)]
    rng.shuffle(types)
    out = []
    for i, qtype in enumerate(types):
        qid = f"{i:08x}"
        answer_sid = f"answer_{qid}_1"
        planted = f"My favourite {rng.choice(WORDS)} is called Item{i}."
        picked = rng.sample(sorted(sessions), haystack - 1)
        hay_ids = picked + [answer_sid]
        hay = [sessions[s] for s in picked] + [[{"role": "user", "content": planted, "has_answer": True},
                                                 {"role": "assistant", "content": "Noted, thanks!"}]]
        out.append({
            "question_id": qid,
            "question_type": qtype,
            "question": f"What is my favourite thing called? ({i})",
            "answer": f"Item{i}" if i % 7 else i,
            "question_date": "2023/05/30 (Tue) 23:40",
            "haystack_dates": [_pool_date(s) for s in picked] + ["2023/05/29 (Mon) 10:00"],
            "haystack_session_ids": hay_ids,
            "haystack_sessions": hay,
            "answer_session_ids": [answer_sid],
        })
    return out


LOCOMO_CATEGORY_COUNTS = {1: 282, 2: 321, 3: 96, 4: 841, 5: 446}


def locomo_records(seed: int = 0, conversations: int = 10, sessions: int = 20,
                   counts: dict[int, int] = LOCOMO_CATEGORY_COUNTS) -> list[dict]:
    """LoCoMo-shaped conversations; question categories follow ``counts`` overall."""
    rng = random.Random(seed)
    cats = [c for c, n in counts.items() for _ in range(n)]
    rng.shuffle(cats)
    per_conv = [cats[i::conversations] for i in range(conversations)]
    out = []
    for c in range(conversations):
        conv_id = f"conv-{26 + c}"
        conv = {"speaker_a": "Ann", "speaker_b": "Bob"}
        for s in range(1, sessions + 1):
            turns = []
            for w in range(1, 5):
                turn = {"speaker": "Ann" if w % 2 else "Bob", "dia_id": f"D{s}:{w}", "text": random_sentence(rng)}
                if w == 4 and s % 5 == 0:
                    turn["text"] = ""
                    turn["img_url"] = ["http://example.invalid/x.jpg"]
                    if s % 10 == 0:
                        turn["blip_caption"] = "a photo of a dog on a beach"
                turns.append(turn)
            conv[f"session_{s}"] = turns
            conv[f"session_{s}_date_time"] = f"1:56 pm on {s} May, 2023"
        qa = []
        for j, cat in enumerate(per_conv[c]):
            s = rng.randint(1, sessions)
            item = {"question": f"Question {j} of {conv_id}?", "evidence": [f"D{s}:{rng.randint(1, 3)}"],
                    "category": cat}
            if cat == 5:
                item["adversarial_answer"] = "not mentioned"
            else:
                item["answer"] = f"answer {j}"
            qa.append(item)
        out.append({"sample_id": conv_id, "conversation": conv, "qa": qa})
    return out


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data), encoding="utf-8")
    return path
