"""Rule-based sentence boundary detection.

A boundary is placed after a run of ``.``, ``!`` or ``?`` (plus any closing
quotes or brackets) when it is followed by whitespace and then an uppercase
letter, a digit or an opening quote. A single period is not a boundary when
it ends a protected abbreviation, and a run of two or more periods (an
ellipsis) never is.
"""

from __future__ import annotations

import re

ABBREVIATIONS = frozenset(
    {
        "mr.", "mrs.", "ms.", "dr.", "prof.",
        "e.g.", "i.e.", "etc.",
        "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.",
        "sep.", "sept.", "oct.", "nov.", "dec.",
        "u.s.",
    }
)

_CANDIDATE = re.compile(r"[.!?]+[\"')\]”’]*(?=\s)")
_OPENERS = "\"'“‘("


def _starts_sentence(ch: str) -> bool:
    return ch.isupper() or ch.isdigit() or ch in _OPENERS


def _ends_with_abbreviation(text: str, period_pos: int) -> bool:
    start = period_pos
    while start > 0 and not text[start - 1].isspace() and text[start - 1] not in _OPENERS:
        start -= 1
    return text[start : period_pos + 1].lower() in ABBREVIATIONS


def boundaries(text: str) -> list[int]:
    """Offsets just past each sentence-final punctuation run."""
    cuts = []
    for m in _CANDIDATE.finditer(text):
        run = m.group(0).rstrip("\"')]”’")
        if "." in run and set(run) == {"."}:
            if len(run) > 1:
                continue
            if _ends_with_abbreviation(text, m.start()):
                continue
        nxt = m.end()
        while nxt < len(text) and text[nxt].isspace():
            nxt += 1
        if nxt < len(text) and _starts_sentence(text[nxt]):
            cuts.append(m.end())
    return cuts


def split_sentences(text: str) -> list[str]:
    """Split ``text`` into stripped, non-empty sentences in original order.

    Text with no detectable boundary comes back as a single sentence.
    """
    pieces = []
    start = 0
    for cut in boundaries(text):
        piece = text[start:cut].strip()
        if piece:
            pieces.append(piece)
        start = cut
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces
