"""Prompt templates and their rendering.

Templates live as verbatim text files next to this module. Every rendered
prompt is ``template + "\\n\\n" + payload``, so a rendered prompt always starts
with the exact template bytes.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from sentgraph.conversation import Turn, render_dialogue

TEMPLATE_NAMES = ("response", "evaluation", "summary", "fact", "insight")
SEPARATOR = "\n\n"


@lru_cache(maxsize=None)
def template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(name)
    data = resources.files("sentgraph").joinpath("prompts").joinpath(f"{name}.txt").read_bytes()
    return data.decode("utf-8")


def render_response_prompt(question: str, context: str | None = None,
                           question_date: str | None = None) -> str:
    parts = []
    if context:
        parts.append("---Data---\n\n" + context)
    q = f"Question date: {question_date}\n" if question_date else ""
    parts.append(f"---Question---\n\n{q}{question}")
    return template("response") + SEPARATOR + "\n\n".join(parts)


def render_evaluation_prompt(question: str, gold_answer: str, candidate: str) -> str:
    payload = (
        f"Question: {question}\n"
        f"Gold-standard answer: {gold_answer}\n"
        f"Candidate answer: {candidate}"
    )
    return template("evaluation") + SEPARATOR + payload


def render_summary_prompt(turns: Iterable[Turn]) -> str:
    return template("summary") + SEPARATOR + render_dialogue(turns)


def render_fact_prompt(turns: Iterable[Turn]) -> str:
    return template("fact") + SEPARATOR + render_dialogue(turns)


def render_insight_prompt(records: Sequence[tuple[str | None, str]]) -> str:
    """``records`` are ``(timestamp, content)`` pairs, rendered in the template's input shape."""
    lines = [
        "  " + json.dumps({"timestamp": ts or "", "content": content}, ensure_ascii=False)
        for ts, content in records
    ]
    return template("insight") + SEPARATOR + "[\n" + ",\n".join(lines) + "\n]"
