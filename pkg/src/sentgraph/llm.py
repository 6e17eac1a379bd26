"""LLM client interface, a scripted mock, and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, runtime_checkable

from sentgraph.embedding import STOPWORDS, tokenize
from sentgraph.errors import EmptyCompletion, LlmUnavailable, MalformedJson, UnknownPrompt
from sentgraph.prompts import SEPARATOR, TEMPLATE_NAMES, template
from sentgraph.segmenter import split_sentences

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    top_p: float = 0.8
    top_k: int | None = 20
    max_tokens: int = 8192


@runtime_checkable
class LlmClient(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


def prompt_fingerprint(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass
class MockLlm:
    """Deterministic client answering from a table keyed by prompt fingerprint.

    ``fallback``, when given, handles prompts missing from the table; without
    it an unknown prompt raises :class:`UnknownPrompt`.
    """

    responses: dict[str, str] = field(default_factory=dict)
    fallback: Callable[[str], str] | None = None
    name: str = "mock"
    calls: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def script(self, prompt: str, response: str) -> None:
        self.responses[prompt_fingerprint(prompt)] = response

    def complete(self, prompt: str) -> str:
        fp = prompt_fingerprint(prompt)
        with self._lock:
            self.calls.append(fp)
        if fp in self.responses:
            return self.responses[fp]
        if self.fallback is not None:
            return self.fallback(prompt)
        raise UnknownPrompt(fp)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockLlm":
        """Load ``{fingerprint: response}`` JSON (a ``"responses"`` wrapper is also accepted)."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if "responses" in data and isinstance(data["responses"], dict):
            data = data["responses"]
        return cls(responses={str(k): str(v) for k, v in data.items()})


class OpenAICompatibleLlm:
    """Chat-completions client for any OpenAI-compatible endpoint."""

    def __init__(self, endpoint: str, model: str, params: GenerationParams | None = None,
                 api_key_env: str = "SENTGRAPH_API_KEY", timeout: float = 120.0, retries: int = 2):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.params = params or GenerationParams()
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.name = f"openai:{model}"

    def _body(self, prompt: str) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.params.temperature,
            "top_p": self.params.top_p,
            "max_tokens": self.params.max_tokens,
        }
        if self.params.top_k is not None:
            body["top_k"] = self.params.top_k
        return body

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = self.endpoint if self.endpoint.endswith("/chat/completions") else f"{self.endpoint}/chat/completions"
        req = urllib.request.Request(url, data=json.dumps(self._body(prompt)).encode("utf-8"), headers=headers)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                text = payload["choices"][0]["message"]["content"]
                break
            except (urllib.error.URLError, OSError, KeyError, IndexError, ValueError) as exc:
                last = exc
                time.sleep(min(2.0**attempt, 8.0))
        else:
            raise LlmUnavailable(f"{url}: {last}") from last
        if not text or not text.strip():
            raise EmptyCompletion(self.name)
        return text


# -- completion parsing -------------------------------------------------------

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.S)


def strip_fences(text: str) -> str:
    m = _FENCE.search(text)
    return (m.group(1) if m else text).strip()


def _loads(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        pass
    try:
        # single-quoted pseudo-JSON, as shown in some prompt templates
        return ast.literal_eval(text)
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        raise MalformedJson(text[:200]) from None


def parse_json(text: str, opener: str, closer: str) -> Any:
    """Parse fenced or bare JSON; on failure retry once on the widest opener..closer span."""
    body = strip_fences(text)
    try:
        return _loads(body)
    except MalformedJson:
        pass
    start, end = text.find(opener), text.rfind(closer)
    if start == -1 or end <= start:
        raise MalformedJson(text[:200])
    return _loads(text[start : end + 1])


def parse_json_list(text: str) -> list:
    value = parse_json(text, "[", "]")
    if not isinstance(value, list):
        raise MalformedJson(f"expected a JSON list, got {type(value).__name__}")
    return value


def parse_json_object(text: str) -> Mapping:
    value = parse_json(text, "{", "}")
    if not isinstance(value, Mapping):
        raise MalformedJson(f"expected a JSON object, got {type(value).__name__}")
    return value


# -- offline stand-in ----------------------------------------------------------

_DATA_MARK = "---Data---\n\n"
_QUESTION_MARK = "---Question---\n\n"
_LINE_PREFIX = re.compile(r"^(?:- )?(?:\[[^\]]*\] )?(?:[A-Z]+: )?")


def _content_tokens(text: str) -> set[str]:
    return {t for t in tokenize(text) if t not in STOPWORDS}


def _dialogue_lines(payload: str) -> list[tuple[str, str]]:
    out = []
    for line in payload.splitlines():
        label, sep, text = line.partition(": ")
        if sep and text.strip():
            out.append((label, text.strip()))
    return out


class ExtractiveLlm:
    """Deterministic, network-free client for demos and tests.

    It recognises each bundled prompt by its template prefix and answers
    extractively: user sentences become facts, the context sentence sharing
    most words with the question becomes the answer, and the judge checks that
    every content word of the gold answer occurs in the candidate.
    """

    name = "extractive"

    def __init__(self) -> None:
        self._prefixes = [(n, template(n) + SEPARATOR) for n in TEMPLATE_NAMES]

    def complete(self, prompt: str) -> str:
        for name, prefix in self._prefixes:
            if prompt.startswith(prefix):
                return getattr(self, f"_{name}")(prompt[len(prefix):])
        raise UnknownPrompt(prompt_fingerprint(prompt))

    def _user_sentences(self, payload: str) -> list[str]:
        return [s for label, text in _dialogue_lines(payload) if label == "USER"
                for s in split_sentences(text)]

    def _summary(self, payload: str) -> str:
        lines = _dialogue_lines(payload)
        firsts = [text.split(". ")[0].rstrip(".") + "." for label, text in lines if label == "USER"]
        return " ".join(firsts[:3]) or lines[0][1]

    def _fact(self, payload: str) -> str:
        return json.dumps(self._user_sentences(payload), ensure_ascii=False)

    def _insight(self, payload: str) -> str:
        records = parse_json_list(payload)
        seen, out = set(), []
        for r in records:
            if r["content"] not in seen:
                seen.add(r["content"])
                out.append({"timestamp": r["timestamp"], "content": r["content"]})
        return json.dumps(out, ensure_ascii=False)

    def _response(self, payload: str) -> str:
        data, _, question = payload.rpartition(_QUESTION_MARK)
        question = question.split("\n", 1)[1] if question.startswith("Question date: ") else question
        if not data.startswith(_DATA_MARK):
            return "I don't know."
        wanted = _content_tokens(question)
        best, best_overlap = "I don't know.", 0
        for line in data[len(_DATA_MARK):].splitlines():
            if line.startswith("#"):
                continue
            for sent in split_sentences(_LINE_PREFIX.sub("", line)):
                overlap = len(wanted & _content_tokens(sent))
                if overlap > best_overlap:
                    best, best_overlap = sent, overlap
        return best

    def _evaluation(self, payload: str) -> str:
        head, _, candidate = payload.partition("\nCandidate answer: ")
        gold = head.partition("\nGold-standard answer: ")[2]
        gold_tokens = _content_tokens(gold) or set(gold.lower().split())
        ok = bool(gold_tokens) and gold_tokens <= _content_tokens(candidate) | set(candidate.lower().split())
        return json.dumps({"score": int(ok)})
