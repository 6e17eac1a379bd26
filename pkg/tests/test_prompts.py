import hashlib
import json

import pytest

from sentgraph.conversation import build_corpus
from sentgraph.prompts import (
    SEPARATOR,
    TEMPLATE_NAMES,
    render_evaluation_prompt,
    render_fact_prompt,
    render_insight_prompt,
    render_response_prompt,
    render_summary_prompt,
    template,
)

# sha256 of the bundled template files; any byte change to a template fails here
PINNED = {
    "response": "1d87718d5f026740f728cc7163c66654ad6f71df2f83b292112a1921b0eea980",
    "evaluation": "9afac9a34949f8b5a95edec038cdfed2fd8465a6b79247323fe0070a41bf4f8f",
    "summary": "59f257e36d997c45ec6bc3d578222c04d9e0e28239ed547b87cc060c94fc83cd",
    "fact": "7dfd7cec167541857ea0e71fa4ce31b1280d4579a41fbad4344bb36a79f5918a",
    "insight": "91109f08da31889e23f47168eb7d15a52e0e678337882dd716ed37e040044e69",
}


@pytest.mark.parametrize("name", TEMPLATE_NAMES)
def test_template_bytes_are_pinned(name):
    assert hashlib.sha256(template(name).encode("utf-8")).hexdigest() == PINNED[name]


def test_template_landmarks():
    assert template("response").startswith("---Role---\n\nYou are a helpful assistant")
    assert template("evaluation").rstrip().endswith("where X is either 1 or 0.")
    assert "--- Output Format ---" in template("fact")
    assert "{'timestamp': '', 'content': ''}" in template("insight")
    with pytest.raises(KeyError):
        template("nope")


def _corpus():
    return build_corpus([("s", None, [("user", "I live in Oslo."), ("assistant", "Nice city.")])])


def test_every_renderer_prefixes_its_template():
    turns = _corpus().session_turns("s")
    rendered = {
        "response": render_response_prompt("Where do I live?", "ctx", "2023/05/01"),
        "evaluation": render_evaluation_prompt("Q", "gold", "cand"),
        "summary": render_summary_prompt(turns),
        "fact": render_fact_prompt(turns),
        "insight": render_insight_prompt([("2023/05/01", "User lives in Oslo.")]),
    }
    for name, prompt in rendered.items():
        prefix = template(name) + SEPARATOR
        assert prompt.encode("utf-8")[: len(prefix.encode())] == prefix.encode("utf-8")


def test_payload_shapes():
    turns = _corpus().session_turns("s")
    assert render_fact_prompt(turns).endswith("\n\nUSER: I live in Oslo.\nASSISTANT: Nice city.")
    assert render_evaluation_prompt("Q", "G", "C").endswith("Question: Q\nGold-standard answer: G\nCandidate answer: C")
    tail = render_response_prompt("Q?", None, None)[len(template("response") + SEPARATOR):]
    assert tail == "---Question---\n\nQ?"
    tail = render_response_prompt("Q?", "CTX", "D")[len(template("response") + SEPARATOR):]
    assert tail == "---Data---\n\nCTX\n\n---Question---\n\nQuestion date: D\nQ?"
    body = render_insight_prompt([(None, "a"), ("t", "b")])[len(template("insight") + SEPARATOR):]
    assert json.loads(body) == [{"timestamp": "", "content": "a"}, {"timestamp": "t", "content": "b"}]
