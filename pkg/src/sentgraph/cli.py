"""Command-line interface: build, query, eval, ablate, inspect, export-report.

Retrieval settings resolve in this order, later winning: built-in defaults,
``--preset``, the ``[retrieval]`` section of ``--config``, ``--variant``,
individual flags. The resolved settings are echoed to stderr as an INI block
that can be fed back through ``--config``.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from sentgraph.conversation import Granularity
from sentgraph.datasets import LOCOMO_SAMPLE_QUOTAS, load_dataset
from sentgraph.embedding import HashEmbedder, HttpEmbedder, ScorerKind, SentenceTransformerEmbedder
from sentgraph.engine import Engine, graph_key, graph_stats, read_manifest
from sentgraph.errors import SentGraphError
from sentgraph.harness import (
    SWEEP_FIELDS,
    read_log,
    reports_from_results,
    reports_json,
    reports_table,
    run_benchmark,
    run_sweep,
    sweep_csv,
)
from sentgraph.llm import ExtractiveLlm, GenerationParams, LlmClient, MockLlm, OpenAICompatibleLlm
from sentgraph.prompts import render_response_prompt
from sentgraph.retrieval import PRESETS, Method, RetrievalConfig, all_variants, parse_variant, render_context

log = logging.getLogger("sentgraph")

# flag name -> RetrievalConfig field
_FLAG_FIELDS = {
    "method": "method", "granularity": "granularity", "K": "top_k", "k": "knn_k", "h": "hops",
    "n": "max_sentences", "gamma": "gamma", "epsilon": "epsilon", "scorer": "scorer",
    "max_chars": "max_context_chars",
}
_INT_FIELDS = {"top_k", "knn_k", "hops", "max_sentences", "max_context_chars"}
_FLOAT_FIELDS = {"gamma", "epsilon"}
_BOOL_FIELDS = {"summaries", "facts", "insights"}


def toy_dataset_path() -> Path:
    return Path(str(resources.files("sentgraph").joinpath("data").joinpath("toy_benchmark.json")))


# -- option groups -------------------------------------------------------------

def _retrieval_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("retrieval")
    g.add_argument("--config", type=Path, help="INI file with [retrieval] and [llm] sections")
    g.add_argument("--preset", choices=sorted(PRESETS), help="dataset defaults for k, h, n, gamma, K")
    g.add_argument("--variant", help='variant code such as "SGMem-SF" or "RAG-TMFI"')
    g.add_argument("--method", choices=[m.value for m in Method])
    g.add_argument("--granularity", choices=[x.value for x in Granularity])
    g.add_argument("--memories", help='generated memory tables to include: any of "m", "f", "i", or "none"')
    g.add_argument("--K", type=int, help="top-K per memory table and for chunks")
    g.add_argument("--k", type=int, help="KNN neighbours per sentence")
    g.add_argument("--h", type=int, help="expansion hops")
    g.add_argument("--n", type=int, help="maximum seed sentences")
    g.add_argument("--gamma", type=float, help="seed threshold on shifted similarity, in [0, 2]")
    g.add_argument("--epsilon", type=float, help="similarity shift")
    g.add_argument("--scorer", choices=[s.value for s in ScorerKind], help="KNN edge scorer")
    g.add_argument("--max-chars", dest="max_chars", type=int, help="optional cap on rendered context length")
    return p


def _llm_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("language model")
    g.add_argument("--llm-endpoint", help="OpenAI-compatible base URL for answering (and judging)")
    g.add_argument("--llm-model", default=None, help="model name sent to the endpoint")
    g.add_argument("--judge-endpoint", help="separate endpoint for the judge")
    g.add_argument("--judge-model", default=None)
    g.add_argument("--api-key-env", default=None, help="environment variable holding the API key")
    g.add_argument("--mock-llm", type=Path, help="JSON file of scripted responses keyed by prompt fingerprint")
    g.add_argument("--offline-llm", action="store_true", help="use the built-in extractive stand-in model")
    return p


def _common_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    p.add_argument("--seed", type=int, default=0, help="seed for dataset sampling")
    p.add_argument("--workers", type=int, default=4, help="parallel questions or sessions")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentgraph", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common, retr, llm = _common_options(), _retrieval_options(), _llm_options()

    b = sub.add_parser("build", allow_abbrev=False, parents=[common, retr, llm],
                       help="ingest a dataset and build the store")
    b.add_argument("--dataset", type=Path, help="benchmark file (default: bundled toy benchmark)")
    b.add_argument("--kind", choices=["longmemeval", "locomo", "custom"], default="custom")
    b.add_argument("--store", "--out", dest="store", type=Path, required=True)
    b.add_argument("--force", action="store_true", help="overwrite an existing store")
    b.add_argument("--embedder", default="hash",
                   help='"hash[:dim]", "st:<model>" or "http:<base_url>|<model>|<dim>"')
    b.add_argument("--sample", type=int, help="sample this many questions (LoCoMo)")
    b.add_argument("--type-quotas", action="store_true",
                   help="sample LoCoMo questions with fixed per-category counts")
    b.add_argument("--graphs", default="turn,round,session",
                   help="granularities whose sentence graphs are prebuilt (comma list, or none)")

    q = sub.add_parser("query", allow_abbrev=False, parents=[common, retr, llm],
                       help="retrieve context for one question")
    q.add_argument("question")
    q.add_argument("--store", type=Path, required=True)
    q.add_argument("--scope", help="scope to search (default: the first)")
    q.add_argument("--date", help="question date shown in the context header")

    e = sub.add_parser("eval", allow_abbrev=False, parents=[common, retr, llm],
                       help="answer and judge a split")
    e.add_argument("--store", type=Path, required=True)
    e.add_argument("--variants", help='comma list of variant codes, or "all"')
    e.add_argument("--log", type=Path, help="JSON-lines result log; an existing log is resumed")
    e.add_argument("--limit", type=int, help="evaluate only the first N questions")
    e.add_argument("--report", type=Path, help="write the report JSON here")

    a = sub.add_parser("ablate", allow_abbrev=False, parents=[common, retr, llm],
                       help="hyperparameter sweep")
    a.add_argument("--store", type=Path, required=True)
    a.add_argument("--grid", action="append", default=[],
                   help='axis such as "h=0,1,2"; keys: k, h, n, gamma, K (repeatable)')
    a.add_argument("--limit", type=int, help="use only the first N questions")
    a.add_argument("--out", type=Path, help="CSV destination (default: stdout)")

    i = sub.add_parser("inspect", allow_abbrev=False, parents=[common],
                       help="describe a store")
    i.add_argument("--store", type=Path, required=True)
    i.add_argument("--scope")

    x = sub.add_parser("export-report", allow_abbrev=False, parents=[common],
                       help="rebuild reports from a result log")
    x.add_argument("--log", type=Path, required=True)
    x.add_argument("--out", type=Path, help="write here instead of stdout")
    return parser


# -- configuration -------------------------------------------------------------

def _coerce(field: str, value: str) -> Any:
    if field in _INT_FIELDS:
        return None if value.strip().lower() in ("", "none") else int(value)
    if field in _FLOAT_FIELDS:
        return float(value)
    if field in _BOOL_FIELDS:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value.strip()


def _memory_flags(spec: str) -> dict[str, bool]:
    spec = spec.strip().lower()
    letters = "" if spec in ("", "none") else spec.replace(",", "")
    bad = set(letters) - set("mfi")
    if bad:
        raise ValueError(f"--memories accepts m, f, i or none, got {spec!r}")
    return {"summaries": "m" in letters, "facts": "f" in letters, "insights": "i" in letters}


def read_config_file(path: Path | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep "K" distinct from "k"
    if path is not None:
        if not cp.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
    return cp


def resolve_config(args: argparse.Namespace, cp: configparser.ConfigParser | None = None) -> RetrievalConfig:
    cp = cp if cp is not None else read_config_file(getattr(args, "config", None))
    values: dict[str, Any] = {}
    preset = args.preset
    if preset is None and cp.has_section("retrieval"):
        preset = cp.get("retrieval", "preset", fallback=None)
    if preset:
        values.update({k: v for k, v in dataclasses.asdict(PRESETS[preset]).items()})
    if cp.has_section("retrieval"):
        names = {f.name for f in dataclasses.fields(RetrievalConfig)}
        for key, raw in cp.items("retrieval"):
            if key in ("preset", "variant"):
                continue
            if key not in names:
                raise ValueError(f"unknown [retrieval] key {key!r}")
            values[key] = _coerce(key, raw)
        if cp.has_option("retrieval", "variant"):
            values.update(parse_variant(cp.get("retrieval", "variant")))
    if args.variant:
        values.update(parse_variant(args.variant))
    if args.memories is not None:
        values.update(_memory_flags(args.memories))
    for flag, fld in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[fld] = v
    return RetrievalConfig(**values)


def effective_config_block(config: RetrievalConfig, extra: dict[str, dict[str, Any]] | None = None) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    d = config.to_dict()
    cp["retrieval"] = {k: ("none" if v is None else str(v)) for k, v in d.items() if k != "variant"}
    for section, items in (extra or {}).items():
        cp[section] = {k: ("none" if v is None else str(v)) for k, v in items.items()}
    buf = io.StringIO()
    cp.write(buf)
    return "# effective config (variant " + config.variant + ")\n" + buf.getvalue().rstrip() + "\n"


def make_embedder(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "hash":
        return HashEmbedder(dim=int(rest) if rest else 512)
    if kind == "st":
        return SentenceTransformerEmbedder(rest or "all-MiniLM-L6-v2")
    if kind == "http":
        url, model, dim = rest.split("|")
        return HttpEmbedder(url, model, int(dim))
    raise ValueError(f"unknown embedder {spec!r}")


def make_llms(args: argparse.Namespace,
              cp: configparser.ConfigParser) -> tuple[LlmClient | None, LlmClient | None]:
    """The answering client and the judge client (``None`` when no model is configured)."""
    sect = cp["llm"] if cp.has_section("llm") else {}
    endpoint = args.llm_endpoint or sect.get("endpoint")
    model = args.llm_model or sect.get("model") or "default"
    judge_endpoint = args.judge_endpoint or sect.get("judge_endpoint")
    judge_model = args.judge_model or sect.get("judge_model") or model
    key_env = args.api_key_env or sect.get("api_key_env") or "SENTGRAPH_API_KEY"
    mock = args.mock_llm or (Path(sect["mock"]) if sect.get("mock") else None)
    offline = args.offline_llm or str(sect.get("offline", "")).lower() in ("1", "true", "yes")

    client: LlmClient | None = None
    if mock is not None:
        client = MockLlm.from_file(mock)
    elif offline:
        client = ExtractiveLlm()
    elif endpoint:
        client = OpenAICompatibleLlm(endpoint, model, GenerationParams(), api_key_env=key_env)
    judge_client = client
    if judge_endpoint:
        judge_client = OpenAICompatibleLlm(judge_endpoint, judge_model, GenerationParams(), api_key_env=key_env)
    return client, judge_client


def _llm_section(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "endpoint": args.llm_endpoint, "model": args.llm_model, "judge_endpoint": args.judge_endpoint,
        "judge_model": args.judge_model, "mock": args.mock_llm, "offline": args.offline_llm,
    }


def _emit(text: str, out: Path | None = None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        out.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


# -- subcommands ---------------------------------------------------------------

def cmd_build(args: argparse.Namespace) -> int:
    cp = read_config_file(args.config)
    config = resolve_config(args, cp)
    if (args.store / "manifest.json").exists() and not args.force:
        log.error("%s already holds a store; use --force to rebuild", args.store)
        return 2
    dataset = args.dataset or toy_dataset_path()
    kwargs: dict[str, Any] = {}
    if args.kind == "locomo" and args.sample:
        kwargs["sample"] = (args.sample, args.seed)
        if args.type_quotas:
            kwargs["quotas"] = LOCOMO_SAMPLE_QUOTAS
    split = load_dataset(dataset, args.kind, **kwargs)
    client, _ = make_llms(args, cp)
    if client is None:
        log.warning("no LLM configured: summaries, facts and insights are not generated")
    grans = []
    if args.graphs.strip().lower() != "none":
        grans = [Granularity.parse(g) for g in args.graphs.split(",")]
    keys = [graph_key(g, config.knn_k, config.scorer) for g in grans]
    sys.stderr.write(effective_config_block(config, {"llm": _llm_section(args)}))
    engine = Engine.build(split, make_embedder(args.embedder), client, keys, workers=args.workers)
    manifest = engine.save(args.store, force=args.force, extra={
        "dataset": {"path": str(dataset), "kind": args.kind, "sample": args.sample, "seed": args.seed},
        "llm": getattr(client, "name", None),
    })
    if args.json:
        _emit(json.dumps(manifest, ensure_ascii=False, indent=2))
    else:
        _emit(f"built {args.store}: {manifest['questions']} questions, {len(manifest['scopes'])} scopes")
        for t, n in manifest["table_sizes"].items():
            _emit(f"  {t:<9} {n}")
        for g in manifest["graphs"]:
            _emit(f"  graph {g['granularity']} k={g['k']} {g['scorer']}")
    return 0


def _open(store: Path) -> Engine:
    return Engine.open(store)


def cmd_query(args: argparse.Namespace) -> int:
    cp = read_config_file(args.config)
    config = resolve_config(args, cp)
    sys.stderr.write(effective_config_block(config))
    engine = _open(args.store)
    scope = args.scope or next(iter(engine.split.scopes))
    ctx = engine.retrieve(config, args.question, scope=scope, query_date=args.date)
    client, _ = make_llms(args, cp)
    answer = None
    if client is not None:
        context = None if ctx.is_empty else render_context(ctx, config.max_context_chars)
        answer = client.complete(render_response_prompt(args.question, context, args.date))
    if args.json:
        payload = {"scope": scope, "config": config.to_dict(), **ctx.to_dict(), "answer": answer}
        _emit(json.dumps(payload, ensure_ascii=False, indent=2))
        return 0
    _emit(f"{'rank':>4}  {'score':>8}  {'sentences':>9}  chunk")
    for rank, cid in enumerate(ctx.ranked_chunk_ids, 1):
        c = next(x for x in ctx.chunks if x.chunk_id == cid)
        _emit(f"{rank:>4}  {c.score:>8.4f}  {len(c.sentences):>9}  {cid}")
    _emit("")
    _emit(render_context(ctx, config.max_context_chars))
    if answer is not None:
        _emit("\n# Answer\n" + answer)
    return 0


def _selected_questions(engine: Engine, limit: int | None):
    qs = engine.split.questions
    return qs[:limit] if limit else qs


def cmd_eval(args: argparse.Namespace) -> int:
    cp = read_config_file(args.config)
    base = resolve_config(args, cp)
    if args.variants:
        if args.variants.strip() == "all":
            names = all_variants()
        else:
            names = [v.strip() for v in args.variants.split(",")]
        configs = [base.with_variant(v) for v in names]
    else:
        configs = [base]
    client, judge_client = make_llms(args, cp)
    sys.stderr.write(effective_config_block(base, {"llm": _llm_section(args)}))
    if client is None:
        sys.stderr.write("*** NOTE: no LLM configured; running in recall-proxy mode. "
                         "Accuracy is NOT computed, only evidence recall. ***\n")
    engine = _open(args.store)
    reports, _ = run_benchmark(engine, configs, client, judge_client=judge_client, log_path=args.log,
                               workers=args.workers, questions=_selected_questions(engine, args.limit))
    text = reports_json(reports)
    if args.report:
        _emit(text, args.report)
    _emit(text if args.json else reports_table(reports))
    return 0


def _parse_grid(items: Sequence[str]) -> dict[str, list]:
    grid: dict[str, list] = {}
    for item in items:
        for part in item.split(";"):
            if not part.strip():
                continue
            key, sep, vals = part.partition("=")
            key = key.strip()
            if not sep or key not in SWEEP_FIELDS:
                raise ValueError(f"bad grid axis {part!r}; expected key=v1,v2 with key in {list(SWEEP_FIELDS)}")
            cast = float if key == "gamma" else int
            grid[key] = [cast(v) for v in vals.split(",") if v.strip()]
    return grid


def cmd_ablate(args: argparse.Namespace) -> int:
    cp = read_config_file(args.config)
    base = resolve_config(args, cp)
    grid = _parse_grid(args.grid)
    client, judge_client = make_llms(args, cp)
    axes = {k: ",".join(map(str, v)) for k, v in grid.items()}
    sys.stderr.write(effective_config_block(base, {"grid": axes}))
    if client is None:
        sys.stderr.write("*** NOTE: no LLM configured; sweep reports evidence recall only. ***\n")
    engine = _open(args.store)
    if args.limit:
        engine.split = engine.split.select(q.id for q in engine.split.questions[: args.limit])
    rows = run_sweep(engine, base, grid, client, judge_client, workers=args.workers)
    _emit(sweep_csv(rows), args.out)
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    manifest = read_manifest(args.store)
    engine = _open(args.store)
    scopes = [args.scope] if args.scope else list(engine.split.scopes)
    detail = {}
    for s in scopes:
        idx = engine.index(s)
        detail[s] = {
            "sessions": len(idx.corpus.sessions),
            "table_sizes": idx.tables.sizes(),
            "memories": len(idx.memories),
            "graphs": [graph_stats(g) for g in idx.graphs.values()],
        }
    payload = {"manifest": manifest, "scopes": detail}
    if args.json:
        _emit(json.dumps(payload, ensure_ascii=False, indent=2))
        return 0
    _emit(f"store {args.store}: split {manifest['split']}, {manifest['questions']} questions")
    _emit(f"provider {manifest['provider_fingerprint']}")
    for s, d in detail.items():
        _emit(f"scope {s}: {d['sessions']} sessions, {d['memories']} generated memories")
        _emit("  tables " + ", ".join(f"{t}={n}" for t, n in d["table_sizes"].items()))
        for g in d["graphs"]:
            _emit(f"  graph {g['granularity']} k={g['k']} {g['scorer']}: {g['sentences']} sentences, "
                  f"{g['knn_edges']} knn edges, max out-degree {g['max_out_degree']}")
    return 0


def cmd_export_report(args: argparse.Namespace) -> int:
    results = read_log(args.log)
    if not results:
        log.error("%s holds no results", args.log)
        return 1
    reports = reports_from_results(results)
    _emit(reports_json(reports) if args.json else reports_table(reports), args.out)
    return 0


COMMANDS = {
    "build": cmd_build, "query": cmd_query, "eval": cmd_eval, "ablate": cmd_ablate,
    "inspect": cmd_inspect, "export-report": cmd_export_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (SentGraphError, ValueError, OSError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    finally:
        sys.stdout.flush()
        sys.stderr.flush()


if __name__ == "__main__":
    sys.exit(main())
