"""Command line front-end.

Subcommands cover the whole workflow: validate and visualize template
documents, sample trajectories, merge candidates, build datasets,
ingest benchmarks, evaluate paradigms, and score completions.

Settings resolve with precedence: command line flag, then environment
variable (GRAPHREASON_<NAME>), then config file (key = value lines),
then built-in defaults. The API credential is never a flag or a config
key; it is read from the environment variable named by
``--credential-env`` (default GRAPHREASON_API_KEY).

Exit codes: 0 success, 1 item-level failure (bad records, failed
merge, nothing retained), 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from ._io import atomic_write_text, jsonl_dumps
from .bench import (
    BENCHMARKS,
    PARADIGM_SELF_GRAPH,
    PARADIGMS,
    BenchError,
    evaluate,
    load_benchmark,
    read_items,
    render_table,
    write_items,
    write_report,
)
from .client import (
    DEFAULT_CONCURRENCY,
    DEFAULT_CREDENTIAL_ENV,
    DEFAULT_K,
    DEFAULT_MAX_ATTEMPTS,
    DEFAULT_MAX_NEW_TOKENS,
    DEFAULT_TEMPERATURE,
    AllSamplesFailedError,
    ChatClient,
    ClientError,
    HttpBackend,
    MockBackend,
    ResponseCache,
    SamplingConfig,
)
from .codec import LENIENT, STRICT, StructuredOutput, TemplateParseError, parse, render
from .graph import export_dot, validate
from .merge import MERGE_MODES, MODE_DETERMINISTIC, CandidateSet, MergeError, merge_deterministic, merge_llm
from .pipeline import (
    DEFAULT_SPLIT_SEED,
    PipelineError,
    build_dataset,
    parse_candidates,
    read_sources,
    write_dataset,
)
from .prompts import TRAJECTORY_PROMPT
from .rewards import score_batch

log = logging.getLogger(__name__)

ENV_PREFIX = "GRAPHREASON_"
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

DEFAULT_MODEL = "teacher"


class ConfigError(Exception):
    """A setting is missing or malformed; ``field`` names the culprit."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(message)
        self.field = field


@dataclass
class RunConfig:
    """Resolved settings shared by every subcommand."""

    endpoint: str | None = None
    credential_env: str = DEFAULT_CREDENTIAL_ENV
    model: str = DEFAULT_MODEL
    mock: str | None = None
    cache_dir: str | None = None
    concurrency: int = DEFAULT_CONCURRENCY
    retry_cap: int = DEFAULT_MAX_ATTEMPTS
    k: int = DEFAULT_K
    temperature: float = DEFAULT_TEMPERATURE
    seed: int | None = None
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    merge_mode: str = MODE_DETERMINISTIC
    split_seed: int = DEFAULT_SPLIT_SEED
    paradigm: str = PARADIGM_SELF_GRAPH
    format_weight: float = 1.0
    answer_weight: float = 1.0


_FIELD_TYPES: dict[str, type] = {
    "endpoint": str,
    "credential_env": str,
    "model": str,
    "mock": str,
    "cache_dir": str,
    "merge_mode": str,
    "paradigm": str,
    "concurrency": int,
    "retry_cap": int,
    "k": int,
    "seed": int,
    "max_new_tokens": int,
    "split_seed": int,
    "temperature": float,
    "format_weight": float,
    "answer_weight": float,
}


def _coerce(name: str, raw, kind: type):
    if kind is str:
        return str(raw)
    try:
        return kind(str(raw).strip())
    except ValueError:
        label = "integer" if kind is int else "number"
        raise ConfigError(name, f"invalid {label} {raw!r}") from None


def _read_config_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise ConfigError("config", f"{path}: no such file")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        if key not in _FIELD_TYPES:
            raise ConfigError(key, f"unknown config key ({path}:{lineno})")
        values[key] = value
    return values


def _validate_config(cfg: RunConfig) -> None:
    if cfg.merge_mode not in MERGE_MODES:
        raise ConfigError("merge_mode", f"must be one of {', '.join(MERGE_MODES)}")
    if cfg.paradigm not in PARADIGMS:
        raise ConfigError("paradigm", f"must be one of {', '.join(PARADIGMS)}")
    for name, floor in (("concurrency", 1), ("retry_cap", 1), ("k", 1), ("max_new_tokens", 1)):
        if getattr(cfg, name) < floor:
            raise ConfigError(name, f"must be at least {floor}")
    if not 0.0 <= cfg.temperature <= 2.0:
        raise ConfigError("temperature", "must be between 0 and 2")
    for name in ("format_weight", "answer_weight"):
        if getattr(cfg, name) < 0:
            raise ConfigError(name, "must be non-negative")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Layer flag, environment, config file and default values."""
    config_path = getattr(args, "config", None) or os.environ.get(ENV_PREFIX + "CONFIG")
    file_values = _read_config_file(Path(config_path)) if config_path else {}
    values = {}
    for name, kind in _FIELD_TYPES.items():
        raw = getattr(args, name, None)
        if raw is None:
            raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is None:
            raw = file_values.get(name)
        if raw is None:
            continue
        values[name] = _coerce(name, raw, kind)
    cfg = RunConfig(**values)
    _validate_config(cfg)
    return cfg


def make_client(cfg: RunConfig) -> ChatClient:
    if cfg.mock:
        backend = MockBackend.from_file(cfg.mock)
    else:
        if not cfg.endpoint:
            raise ConfigError("endpoint", "required unless --mock is given")
        backend = HttpBackend(cfg.endpoint, credential_env=cfg.credential_env)
    cache = ResponseCache(cfg.cache_dir) if cfg.cache_dir else None
    return ChatClient(
        backend, cache=cache, concurrency=cfg.concurrency, max_attempts=cfg.retry_cap
    )


def make_sampling_config(cfg: RunConfig) -> SamplingConfig:
    return SamplingConfig(
        model_name=cfg.model,
        temperature=cfg.temperature,
        k=cfg.k,
        max_new_tokens=cfg.max_new_tokens,
        seed=cfg.seed,
    )


def read_template_records(path: Path) -> list[tuple[str, str | None, str | None]]:
    """Load (where, template text, problem) rows from a text or JSONL file.

    A .jsonl file contributes one record per line, taking the template
    from the graph_reasoning (or text) field; any other file is one
    record holding the whole file body.
    """
    if path.suffix != ".jsonl":
        return [(str(path), path.read_text(encoding="utf-8"), None)]
    records: list[tuple[str, str | None, str | None]] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                records.append((where, None, f"invalid JSON ({err})"))
                continue
            text = row.get("graph_reasoning", row.get("text")) if isinstance(row, dict) else None
            if not isinstance(text, str):
                records.append((where, None, "no graph_reasoning or text field"))
            else:
                records.append((where, text, None))
    return records


def cmd_validate(args: argparse.Namespace, cfg: RunConfig) -> int:
    mode = LENIENT if args.lenient else STRICT
    failures = 0
    for path in args.paths:
        for where, text, problem in read_template_records(Path(path)):
            if problem is not None:
                print(f"{where}: {problem}")
                failures += 1
                continue
            try:
                output = parse(text, mode)
            except TemplateParseError as err:
                print(f"{where}: parse error: {err.kind} ({err.detail})")
                failures += 1
                continue
            graph = output.graph
            diagnostics = validate(graph)
            line = (
                f"{where}: {graph.node_count} nodes, {graph.edge_count} edges, "
                f"{len(diagnostics.errors)} errors"
            )
            if diagnostics.warnings:
                line += f", {len(diagnostics.warnings)} warnings"
            print(line)
            for warning in diagnostics.warnings:
                print(f"  warning: {warning.kind}: {warning.detail}")
            if diagnostics.errors:
                failures += 1
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_viz(args: argparse.Namespace, cfg: RunConfig) -> int:
    mode = LENIENT if args.lenient else STRICT
    out_dir = Path(args.out_dir)
    in_path = Path(args.path)
    failures = 0
    for where, text, problem in read_template_records(in_path):
        if problem is not None:
            print(f"{where}: {problem}", file=sys.stderr)
            failures += 1
            continue
        try:
            output = parse(text, mode)
        except TemplateParseError as err:
            print(f"{where}: parse error: {err.kind} ({err.detail})", file=sys.stderr)
            failures += 1
            continue
        if ":" in where:
            suffix = where.rsplit(":", 1)[1]
            name = f"{in_path.stem}-{suffix}.dot"
        else:
            name = f"{in_path.stem}.dot"
        out_path = out_dir / name
        atomic_write_text(out_path, export_dot(output.graph, answer=output.answer))
        print(out_path)
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_sample(args: argparse.Namespace, cfg: RunConfig) -> int:
    client = make_client(cfg)
    config = make_sampling_config(cfg)
    try:
        samples = client.sample_trajectories(args.question, config, TRAJECTORY_PROMPT)
    except AllSamplesFailedError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE
    payload = {
        "question": args.question,
        "samples": samples.texts,
        "errors": {str(i): message for i, message in sorted(samples.errors.items())},
    }
    body = json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n"
    if args.out:
        atomic_write_text(Path(args.out), body)
        print(f"wrote {args.out} ({len(samples.successful())}/{config.k} samples)")
    else:
        print(body, end="")
    return EXIT_OK


def cmd_merge(args: argparse.Namespace, cfg: RunConfig) -> int:
    try:
        data = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        print(f"error: {args.input}: invalid JSON ({err})", file=sys.stderr)
        return EXIT_FAILURE
    if not isinstance(data, dict) or "question" not in data:
        print(f"error: {args.input}: expected an object with question and samples", file=sys.stderr)
        return EXIT_FAILURE
    texts = data.get("samples", data.get("candidates"))
    if not isinstance(texts, list):
        print(f"error: {args.input}: samples must be a list", file=sys.stderr)
        return EXIT_FAILURE

    candidates = parse_candidates(texts)
    if not candidates:
        print("error: no sample parsed as a reasoning template", file=sys.stderr)
        return EXIT_FAILURE
    candidate_set = CandidateSet(candidates, question=str(data["question"]))

    if cfg.merge_mode == MODE_DETERMINISTIC:
        merged = merge_deterministic(candidate_set)
    else:
        client = make_client(cfg)
        config = make_sampling_config(cfg)
        merged = merge_llm(
            candidate_set, client, config, fallback=cfg.merge_mode != "llm"
        )

    document = render(StructuredOutput.from_graph(merged.graph, merged.answer)) + "\n"
    if args.out:
        atomic_write_text(Path(args.out), document)
        suffix = ", fell back" if merged.fell_back else ""
        print(f"wrote {args.out} (answer: {merged.answer}, mode: {merged.merge_mode}{suffix})")
    else:
        print(document, end="")
    return EXIT_OK


def cmd_build(args: argparse.Namespace, cfg: RunConfig) -> int:
    items = read_sources(args.sources)
    client = make_client(cfg)
    config = make_sampling_config(cfg)
    result = build_dataset(
        items,
        client,
        config,
        merge_mode=cfg.merge_mode,
        split_seed=cfg.split_seed,
        workers=args.workers,
    )
    paths = write_dataset(result, args.out)
    report = result.report
    print(f"sources: {report.total_in}")
    print(
        f"retained: {report.retained} "
        f"(train {report.split_sizes['train']}, valid {report.split_sizes['valid']})"
    )
    for reason in sorted(report.discarded_by_reason):
        print(f"discarded[{reason}]: {report.discarded_by_reason[reason]}")
    print(f"wrote {paths['train']}, {paths['valid']}, {paths['report']}")
    if report.total_in and not report.retained:
        return EXIT_FAILURE
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    items = load_benchmark(args.benchmark, args.path)
    write_items(items, args.out)
    print(f"ingested {len(items)} items from {args.benchmark} -> {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.items and args.benchmark:
        raise ConfigError("items", "give either --items or --benchmark/--path, not both")
    if args.items:
        items = read_items(args.items)
    elif args.benchmark:
        if not args.path:
            raise ConfigError("path", "required with --benchmark")
        items = load_benchmark(args.benchmark, args.path)
    else:
        raise ConfigError("items", "provide --items or --benchmark with --path")
    if not items:
        print("error: no items to evaluate", file=sys.stderr)
        return EXIT_FAILURE

    client = make_client(cfg)
    config = make_sampling_config(cfg)
    report = evaluate(items, cfg.paradigm, client, config, workers=args.workers)
    print(render_table(report), end="")
    if args.out:
        paths = write_report(report, args.out)
        print(f"wrote {paths['text']}, {paths['json']}, {paths['records']}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace, cfg: RunConfig) -> int:
    path = Path(args.completions)
    texts: list[str] = []
    labels: list[str] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                print(f"error: {path}:{lineno}: invalid JSON ({err})", file=sys.stderr)
                return EXIT_FAILURE
            text = row.get("text", row.get("completion", row.get("graph_reasoning")))
            label = row.get("label")
            if not isinstance(text, str) or not isinstance(label, str):
                print(f"error: {path}:{lineno}: row needs text and label fields", file=sys.stderr)
                return EXIT_FAILURE
            texts.append(text)
            labels.append(label)

    weights = (cfg.format_weight, cfg.answer_weight)
    scores = score_batch(texts, labels, weights)
    print(f"scored {len(scores)} completions")
    if scores:
        n = len(scores)
        print(f"mean format reward: {sum(s.format_reward for s in scores) / n:.4f}")
        print(f"mean answer reward: {sum(s.answer_reward for s in scores) / n:.4f}")
        print(f"mean combined reward: {sum(s.combined for s in scores) / n:.4f}")
    if args.out:
        rows = [
            {"index": i, **score.to_dict()} for i, score in enumerate(scores)
        ]
        atomic_write_text(Path(args.out), jsonl_dumps(rows))
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    settings = common.add_argument_group("settings")
    settings.add_argument("--config", help="config file of key = value lines")
    settings.add_argument("--endpoint", help="chat completions URL")
    settings.add_argument(
        "--credential-env",
        dest="credential_env",
        help=f"environment variable holding the API key (default {DEFAULT_CREDENTIAL_ENV})",
    )
    settings.add_argument("--model", help="model name sent to the endpoint")
    settings.add_argument("--mock", help="scripted-replies JSON file instead of a network backend")
    settings.add_argument("--cache-dir", dest="cache_dir", help="completion cache directory")
    settings.add_argument("--concurrency", help="max in-flight requests")
    settings.add_argument("--retry-cap", dest="retry_cap", help="max attempts per request")
    settings.add_argument("--k", help="samples per question")
    settings.add_argument("--temperature", help="sampling temperature")
    settings.add_argument("--seed", help="base sampling seed")
    settings.add_argument("--max-new-tokens", dest="max_new_tokens", help="completion token cap")
    settings.add_argument(
        "--merge-mode", dest="merge_mode", help=f"one of {', '.join(MERGE_MODES)}"
    )
    settings.add_argument("--split-seed", dest="split_seed", help="train/valid shuffle seed")
    settings.add_argument("--paradigm", help=f"one of {', '.join(PARADIGMS)}")
    settings.add_argument("--format-weight", dest="format_weight", help="format reward weight")
    settings.add_argument("--answer-weight", dest="answer_weight", help="answer reward weight")
    settings.add_argument("--verbose", action="store_true", help="log at INFO level")

    parser = argparse.ArgumentParser(
        prog="graphreason",
        description="Build and evaluate graph-structured reasoning datasets.",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name: str, **kw) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], allow_abbrev=False, **kw)

    p = add_parser("validate", help="check template documents")
    p.add_argument("paths", nargs="+", help="template text or .jsonl record files")
    p.add_argument("--lenient", action="store_true", help="parse leniently")
    p.set_defaults(handler=cmd_validate)

    p = add_parser("viz", help="export DOT graphs")
    p.add_argument("path", help="template text or .jsonl record file")
    p.add_argument("--out-dir", dest="out_dir", default=".", help="directory for .dot files")
    p.add_argument("--lenient", action="store_true", help="parse leniently")
    p.set_defaults(handler=cmd_viz)

    p = add_parser("sample", help="sample k reasoning trajectories")
    p.add_argument("question", help="question to reason about")
    p.add_argument("--out", help="write samples JSON here instead of stdout")
    p.set_defaults(handler=cmd_sample)

    p = add_parser("merge", help="merge sampled candidates")
    p.add_argument("input", help="JSON file with question and samples")
    p.add_argument("--out", help="write the merged template here instead of stdout")
    p.set_defaults(handler=cmd_merge)

    p = add_parser("build", help="build a training dataset")
    p.add_argument("--sources", required=True, help="JSONL of question/label records")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=4, help="parallel items")
    p.set_defaults(handler=cmd_build)

    p = add_parser("ingest", help="normalize a benchmark file")
    p.add_argument("--benchmark", required=True, choices=BENCHMARKS)
    p.add_argument("--path", required=True, help="upstream benchmark file")
    p.add_argument("--out", required=True, help="normalized items JSONL")
    p.set_defaults(handler=cmd_ingest)

    p = add_parser("eval", help="evaluate a paradigm on items")
    p.add_argument("--items", help="normalized items JSONL (from ingest)")
    p.add_argument("--benchmark", choices=BENCHMARKS, help="load upstream file directly")
    p.add_argument("--path", help="upstream benchmark file (with --benchmark)")
    p.add_argument("--out", help="directory for report files")
    p.add_argument("--workers", type=int, default=4, help="parallel items")
    p.set_defaults(handler=cmd_eval)

    p = add_parser("score", help="reward-score completions")
    p.add_argument("--completions", required=True, help="JSONL of text/label rows")
    p.add_argument("--out", help="write per-completion rewards JSONL here")
    p.set_defaults(handler=cmd_score)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.handler(args, cfg)
    except ConfigError as err:
        print(f"config error: {err.field}: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ClientError, MergeError, BenchError, PipelineError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
