"""Benchmark ingestion and three-paradigm evaluation harness.

Adapters normalize six QA benchmarks from their published file formats
into a single item shape; the evaluator asks one deterministic
completion per item under a chosen prompting paradigm and scores the
extracted answer against the label. Reports are byte-deterministic:
same items, same scripted replies, same bytes out.
"""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from ._io import atomic_write_text, jsonl_dumps
from .answers import OPTION_LETTERS, answers_match
from .client import ChatClient, ClientError, CompletionRequest, SamplingConfig
from .codec import LENIENT, STRICT, TemplateParseError, extract_answer_lenient, parse
from .prompts import DIRECT_PROMPT, LINEAR_PROMPT, SELF_GRAPH_PROMPT, PromptTemplate

log = logging.getLogger(__name__)

PARADIGM_DIRECT = "direct"
PARADIGM_LINEAR = "linear"
PARADIGM_SELF_GRAPH = "self-graph"

PARADIGM_PROMPTS: dict[str, PromptTemplate] = {
    PARADIGM_DIRECT: DIRECT_PROMPT,
    PARADIGM_LINEAR: LINEAR_PROMPT,
    PARADIGM_SELF_GRAPH: SELF_GRAPH_PROMPT,
}
PARADIGMS = tuple(PARADIGM_PROMPTS)

REPORT_TEXT_FILE = "report.txt"
REPORT_JSON_FILE = "report.json"
RECORDS_FILE = "records.jsonl"


class BenchError(Exception):
    pass


class SchemaError(BenchError):
    """An upstream benchmark file does not look like its documented format."""


@dataclass(frozen=True)
class BenchmarkItem:
    """One evaluation question, already formatted for prompting."""

    question: str
    label: str
    benchmark: str
    item_id: str

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("question must be non-empty")
        if not self.label.strip():
            raise ValueError("label must be non-empty")


def _index_letter(index: int, where: str) -> str:
    if not 0 <= index < len(OPTION_LETTERS):
        raise SchemaError(f"{where}: answer index {index} outside options A-{OPTION_LETTERS[-1]}")
    return OPTION_LETTERS[index]


def format_options(options: Sequence[str], where: str) -> str:
    """Render answer options as lettered lines, one per option."""
    if not options:
        raise SchemaError(f"{where}: empty options list")
    if len(options) > len(OPTION_LETTERS):
        raise SchemaError(
            f"{where}: {len(options)} options exceed the supported letters {OPTION_LETTERS}"
        )
    return "\n".join(
        f"{OPTION_LETTERS[i]}. {str(text).strip()}" for i, text in enumerate(options)
    )


def compose_question(*blocks: str) -> str:
    """Join non-empty text blocks with blank lines."""
    return "\n\n".join(block.strip() for block in blocks if block and block.strip())


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: invalid JSON ({err})") from err


def _read_jsonl(path: Path) -> list[tuple[int, dict]]:
    records = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as err:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({err})") from err
            if not isinstance(raw, dict):
                raise SchemaError(f"{path}:{lineno}: expected an object")
            records.append((lineno, raw))
    return records


def _require(raw: dict, key: str, where: str):
    if key not in raw:
        raise SchemaError(f"{where}: missing field {key!r}")
    return raw[key]


def load_logiqa(path: str | Path) -> list[BenchmarkItem]:
    """LogiQA split file: JSONL with text/question/options/answer-index."""
    path = Path(path)
    items = []
    for lineno, raw in _read_jsonl(path):
        where = f"{path}:{lineno}"
        context = _require(raw, "text", where)
        question = _require(raw, "question", where)
        options = _require(raw, "options", where)
        answer = _require(raw, "answer", where)
        if not isinstance(options, list):
            raise SchemaError(f"{where}: options must be a list")
        if not isinstance(answer, int):
            raise SchemaError(f"{where}: answer must be an option index")
        items.append(
            BenchmarkItem(
                question=compose_question(context, question, format_options(options, where)),
                label=_index_letter(answer, where),
                benchmark="logiqa",
                item_id=str(raw.get("id", f"logiqa-{lineno}")),
            )
        )
    return items


def _load_aiw_family(path: str | Path, benchmark: str) -> list[BenchmarkItem]:
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a JSON array of prompt records")
    items = []
    for i, raw in enumerate(data, start=1):
        where = f"{path}: item {i}"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: expected an object")
        prompt = _require(raw, "prompt", where)
        answer = _require(raw, "right_answer", where)
        items.append(
            BenchmarkItem(
                question=str(prompt),
                label=str(answer),
                benchmark=benchmark,
                item_id=str(raw.get("id", f"{benchmark}-{i}")),
            )
        )
    return items


def load_aiw(path: str | Path) -> list[BenchmarkItem]:
    """AIW prompt collection: JSON array of prompt/right_answer records."""
    return _load_aiw_family(path, "aiw")


def load_aiw_plus(path: str | Path) -> list[BenchmarkItem]:
    """AIW+ harder variant; same record shape as AIW."""
    return _load_aiw_family(path, "aiw_plus")


def load_arlsat(path: str | Path) -> list[BenchmarkItem]:
    """AR-LSAT: JSON array of passages, each with nested questions."""
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a JSON array of passages")
    items = []
    for p, passage_raw in enumerate(data, start=1):
        where = f"{path}: passage {p}"
        if not isinstance(passage_raw, dict):
            raise SchemaError(f"{where}: expected an object")
        passage = _require(passage_raw, "passage", where)
        questions = _require(passage_raw, "questions", where)
        if not isinstance(questions, list):
            raise SchemaError(f"{where}: questions must be a list")
        for q, question_raw in enumerate(questions, start=1):
            q_where = f"{where} question {q}"
            question = _require(question_raw, "question", q_where)
            options = _require(question_raw, "options", q_where)
            answer = _require(question_raw, "answer", q_where)
            if isinstance(answer, int):
                label = _index_letter(answer, q_where)
            else:
                label = str(answer).strip().upper()
                if label not in OPTION_LETTERS:
                    raise SchemaError(f"{q_where}: answer {answer!r} is not an option letter")
            items.append(
                BenchmarkItem(
                    question=compose_question(
                        passage, question, format_options(options, q_where)
                    ),
                    label=label,
                    benchmark="arlsat",
                    item_id=str(question_raw.get("id", f"arlsat-{p}-{q}")),
                )
            )
    return items


def load_medqa(path: str | Path) -> list[BenchmarkItem]:
    """MedQA (US) split: JSONL with an options object keyed by letter."""
    path = Path(path)
    items = []
    for lineno, raw in _read_jsonl(path):
        where = f"{path}:{lineno}"
        question = _require(raw, "question", where)
        options = _require(raw, "options", where)
        answer_idx = _require(raw, "answer_idx", where)
        if not isinstance(options, dict):
            raise SchemaError(f"{where}: options must be an object keyed by letter")
        letters = sorted(options)
        if letters != list(OPTION_LETTERS[: len(letters)]):
            raise SchemaError(f"{where}: option letters {letters} are not consecutive from A")
        label = str(answer_idx).strip().upper()
        if label not in letters:
            raise SchemaError(f"{where}: answer_idx {answer_idx!r} not among options")
        option_lines = format_options([options[letter] for letter in letters], where)
        items.append(
            BenchmarkItem(
                question=compose_question(question, option_lines),
                label=label,
                benchmark="medqa",
                item_id=str(raw.get("id", f"medqa-{lineno}")),
            )
        )
    return items


_MATHQA_OPTION_SPLIT = re.compile(r"\s*,\s*(?=[a-e]\s*\))")
_MATHQA_OPTION = re.compile(r"^([a-e])\s*\)\s*(.*)$", re.DOTALL)


def parse_packed_options(packed: str, where: str) -> list[str]:
    """Split a MathQA options string like "a ) 38 , b ) 27.6 , ..." into texts."""
    chunks = _MATHQA_OPTION_SPLIT.split(packed.strip())
    options = []
    for i, chunk in enumerate(chunks):
        match = _MATHQA_OPTION.match(chunk.strip())
        if not match or match.group(1) != "abcde"[i]:
            raise SchemaError(f"{where}: cannot parse options string {packed!r}")
        options.append(match.group(2).strip())
    return options


def load_mathqa(path: str | Path) -> list[BenchmarkItem]:
    """MathQA split: JSON array with a packed options string per problem."""
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a JSON array of problems")
    items = []
    for i, raw in enumerate(data, start=1):
        where = f"{path}: item {i}"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: expected an object")
        problem = _require(raw, "Problem", where)
        packed = _require(raw, "options", where)
        correct = _require(raw, "correct", where)
        options = parse_packed_options(str(packed), where)
        label = str(correct).strip().upper()
        if label not in OPTION_LETTERS[: len(options)]:
            raise SchemaError(f"{where}: correct letter {correct!r} not among options")
        items.append(
            BenchmarkItem(
                question=compose_question(problem, format_options(options, where)),
                label=label,
                benchmark="mathqa",
                item_id=str(raw.get("id", f"mathqa-{i}")),
            )
        )
    return items


ADAPTERS: dict[str, Callable[[str | Path], list[BenchmarkItem]]] = {
    "logiqa": load_logiqa,
    "aiw": load_aiw,
    "aiw_plus": load_aiw_plus,
    "arlsat": load_arlsat,
    "medqa": load_medqa,
    "mathqa": load_mathqa,
}
BENCHMARKS = tuple(ADAPTERS)


def load_benchmark(name: str, path: str | Path) -> list[BenchmarkItem]:
    """Dispatch to the adapter registered under ``name``."""
    if name not in ADAPTERS:
        raise SchemaError(f"unknown benchmark {name!r}; known: {', '.join(BENCHMARKS)}")
    return ADAPTERS[name](path)


def write_items(items: Sequence[BenchmarkItem], path: str | Path) -> None:
    """Write normalized items as JSONL, one object per line."""
    atomic_write_text(
        Path(path),
        jsonl_dumps(
            {
                "question": item.question,
                "label": item.label,
                "benchmark": item.benchmark,
                "item_id": item.item_id,
            }
            for item in items
        ),
    )


def read_items(path: str | Path) -> list[BenchmarkItem]:
    """Read items previously written by ``write_items``."""
    path = Path(path)
    items = []
    for lineno, raw in _read_jsonl(path):
        where = f"{path}:{lineno}"
        items.append(
            BenchmarkItem(
                question=str(_require(raw, "question", where)),
                label=str(_require(raw, "label", where)),
                benchmark=str(_require(raw, "benchmark", where)),
                item_id=str(_require(raw, "item_id", where)),
            )
        )
    return items


@dataclass
class ItemRecord:
    """Outcome for one evaluated item."""

    item_id: str
    benchmark: str
    paradigm: str
    label: str
    candidate: str | None
    correct: bool
    error: str | None = None
    node_count: int | None = None
    edge_count: int | None = None

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "benchmark": self.benchmark,
            "paradigm": self.paradigm,
            "label": self.label,
            "candidate": self.candidate,
            "correct": self.correct,
            "error": self.error,
            "node_count": self.node_count,
            "edge_count": self.edge_count,
        }


@dataclass(frozen=True)
class BenchmarkScore:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


@dataclass
class EvalReport:
    """Scores per benchmark plus the unweighted mean across benchmarks."""

    paradigm: str
    model: str
    per_benchmark: dict[str, BenchmarkScore]
    records: list[ItemRecord] = field(repr=False, default_factory=list)

    @property
    def overall_accuracy(self) -> float:
        scores = list(self.per_benchmark.values())
        if not scores:
            return 0.0
        return sum(score.accuracy for score in scores) / len(scores)

    def to_dict(self) -> dict:
        return {
            "paradigm": self.paradigm,
            "model": self.model,
            "per_benchmark": {
                name: {
                    "n": score.n,
                    "correct": score.correct,
                    "accuracy_percent": percent(score.accuracy),
                }
                for name, score in self.per_benchmark.items()
            },
            "overall_accuracy_percent": percent(self.overall_accuracy),
        }


def percent(fraction: float) -> str:
    """Accuracy fraction as a two-decimal percent string."""
    return f"{fraction * 100:.2f}"


def extract_candidate(text: str, paradigm: str) -> tuple[str | None, int | None, int | None]:
    """Pull the answer (and graph size, when structured) out of a reply."""
    if paradigm == PARADIGM_SELF_GRAPH:
        for mode in (STRICT, LENIENT):
            try:
                output = parse(text, mode)
            except TemplateParseError:
                continue
            graph = output.graph
            return output.answer, graph.node_count, graph.edge_count
        return extract_answer_lenient(text), None, None
    return extract_answer_lenient(text), None, None


def evaluate_item(
    item: BenchmarkItem,
    paradigm: str,
    client: ChatClient,
    config: SamplingConfig,
) -> ItemRecord:
    """Score one item; transport failures become records, not exceptions."""
    system, user = PARADIGM_PROMPTS[paradigm].fill(question=item.question)
    request = CompletionRequest(system, user, config)
    try:
        reply = client.complete(request)
    except ClientError as err:
        log.warning("item %s failed in transport: %s", item.item_id, err)
        return ItemRecord(
            item_id=item.item_id,
            benchmark=item.benchmark,
            paradigm=paradigm,
            label=item.label,
            candidate=None,
            correct=False,
            error=str(err),
        )
    candidate, node_count, edge_count = extract_candidate(reply.text, paradigm)
    correct = candidate is not None and answers_match(candidate, item.label)
    return ItemRecord(
        item_id=item.item_id,
        benchmark=item.benchmark,
        paradigm=paradigm,
        label=item.label,
        candidate=candidate,
        correct=correct,
        node_count=node_count,
        edge_count=edge_count,
    )


def evaluate(
    items: Sequence[BenchmarkItem],
    paradigm: str,
    client: ChatClient,
    config: SamplingConfig,
    *,
    workers: int = 4,
) -> EvalReport:
    """Evaluate items under one paradigm, one greedy completion each."""
    if paradigm not in PARADIGM_PROMPTS:
        raise ValueError(f"paradigm must be one of {PARADIGMS}, got {paradigm!r}")
    ids = [item.item_id for item in items]
    if len(set(ids)) != len(ids):
        raise ValueError("item ids must be unique")

    eval_config = replace(config, temperature=0.0, k=1)
    if not items:
        records: list[ItemRecord] = []
    elif workers <= 1:
        records = [evaluate_item(item, paradigm, client, eval_config) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(
                pool.map(
                    lambda item: evaluate_item(item, paradigm, client, eval_config), items
                )
            )

    per_benchmark: dict[str, BenchmarkScore] = {}
    order: list[str] = []
    counts: dict[str, list[int]] = {}
    for record in records:
        if record.benchmark not in counts:
            counts[record.benchmark] = [0, 0]
            order.append(record.benchmark)
        counts[record.benchmark][0] += 1
        counts[record.benchmark][1] += int(record.correct)
    for name in order:
        n, correct = counts[name]
        per_benchmark[name] = BenchmarkScore(n=n, correct=correct)

    return EvalReport(
        paradigm=paradigm,
        model=config.model_name,
        per_benchmark=per_benchmark,
        records=records,
    )


def render_table(report: EvalReport) -> str:
    """Fixed-width accuracy table; the overall row is the unweighted mean."""
    rows = [(name, str(s.n), str(s.correct), percent(s.accuracy))
            for name, s in report.per_benchmark.items()]
    rows.append(("overall", "-", "-", percent(report.overall_accuracy)))
    header = ("benchmark", "n", "correct", "accuracy")
    widths = [
        max(len(header[col]), *(len(row[col]) for row in rows)) for col in range(4)
    ]

    def line(cells: tuple[str, str, str, str]) -> str:
        name = cells[0].ljust(widths[0])
        rest = "  ".join(cells[i].rjust(widths[i]) for i in range(1, 4))
        return f"{name}  {rest}".rstrip()

    out = [
        f"paradigm: {report.paradigm}",
        f"model: {report.model}",
        "",
        line(header),
        line(tuple("-" * w for w in widths)),
    ]
    out.extend(line(row) for row in rows)
    return "\n".join(out) + "\n"


def write_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.txt, report.json and records.jsonl atomically."""
    out = Path(out_dir)
    paths = {
        "text": out / REPORT_TEXT_FILE,
        "json": out / REPORT_JSON_FILE,
        "records": out / RECORDS_FILE,
    }
    atomic_write_text(paths["text"], render_table(report))
    atomic_write_text(paths["json"], json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write_text(paths["records"], jsonl_dumps(r.to_dict() for r in report.records))
    return paths
