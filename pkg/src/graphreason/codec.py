"""Parsing and rendering of the structured reasoning template.

The wire format a model is asked to emit is a reasoning block holding
one dependency per step line, followed by an answer block::

    <reasoning>
    <step> parent text → child text </step>
    </reasoning>
    <answer> final answer </answer>

Both the unicode arrow and ASCII ``->`` are accepted on input; rendering
always emits the unicode arrow. Strict parsing demands exactly this
shape with nothing but whitespace around the blocks; lenient parsing
additionally tolerates prose before the reasoning block and after the
answer block, case-insensitive tags, and duplicated steps (collapsed
with a logged warning).
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence

from .graph import (
    ERROR_CYCLE,
    DuplicateEdgeError,
    InvalidGraphError,
    ReasoningGraph,
    normalize_text,
    validate,
)

log = logging.getLogger(__name__)

ARROW = "→"
_ARROW_TOKENS = (ARROW, "->")

STRICT = "strict"
LENIENT = "lenient"

# ParseError kinds
MISSING_REASONING_BLOCK = "missing-reasoning-block"
MISSING_ANSWER_BLOCK = "missing-answer-block"
MALFORMED_STEP = "malformed-step"
EMPTY_ENDPOINT = "empty-endpoint"
DUPLICATE_STEP = "duplicate-step"
CYCLE_IN_STEPS = "cycle-in-steps"
TRAILING_GARBAGE = "trailing-garbage"

_REASONING_OPEN = "<reasoning>"
_REASONING_CLOSE = "</reasoning>"
_STEP_OPEN = "<step>"
_STEP_CLOSE = "</step>"
_ANSWER_OPEN = "<answer>"
_ANSWER_CLOSE = "</answer>"

_ANSWER_TAG_RE = re.compile(r"<answer>(.*?)</answer>", re.IGNORECASE | re.DOTALL)


class TemplateParseError(Exception):
    """A document failed to parse; carries the primary violation only."""

    def __init__(self, kind: str, location: int, detail: str) -> None:
        super().__init__(f"{kind} at offset {location}: {detail}")
        self.kind = kind
        self.location = location
        self.detail = detail


@dataclass
class StructuredOutput:
    """A parsed (or parse-ready) reasoning graph plus its final answer.

    ``step_count`` records how many step lines the source document
    carried; under strict parsing it always equals the edge count, under
    lenient parsing duplicated steps may collapse so the edge count can
    be lower.
    """

    graph: ReasoningGraph
    answer: str
    step_count: int

    def __post_init__(self) -> None:
        self.answer = self.answer.strip()
        if not self.answer:
            raise ValueError("answer must be non-empty after stripping")
        if self.step_count < 1:
            raise ValueError("step_count must be >= 1")

    @classmethod
    def from_graph(cls, graph: ReasoningGraph, answer: str) -> "StructuredOutput":
        return cls(graph=graph, answer=answer, step_count=graph.edge_count)


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def _startswith(text: str, pos: int, token: str, ci: bool) -> bool:
    chunk = text[pos : pos + len(token)]
    return chunk.lower() == token if ci else chunk == token


def _find(text: str, token: str, start: int, ci: bool) -> int:
    return (text.lower() if ci else text).find(token, start)


def _split_step(content: str, offset: int) -> tuple[str, str]:
    """Split one step body on its single dependency arrow."""
    arrow_hits = content.count(ARROW) + content.count("->")
    if arrow_hits == 0:
        raise TemplateParseError(MALFORMED_STEP, offset, "step has no dependency arrow")
    if arrow_hits > 1:
        raise TemplateParseError(
            MALFORMED_STEP, offset, "step has more than one arrow; chains are not sugar"
        )
    if ARROW in content:
        lhs, rhs = content.split(ARROW, 1)
    else:
        lhs, rhs = content.split("->", 1)
    sides = []
    for raw in (lhs, rhs):
        side = raw.strip()
        if "<" in side or ">" in side:
            raise TemplateParseError(
                MALFORMED_STEP, offset, f"markup inside step text: {side!r}"
            )
        if not side or not _normalizes(side):
            raise TemplateParseError(
                EMPTY_ENDPOINT, offset, "step endpoint is empty after normalization"
            )
        sides.append(side)
    return sides[0], sides[1]


def _normalizes(side: str) -> bool:
    return bool(normalize_text(side))


def parse(text: str, mode: str = STRICT) -> StructuredOutput:
    """Parse a template document into a StructuredOutput.

    Raises TemplateParseError carrying exactly one primary violation
    (kind, character offset, detail). ``mode`` is "strict" or
    "lenient"; lenient accepts a superset of strict and the two agree
    exactly on strict-valid input.
    """
    if mode not in (STRICT, LENIENT):
        raise ValueError(f"unknown parse mode: {mode!r}")
    ci = mode == LENIENT

    if ci:
        start = _find(text, _REASONING_OPEN, 0, True)
        if start < 0:
            raise TemplateParseError(
                MISSING_REASONING_BLOCK, 0, "no <reasoning> block found"
            )
        pos = start + len(_REASONING_OPEN)
    else:
        pos = _skip_ws(text, 0)
        if not _startswith(text, pos, _REASONING_OPEN, False):
            raise TemplateParseError(
                MISSING_REASONING_BLOCK, pos, "document must open with <reasoning>"
            )
        pos += len(_REASONING_OPEN)

    block_start = pos
    steps: list[tuple[str, str, int]] = []
    while True:
        pos = _skip_ws(text, pos)
        if pos >= len(text):
            raise TemplateParseError(
                MISSING_REASONING_BLOCK, pos, "unterminated <reasoning> block"
            )
        if _startswith(text, pos, _REASONING_CLOSE, ci):
            pos += len(_REASONING_CLOSE)
            break
        if _startswith(text, pos, _STEP_OPEN, ci):
            body_start = pos + len(_STEP_OPEN)
            end = _find(text, _STEP_CLOSE, body_start, ci)
            if end < 0:
                raise TemplateParseError(MALFORMED_STEP, pos, "unterminated <step>")
            lhs, rhs = _split_step(text[body_start:end], pos)
            steps.append((lhs, rhs, pos))
            pos = end + len(_STEP_CLOSE)
            continue
        raise TemplateParseError(
            MALFORMED_STEP, pos, "unexpected content inside <reasoning> block"
        )

    if not steps:
        raise TemplateParseError(
            MALFORMED_STEP, block_start, "reasoning block contains no steps"
        )

    pos = _skip_ws(text, pos)
    if not _startswith(text, pos, _ANSWER_OPEN, ci):
        raise TemplateParseError(
            MISSING_ANSWER_BLOCK, pos, "expected <answer> after reasoning block"
        )
    answer_start = pos + len(_ANSWER_OPEN)
    answer_end = _find(text, _ANSWER_CLOSE, answer_start, ci)
    if answer_end < 0:
        raise TemplateParseError(MISSING_ANSWER_BLOCK, pos, "unterminated <answer> block")
    answer = text[answer_start:answer_end].strip()
    if not answer:
        raise TemplateParseError(MISSING_ANSWER_BLOCK, answer_start, "empty answer")
    pos = answer_end + len(_ANSWER_CLOSE)

    if not ci:
        tail = _skip_ws(text, pos)
        if tail != len(text):
            raise TemplateParseError(
                TRAILING_GARBAGE, tail, "content after </answer> in strict mode"
            )

    graph = ReasoningGraph()
    step_count = 0
    for lhs, rhs, loc in steps:
        step_count += 1
        try:
            graph.add_edge(lhs, rhs)
        except DuplicateEdgeError:
            if not ci:
                raise TemplateParseError(
                    DUPLICATE_STEP, loc, f"step repeats an earlier dependency: {lhs!r} -> {rhs!r}"
                ) from None
            log.warning("lenient parse collapsed a duplicated step: %r -> %r", lhs, rhs)

    diag = validate(graph)
    for violation in diag.errors:
        if violation.kind == ERROR_CYCLE:
            raise TemplateParseError(CYCLE_IN_STEPS, block_start, violation.detail)
    if diag.errors:  # pragma: no cover - unreachable via this constructor
        raise TemplateParseError(MALFORMED_STEP, block_start, diag.errors[0].detail)

    return StructuredOutput(graph=graph, answer=answer, step_count=step_count)


_RESERVED_IN_NODE = ("<", ">") + _ARROW_TOKENS


def render(output: StructuredOutput) -> str:
    """Render the canonical template document for ``output``.

    One step line per edge in insertion order, unicode arrow, answer
    block last; byte-deterministic. Raises InvalidGraphError when the
    graph fails validation or cannot be expressed in the step grammar
    (no edges, isolated nodes, reserved tokens inside node text).
    """
    graph = output.graph
    diag = validate(graph)
    if diag.errors:
        kinds = sorted({v.kind for v in diag.errors})
        raise InvalidGraphError(f"cannot render invalid graph: {', '.join(kinds)}")
    if graph.edge_count == 0:
        raise InvalidGraphError("cannot render a graph with no edges")
    on_edge = {key for edge in graph.edges for key in edge.key}
    isolated = [n.id.key for n in graph.nodes if n.id.key not in on_edge]
    if isolated:
        raise InvalidGraphError(
            f"step grammar cannot express isolated nodes: {', '.join(map(repr, isolated))}"
        )
    for node in graph.nodes:
        for token in _RESERVED_IN_NODE:
            if token in node.text:
                raise InvalidGraphError(
                    f"node text contains reserved token {token!r}: {node.text!r}"
                )
    if "<" in output.answer or ">" in output.answer:
        raise InvalidGraphError("answer text may not contain angle brackets")

    lines = [_REASONING_OPEN]
    for edge in graph.edges:
        parent = graph.node(edge.parent).text
        child = graph.node(edge.child).text
        lines.append(f"<step> {parent} {ARROW} {child} </step>")
    lines.append(_REASONING_CLOSE)
    lines.append(f"<answer> {output.answer} </answer>")
    return "\n".join(lines)


def find_answer_tag(text: str) -> str | None:
    """Stripped content of the last answer tag, or None when absent."""
    hits = _ANSWER_TAG_RE.findall(text)
    if not hits:
        return None
    return hits[-1].strip()


DEFAULT_ANSWER_CUES = ("answer is", "answer:")


def extract_answer_lenient(
    text: str, cues: Sequence[str] = DEFAULT_ANSWER_CUES
) -> str | None:
    """Best-effort answer extraction from free-form model output.

    Prefers answer-tag content, then the trailing segment after the
    last occurrence of any cue, then the final non-empty line. Returns
    None only when the text holds nothing extractable.
    """
    if not text or not text.strip():
        return None
    tagged = find_answer_tag(text)
    if tagged:
        return tagged
    low = text.lower()
    best_pos = -1
    best_cue = ""
    for cue in cues:
        idx = low.rfind(cue.lower())
        if idx > best_pos:
            best_pos = idx
            best_cue = cue
    if best_pos >= 0:
        segment = text[best_pos + len(best_cue) :].strip().lstrip(":").strip()
        if segment:
            return segment
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if lines:
        return lines[-1]
    return None  # pragma: no cover - guarded by the leading strip check
