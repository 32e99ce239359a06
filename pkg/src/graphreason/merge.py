"""Merging candidate reasoning graphs into one consolidated graph.

Two roads: a fully specified deterministic majority merge (group by
normalized answer, union the winning group, break cycles by evidence
strength, prune to the conclusion's ancestry) and an LLM-backed
integration call that strict-parses the model's consolidation and falls
back to the deterministic road when the model cannot produce a valid
document.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .answers import normalize_freeform
from .client import ChatClient, ClientError, CompletionRequest, SamplingConfig
from .codec import STRICT, StructuredOutput, TemplateParseError, parse, render
from .graph import (
    NodeId,
    ReasoningGraph,
    sinks,
    strongly_connected_components,
    validate,
)
from .prompts import INTEGRATION_PROMPT, REPAIR_SUFFIX, format_candidates

log = logging.getLogger(__name__)

MODE_DETERMINISTIC = "deterministic"
MODE_LLM = "llm"
MODE_LLM_FALLBACK = "llm-with-fallback"
MERGE_MODES = (MODE_DETERMINISTIC, MODE_LLM, MODE_LLM_FALLBACK)

DROP_CYCLE_BREAK = "cycle-break"
DROP_PRUNED = "pruned-unreachable"


class MergeError(Exception):
    """Base for merge failures."""


class NoValidCandidateError(MergeError):
    """Every candidate was excluded before merging could start."""


class LLMMergeFailedError(MergeError):
    """The integration model never produced a parseable document."""


@dataclass
class CandidateSet:
    """Ordered candidates for one question, tagged by sampling index."""

    candidates: list[tuple[StructuredOutput, int]]
    question: str

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("candidate set must be non-empty")
        indices = [idx for _, idx in self.candidates]
        if sorted(set(indices)) != indices:
            raise ValueError(f"source indices must be unique and ascending: {indices}")


@dataclass
class DroppedEdge:
    parent: str
    child: str
    reason: str
    multiplicity: int = 1


@dataclass
class MergedResult:
    graph: ReasoningGraph
    answer: str
    conclusion: NodeId
    contributing_indices: tuple[int, ...]
    dropped_edges: list[DroppedEdge] = field(default_factory=list)
    merge_mode: str = MODE_DETERMINISTIC
    fell_back: bool = False


def _valid_candidates(
    candidate_set: CandidateSet,
) -> list[tuple[StructuredOutput, int]]:
    kept = [
        (output, idx)
        for output, idx in candidate_set.candidates
        if validate(output.graph).ok
    ]
    if not kept:
        raise NoValidCandidateError(
            f"no structurally valid candidate for question {candidate_set.question[:60]!r}"
        )
    return kept


def _majority_group(
    candidates: list[tuple[StructuredOutput, int]],
) -> list[tuple[StructuredOutput, int]]:
    groups: dict[str, list[tuple[StructuredOutput, int]]] = {}
    for output, idx in candidates:
        groups.setdefault(normalize_freeform(output.answer), []).append((output, idx))
    best: list[tuple[StructuredOutput, int]] | None = None
    for members in groups.values():
        if best is None:
            best = members
            continue
        # Bigger group wins; equal sizes go to the group holding the
        # lowest sampling index (members are already index-ascending).
        if len(members) > len(best) or (
            len(members) == len(best) and members[0][1] < best[0][1]
        ):
            best = members
    assert best is not None
    return best


def merge_deterministic(candidate_set: CandidateSet) -> MergedResult:
    """Majority-answer union merge with reproducible tie-breaking.

    Equal inputs give byte-identical results: grouping follows
    normalized answers, the union keeps first-seen order, cycle edges
    die lowest-multiplicity-first (ties to the lexicographically
    greatest (parent, child) key), and the conclusion is the first sink
    of the winning group's lowest-index candidate. Nodes that cannot
    reach the conclusion are pruned, with each dropped edge recorded.
    """
    members = _majority_group(_valid_candidates(candidate_set))
    answer = members[0][0].answer

    display: dict[str, str] = {}
    node_order: list[str] = []
    multiplicity: dict[tuple[str, str], int] = {}
    edge_order: list[tuple[str, str]] = []
    for output, _ in members:
        for node in output.graph.nodes:
            if node.id.key not in display:
                display[node.id.key] = node.text
                node_order.append(node.id.key)
        for edge in output.graph.edges:
            if edge.key not in multiplicity:
                multiplicity[edge.key] = 0
                edge_order.append(edge.key)
            multiplicity[edge.key] += 1

    dropped: list[DroppedEdge] = []
    working = list(edge_order)
    while True:
        component_of: dict[str, int] = {}
        for i, component in enumerate(
            strongly_connected_components(node_order, working)
        ):
            if len(component) > 1:
                for key in component:
                    component_of[key] = i
        cyclic = [
            e
            for e in working
            if e[0] in component_of and component_of[e[0]] == component_of.get(e[1])
        ]
        if not cyclic:
            break
        weakest = min(multiplicity[e] for e in cyclic)
        victim = max(e for e in cyclic if multiplicity[e] == weakest)
        working.remove(victim)
        dropped.append(
            DroppedEdge(victim[0], victim[1], DROP_CYCLE_BREAK, multiplicity[victim])
        )

    conclusion = sinks(members[0][0].graph)[0]

    # Keep only structure that feeds the conclusion.
    incoming: dict[str, list[str]] = {key: [] for key in node_order}
    for parent, child in working:
        incoming[child].append(parent)
    keep = {conclusion.key}
    queue = [conclusion.key]
    while queue:
        for parent in incoming[queue.pop()]:
            if parent not in keep:
                keep.add(parent)
                queue.append(parent)

    graph = ReasoningGraph()
    for key in node_order:
        if key in keep:
            graph.add_node(display[key])
    for parent, child in working:
        if parent in keep and child in keep:
            graph.add_edge(display[parent], display[child])
        else:
            dropped.append(
                DroppedEdge(parent, child, DROP_PRUNED, multiplicity[(parent, child)])
            )

    result = MergedResult(
        graph=graph,
        answer=answer,
        conclusion=conclusion,
        contributing_indices=tuple(idx for _, idx in members),
        dropped_edges=dropped,
        merge_mode=MODE_DETERMINISTIC,
    )
    if not validate(result.graph).ok:  # pragma: no cover - defensive
        raise MergeError("merge produced an invalid graph")
    return result


def merge_llm(
    candidate_set: CandidateSet,
    client: ChatClient,
    config: SamplingConfig,
    *,
    fallback: bool = True,
) -> MergedResult:
    """Ask a model to consolidate the candidates into one graph.

    Issues a single completion at temperature 0 and strict-parses the
    reply; one repair retry quotes the parse failure back to the model.
    When both tries fail (or transport dies) the deterministic merge
    takes over if ``fallback`` is set, flagged on the result; otherwise
    LLMMergeFailedError is raised. Never returns an invalid graph.
    """
    valid = _valid_candidates(candidate_set)
    rendered = [render(output) for output, _ in valid]
    system, user = INTEGRATION_PROMPT.fill(
        question=candidate_set.question, candidates=format_candidates(rendered)
    )
    merge_config = replace(config, temperature=0.0, k=1)
    request = CompletionRequest(system, user, merge_config)

    last_failure: Exception | None = None
    for _ in range(2):
        try:
            reply = client.complete(request)
        except ClientError as err:
            last_failure = err
            break
        try:
            output = parse(reply.text, STRICT)
        except TemplateParseError as err:
            last_failure = err
            request = CompletionRequest(
                system,
                user + REPAIR_SUFFIX.format(kind=err.kind, detail=err.detail),
                merge_config,
            )
            continue
        return MergedResult(
            graph=output.graph,
            answer=output.answer,
            conclusion=sinks(output.graph)[0],
            contributing_indices=tuple(idx for _, idx in valid),
            dropped_edges=[],
            merge_mode=MODE_LLM,
        )

    if not fallback:
        raise LLMMergeFailedError(f"integration failed: {last_failure}")
    log.warning(
        "LLM merge failed (%s); falling back to deterministic merge", last_failure
    )
    result = merge_deterministic(candidate_set)
    result.merge_mode = MODE_LLM_FALLBACK
    result.fell_back = True
    return result
