"""Dataset construction: sample trajectories, merge, filter, split, write.

The pipeline turns plain question/label pairs into training instances
whose reasoning is a serialized graph template. Every source item either
becomes exactly one retained instance or exactly one discard record, so
the final report satisfies total_in == retained + discarded.
"""
from __future__ import annotations

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ._io import atomic_write_text, jsonl_dumps
from .answers import answers_match
from .client import AllSamplesFailedError, ChatClient, SamplingConfig
from .codec import LENIENT, STRICT, StructuredOutput, TemplateParseError, parse, render
from .merge import (
    MERGE_MODES,
    MODE_DETERMINISTIC,
    MODE_LLM,
    CandidateSet,
    LLMMergeFailedError,
    MergedResult,
    NoValidCandidateError,
    merge_deterministic,
    merge_llm,
)
from .prompts import TRAJECTORY_PROMPT

log = logging.getLogger(__name__)

DISCARD_ANSWER_MISMATCH = "answer-mismatch"
DISCARD_ALL_CANDIDATES_FAILED = "all-candidates-failed"
DISCARD_PARSE_FAILURE = "parse-failure"
DISCARD_REASONS = (
    DISCARD_ANSWER_MISMATCH,
    DISCARD_ALL_CANDIDATES_FAILED,
    DISCARD_PARSE_FAILURE,
)

DEFAULT_SPLIT_SEED = 42
TRAIN_FILE = "train.jsonl"
VALID_FILE = "valid.jsonl"
REPORT_FILE = "report.json"


class PipelineError(Exception):
    pass


class SourceFormatError(PipelineError):
    """A source record could not be read; message names file and line."""


@dataclass(frozen=True)
class SourceQA:
    """One input question with its reference label."""

    question: str
    label: str
    source_id: str

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("question must be non-empty")
        if not self.label.strip():
            raise ValueError("label must be non-empty")
        if not self.source_id:
            raise ValueError("source_id must be non-empty")


@dataclass(frozen=True)
class Provenance:
    """How a retained instance was produced."""

    source_id: str
    teacher_model: str
    k_used: int
    contributing_indices: tuple[int, ...]
    merge_mode: str
    fell_back: bool = False

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "teacher_model": self.teacher_model,
            "k_used": self.k_used,
            "contributing_indices": list(self.contributing_indices),
            "merge_mode": self.merge_mode,
            "fell_back": self.fell_back,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> Provenance:
        return cls(
            source_id=raw["source_id"],
            teacher_model=raw["teacher_model"],
            k_used=raw["k_used"],
            contributing_indices=tuple(raw["contributing_indices"]),
            merge_mode=raw["merge_mode"],
            fell_back=raw.get("fell_back", False),
        )


@dataclass(frozen=True)
class TrainingInstance:
    """One emitted dataset row: question, graph template text, label."""

    question: str
    graph_text: str
    label: str
    provenance: Provenance

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "graph_reasoning": self.graph_text,
            "label": self.label,
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> TrainingInstance:
        return cls(
            question=raw["question"],
            graph_text=raw["graph_reasoning"],
            label=raw["label"],
            provenance=Provenance.from_dict(raw["provenance"]),
        )


@dataclass(frozen=True)
class DiscardRecord:
    source_id: str
    reason: str
    detail: str = ""

    def __post_init__(self) -> None:
        if self.reason not in DISCARD_REASONS:
            raise ValueError(f"unknown discard reason {self.reason!r}")

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "reason": self.reason, "detail": self.detail}


@dataclass
class BuildReport:
    """Aggregate accounting for one dataset build."""

    total_in: int
    retained: int
    discarded_by_reason: dict[str, int]
    split_sizes: dict[str, int]

    def __post_init__(self) -> None:
        discarded = sum(self.discarded_by_reason.values())
        if self.total_in != self.retained + discarded:
            raise ValueError(
                f"accounting broken: {self.total_in} in != "
                f"{self.retained} retained + {discarded} discarded"
            )
        if self.split_sizes and sum(self.split_sizes.values()) != self.retained:
            raise ValueError("split sizes must sum to the retained count")

    def to_dict(self) -> dict:
        return {
            "total_in": self.total_in,
            "retained": self.retained,
            "discarded_by_reason": dict(self.discarded_by_reason),
            "split_sizes": dict(self.split_sizes),
        }


def read_sources(path: str | Path) -> list[SourceQA]:
    """Load question/label pairs from a JSONL file.

    Each record needs "question" and "label" (or "answer"); "id" is
    optional and defaults to the 1-based line number.
    """
    path = Path(path)
    items: list[SourceQA] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as err:
                raise SourceFormatError(f"{path}:{lineno}: invalid JSON ({err})") from err
            if not isinstance(raw, dict) or "question" not in raw:
                raise SourceFormatError(f"{path}:{lineno}: record must be an object with a question")
            label = raw.get("label", raw.get("answer"))
            if label is None:
                raise SourceFormatError(f"{path}:{lineno}: record has no label or answer field")
            source_id = str(raw.get("id", f"item-{lineno}"))
            try:
                items.append(SourceQA(str(raw["question"]), str(label), source_id))
            except ValueError as err:
                raise SourceFormatError(f"{path}:{lineno}: {err}") from err
    return items


def parse_candidates(texts: Sequence[str | None]) -> list[tuple[StructuredOutput, int]]:
    """Strict-parse each sampled text, falling back to lenient per sample.

    Unparseable samples are dropped; indices of survivors are preserved.
    """
    kept: list[tuple[StructuredOutput, int]] = []
    for index, text in enumerate(texts):
        if text is None:
            continue
        try:
            kept.append((parse(text, STRICT), index))
            continue
        except TemplateParseError:
            pass
        try:
            kept.append((parse(text, LENIENT), index))
            log.warning("sample %d accepted only under lenient parsing", index)
        except TemplateParseError as err:
            log.debug("sample %d unparseable: %s: %s", index, err.kind, err.detail)
    return kept


def _run_merge(
    candidate_set: CandidateSet,
    client: ChatClient,
    config: SamplingConfig,
    merge_mode: str,
) -> MergedResult:
    if merge_mode == MODE_DETERMINISTIC:
        return merge_deterministic(candidate_set)
    if merge_mode == MODE_LLM:
        return merge_llm(candidate_set, client, config, fallback=False)
    return merge_llm(candidate_set, client, config, fallback=True)


def build_instance(
    item: SourceQA,
    client: ChatClient,
    config: SamplingConfig,
    *,
    merge_mode: str = MODE_DETERMINISTIC,
    prompt=TRAJECTORY_PROMPT,
) -> TrainingInstance | DiscardRecord:
    """Process one source item end to end.

    Samples k trajectories, merges the parseable ones, and keeps the
    result only when the merged answer matches the reference label and
    the merged graph re-renders to a strict-parseable document.
    """
    if merge_mode not in MERGE_MODES:
        raise ValueError(f"merge_mode must be one of {MERGE_MODES}, got {merge_mode!r}")
    try:
        samples = client.sample_trajectories(item.question, config, prompt)
    except AllSamplesFailedError as err:
        return DiscardRecord(item.source_id, DISCARD_ALL_CANDIDATES_FAILED, str(err))

    candidates = parse_candidates(samples.texts)
    if not candidates:
        return DiscardRecord(
            item.source_id,
            DISCARD_ALL_CANDIDATES_FAILED,
            "no sample parsed as a reasoning template",
        )
    candidate_set = CandidateSet(candidates, question=item.question)

    try:
        merged = _run_merge(candidate_set, client, config, merge_mode)
    except NoValidCandidateError as err:
        return DiscardRecord(item.source_id, DISCARD_ALL_CANDIDATES_FAILED, str(err))
    except LLMMergeFailedError as err:
        return DiscardRecord(item.source_id, DISCARD_PARSE_FAILURE, str(err))

    if not answers_match(merged.answer, item.label):
        return DiscardRecord(
            item.source_id,
            DISCARD_ANSWER_MISMATCH,
            f"merged answer {merged.answer!r} does not match label {item.label!r}",
        )

    graph_text = render(StructuredOutput.from_graph(merged.graph, merged.answer))
    try:
        parse(graph_text, STRICT)
    except TemplateParseError as err:  # pragma: no cover - render guards this
        return DiscardRecord(
            item.source_id, DISCARD_PARSE_FAILURE, f"re-render not parseable: {err}"
        )

    provenance = Provenance(
        source_id=item.source_id,
        teacher_model=config.model_name,
        k_used=config.k,
        contributing_indices=merged.contributing_indices,
        merge_mode=merged.merge_mode,
        fell_back=merged.fell_back,
    )
    return TrainingInstance(item.question, graph_text, item.label, provenance)


def split_instances(
    instances: Sequence[TrainingInstance], seed: int = DEFAULT_SPLIT_SEED
) -> tuple[list[TrainingInstance], list[TrainingInstance]]:
    """Deterministic 9:1 train/valid split, both halves in input order.

    Membership comes from a seeded shuffle of positions; n // 10 items
    go to the validation side.
    """
    positions = list(range(len(instances)))
    random.Random(seed).shuffle(positions)
    n_valid = len(instances) // 10
    valid_positions = set(positions[:n_valid])
    train = [inst for i, inst in enumerate(instances) if i not in valid_positions]
    valid = [inst for i, inst in enumerate(instances) if i in valid_positions]
    return train, valid


@dataclass
class BuildResult:
    """Everything a build produced, before and after splitting."""

    instances: list[TrainingInstance]
    discards: list[DiscardRecord]
    train: list[TrainingInstance]
    valid: list[TrainingInstance]
    report: BuildReport = field(init=False)

    def __post_init__(self) -> None:
        counts = {reason: 0 for reason in DISCARD_REASONS}
        for record in self.discards:
            counts[record.reason] += 1
        self.report = BuildReport(
            total_in=len(self.instances) + len(self.discards),
            retained=len(self.instances),
            discarded_by_reason={k: v for k, v in counts.items() if v},
            split_sizes={"train": len(self.train), "valid": len(self.valid)},
        )


def build_dataset(
    items: Sequence[SourceQA],
    client: ChatClient,
    config: SamplingConfig,
    *,
    merge_mode: str = MODE_DETERMINISTIC,
    split_seed: int = DEFAULT_SPLIT_SEED,
    workers: int = 4,
    prompt=TRAJECTORY_PROMPT,
) -> BuildResult:
    """Build a dataset from question/label pairs, preserving input order."""
    ids = [item.source_id for item in items]
    if len(set(ids)) != len(ids):
        raise PipelineError("source ids must be unique")

    if not items:
        outcomes: list[TrainingInstance | DiscardRecord] = []
    elif workers <= 1:
        outcomes = [
            build_instance(item, client, config, merge_mode=merge_mode, prompt=prompt)
            for item in items
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(
                pool.map(
                    lambda item: build_instance(
                        item, client, config, merge_mode=merge_mode, prompt=prompt
                    ),
                    items,
                )
            )

    instances = [o for o in outcomes if isinstance(o, TrainingInstance)]
    discards = [o for o in outcomes if isinstance(o, DiscardRecord)]
    train, valid = split_instances(instances, split_seed)
    return BuildResult(instances, discards, train, valid)


def write_dataset(result: BuildResult, out_dir: str | Path, *, include_discards: bool = True) -> dict[str, Path]:
    """Write train.jsonl, valid.jsonl and report.json atomically."""
    out = Path(out_dir)
    paths = {
        "train": out / TRAIN_FILE,
        "valid": out / VALID_FILE,
        "report": out / REPORT_FILE,
    }
    atomic_write_text(paths["train"], jsonl_dumps(i.to_dict() for i in result.train))
    atomic_write_text(paths["valid"], jsonl_dumps(i.to_dict() for i in result.valid))
    report = result.report.to_dict()
    if include_discards:
        report["discards"] = [d.to_dict() for d in result.discards]
    atomic_write_text(paths["report"], json.dumps(report, indent=2, sort_keys=True) + "\n")
    return paths


def read_instances(path: str | Path) -> list[TrainingInstance]:
    """Load instances back from a train/valid JSONL file."""
    path = Path(path)
    instances = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                instances.append(TrainingInstance.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise SourceFormatError(f"{path}:{lineno}: bad instance record ({err})") from err
    return instances
