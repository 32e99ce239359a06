"""Toolkit for building and evaluating graph-structured reasoning data.

The package turns question/answer pairs into training instances whose
reasoning is a directed acyclic graph of short steps, serialized in a
tagged text template, and evaluates QA benchmarks under direct, linear
chain, and self-generated graph prompting paradigms.
"""
from __future__ import annotations

from .answers import (
    MODE_AUTO,
    MODE_FREEFORM,
    MODE_MCQ,
    MODE_NUMERIC,
    answers_match,
    extract_option_letter,
    normalize_freeform,
    parse_number,
)
from .bench import (
    ADAPTERS,
    BENCHMARKS,
    PARADIGMS,
    BenchError,
    BenchmarkItem,
    BenchmarkScore,
    EvalReport,
    ItemRecord,
    SchemaError,
    evaluate,
    load_benchmark,
    render_table,
    write_report,
)
from .client import (
    AllSamplesFailedError,
    AuthError,
    ChatClient,
    ClientError,
    CompletionRequest,
    CompletionResult,
    HttpBackend,
    MockBackend,
    ProtocolError,
    ResponseCache,
    SamplingConfig,
    TrajectorySamples,
    TransientError,
    TransportExhaustedError,
)
from .codec import (
    LENIENT,
    STRICT,
    StructuredOutput,
    TemplateParseError,
    extract_answer_lenient,
    find_answer_tag,
    parse,
    render,
)
from .graph import (
    GraphDiagnostics,
    GraphError,
    GraphViolation,
    InvalidGraphError,
    NodeId,
    ReasoningEdge,
    ReasoningGraph,
    ReasoningNode,
    export_dot,
    normalize_text,
    topological_order,
    validate,
)
from .merge import (
    MERGE_MODES,
    CandidateSet,
    DroppedEdge,
    LLMMergeFailedError,
    MergedResult,
    MergeError,
    NoValidCandidateError,
    merge_deterministic,
    merge_llm,
)
from .pipeline import (
    BuildReport,
    BuildResult,
    DiscardRecord,
    PipelineError,
    Provenance,
    SourceQA,
    TrainingInstance,
    build_dataset,
    build_instance,
    read_sources,
    split_instances,
    write_dataset,
)
from .rewards import RewardScore, reward_answer, reward_format, score_batch, score_completion

__all__ = [
    "ADAPTERS",
    "AllSamplesFailedError",
    "AuthError",
    "BENCHMARKS",
    "BenchError",
    "BenchmarkItem",
    "BenchmarkScore",
    "BuildReport",
    "BuildResult",
    "CandidateSet",
    "ChatClient",
    "ClientError",
    "CompletionRequest",
    "CompletionResult",
    "DiscardRecord",
    "DroppedEdge",
    "EvalReport",
    "GraphDiagnostics",
    "GraphError",
    "GraphViolation",
    "HttpBackend",
    "InvalidGraphError",
    "ItemRecord",
    "LENIENT",
    "LLMMergeFailedError",
    "MERGE_MODES",
    "MODE_AUTO",
    "MODE_FREEFORM",
    "MODE_MCQ",
    "MODE_NUMERIC",
    "MergeError",
    "MergedResult",
    "MockBackend",
    "NoValidCandidateError",
    "NodeId",
    "PARADIGMS",
    "PipelineError",
    "ProtocolError",
    "Provenance",
    "ReasoningEdge",
    "ReasoningGraph",
    "ReasoningNode",
    "ResponseCache",
    "RewardScore",
    "STRICT",
    "SamplingConfig",
    "SchemaError",
    "SourceQA",
    "StructuredOutput",
    "TemplateParseError",
    "TrainingInstance",
    "TrajectorySamples",
    "TransientError",
    "TransportExhaustedError",
    "answers_match",
    "build_dataset",
    "build_instance",
    "evaluate",
    "export_dot",
    "extract_answer_lenient",
    "extract_option_letter",
    "find_answer_tag",
    "load_benchmark",
    "merge_deterministic",
    "merge_llm",
    "normalize_freeform",
    "normalize_text",
    "parse",
    "parse_number",
    "read_sources",
    "render",
    "render_table",
    "reward_answer",
    "reward_format",
    "score_batch",
    "score_completion",
    "split_instances",
    "topological_order",
    "validate",
    "write_dataset",
    "write_report",
]
