"""Directed graphs of atomic reasoning steps.

Nodes are identified by their normalized text, edges express logical
dependency (parent must be established before child). Graphs are plain
containers: structural rules (acyclicity, endpoint presence, and so on)
are checked by :func:`validate`, which reports violations as data so
callers can decide how to react.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable

ERROR_CYCLE = "cycle"
ERROR_DANGLING_EDGE = "dangling-edge"
ERROR_EMPTY_GRAPH = "empty-graph"
ERROR_DUPLICATE_EDGE = "duplicate-edge"

WARNING_MULTIPLE_SINKS = "multiple-sinks"
WARNING_DISCONNECTED = "disconnected-components"
WARNING_ISOLATED_NODE = "isolated-node"

_STRIP_CHARS = string.punctuation + string.whitespace


class GraphError(Exception):
    """Base for all graph-level failures."""


class UnknownNodeError(GraphError):
    """A node was referenced that the graph does not contain."""


class DuplicateEdgeError(GraphError):
    """An identical (parent, child) edge was inserted twice."""


class InvalidGraphError(GraphError):
    """An operation requiring a clean graph was given one with errors."""


def normalize_text(text: str) -> str:
    """Normalize node text into its identity key.

    Lowercases, collapses runs of whitespace to single spaces and strips
    surrounding punctuation. Inner punctuation is preserved, so
    "don't" survives while "(B)." reduces to "b".
    """
    collapsed = " ".join(text.split()).lower()
    return collapsed.strip(_STRIP_CHARS)


@dataclass(frozen=True, order=True)
class NodeId:
    """Identity of a reasoning step: its normalized text."""

    key: str

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("node key must be non-empty")

    @classmethod
    def from_text(cls, text: str) -> "NodeId":
        key = normalize_text(text)
        if not key:
            raise ValueError(f"node text normalizes to nothing: {text!r}")
        return cls(key)


@dataclass(frozen=True)
class ReasoningNode:
    """A single atomic reasoning step with its display text."""

    id: NodeId
    text: str

    @classmethod
    def from_text(cls, text: str) -> "ReasoningNode":
        return cls(NodeId.from_text(text), text.strip())


@dataclass(frozen=True)
class ReasoningEdge:
    """Dependency between two steps: ``parent`` feeds ``child``."""

    parent: NodeId
    child: NodeId

    @property
    def key(self) -> tuple[str, str]:
        return (self.parent.key, self.child.key)


@dataclass
class GraphViolation:
    """One structural problem found by :func:`validate`."""

    kind: str
    detail: str
    nodes: tuple[str, ...] = ()


@dataclass
class GraphDiagnostics:
    """Outcome of validation; ``errors`` empty means the graph is usable."""

    errors: list[GraphViolation] = field(default_factory=list)
    warnings: list[GraphViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def kinds(self) -> tuple[set[str], set[str]]:
        return (
            {v.kind for v in self.errors},
            {v.kind for v in self.warnings},
        )


class ReasoningGraph:
    """Insertion-ordered node and edge container.

    ``add_edge`` rejects exact duplicates immediately (a duplicated
    dependency is almost always a generation bug worth surfacing), but
    everything else is representable and only reported by
    :func:`validate`. Deserializers use :meth:`from_parts` to build
    graphs that may carry dangling or duplicated edges for diagnosis.
    """

    def __init__(self) -> None:
        self._nodes: dict[str, ReasoningNode] = {}
        self._edges: list[ReasoningEdge] = []
        self._edge_keys: set[tuple[str, str]] = set()

    # -- construction -------------------------------------------------

    def add_node(self, text: str) -> NodeId:
        """Insert a step, deduplicating by normalized key.

        The first spelling of a step wins; later re-additions return the
        existing id without touching the stored display text.
        """
        node = ReasoningNode.from_text(text)
        if node.id.key not in self._nodes:
            self._nodes[node.id.key] = node
        return node.id

    def add_edge(self, parent: str | NodeId, child: str | NodeId) -> ReasoningEdge:
        """Insert a dependency, adding endpoints as needed.

        Raises DuplicateEdgeError when the same (parent, child) pair is
        already present. Self-loops and cycles are accepted here and
        flagged by validate().
        """
        pid = self._coerce_new(parent)
        cid = self._coerce_new(child)
        edge = ReasoningEdge(pid, cid)
        if edge.key in self._edge_keys:
            raise DuplicateEdgeError(f"duplicate edge {edge.key[0]!r} -> {edge.key[1]!r}")
        self._edges.append(edge)
        self._edge_keys.add(edge.key)
        return edge

    def _coerce_new(self, ref: str | NodeId) -> NodeId:
        if isinstance(ref, NodeId):
            if ref.key not in self._nodes:
                self._nodes[ref.key] = ReasoningNode(ref, ref.key)
            return ref
        return self.add_node(ref)

    @classmethod
    def from_edges(cls, pairs: Iterable[tuple[str, str]]) -> "ReasoningGraph":
        graph = cls()
        for parent, child in pairs:
            graph.add_edge(parent, child)
        return graph

    @classmethod
    def from_parts(
        cls,
        node_texts: Iterable[str],
        edge_pairs: Iterable[tuple[str, str]] = (),
    ) -> "ReasoningGraph":
        """Unchecked assembly: edges may dangle, repeat or self-loop."""
        graph = cls()
        for text in node_texts:
            graph.add_node(text)
        for parent, child in edge_pairs:
            edge = ReasoningEdge(NodeId.from_text(parent), NodeId.from_text(child))
            graph._edges.append(edge)
            graph._edge_keys.add(edge.key)
        return graph

    # -- access -------------------------------------------------------

    @property
    def nodes(self) -> tuple[ReasoningNode, ...]:
        return tuple(self._nodes.values())

    @property
    def edges(self) -> tuple[ReasoningEdge, ...]:
        return tuple(self._edges)

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def has_node(self, ref: str | NodeId) -> bool:
        return self._key_of(ref) in self._nodes

    def node(self, ref: str | NodeId) -> ReasoningNode:
        key = self._key_of(ref)
        try:
            return self._nodes[key]
        except KeyError:
            raise UnknownNodeError(f"no such node: {key!r}") from None

    @staticmethod
    def _key_of(ref: str | NodeId) -> str:
        return ref.key if isinstance(ref, NodeId) else normalize_text(ref)

    def __eq__(self, other: object) -> bool:
        # Structural equality: same steps (by key) linked the same way in
        # the same order. Display spellings are deliberately ignored.
        if not isinstance(other, ReasoningGraph):
            return NotImplemented
        return (
            set(self._nodes) == set(other._nodes)
            and [e.key for e in self._edges] == [e.key for e in other._edges]
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"ReasoningGraph(nodes={self.node_count}, edges={self.edge_count})"


# -- analysis ----------------------------------------------------------


def _well_formed_edges(graph: ReasoningGraph) -> list[tuple[str, str]]:
    """Deduplicated edges with both endpoints present and no self-loops."""
    keys = set()
    out: list[tuple[str, str]] = []
    node_keys = {n.id.key for n in graph.nodes}
    for edge in graph.edges:
        k = edge.key
        if k in keys or k[0] == k[1]:
            continue
        if k[0] not in node_keys or k[1] not in node_keys:
            continue
        keys.add(k)
        out.append(k)
    return out


def strongly_connected_components(
    node_keys: Iterable[str], edge_keys: Iterable[tuple[str, str]]
) -> list[list[str]]:
    """Kosaraju's algorithm, iterative; component members keep input order."""
    order_index = {k: i for i, k in enumerate(node_keys)}
    fwd: dict[str, list[str]] = {k: [] for k in order_index}
    rev: dict[str, list[str]] = {k: [] for k in order_index}
    for parent, child in edge_keys:
        fwd[parent].append(child)
        rev[child].append(parent)

    finished: list[str] = []
    seen: set[str] = set()
    for start in order_index:
        if start in seen:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        seen.add(start)
        while stack:
            node, i = stack[-1]
            if i < len(fwd[node]):
                stack[-1] = (node, i + 1)
                nxt = fwd[node][i]
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append((nxt, 0))
            else:
                stack.pop()
                finished.append(node)

    assigned: set[str] = set()
    components: list[list[str]] = []
    for start in reversed(finished):
        if start in assigned:
            continue
        member_stack = [start]
        assigned.add(start)
        members = []
        while member_stack:
            node = member_stack.pop()
            members.append(node)
            for nxt in rev[node]:
                if nxt not in assigned:
                    assigned.add(nxt)
                    member_stack.append(nxt)
        members.sort(key=order_index.__getitem__)
        components.append(members)
    return components


def validate(graph: ReasoningGraph) -> GraphDiagnostics:
    """Check every structural rule; violations come back as data.

    Errors: empty graph, duplicate edges, dangling edges, cycles
    (self-loops included). Warnings: multiple sinks, weakly
    disconnected components, isolated nodes. This function never
    raises on graph content.
    """
    diag = GraphDiagnostics()
    if graph.node_count == 0:
        diag.errors.append(GraphViolation(ERROR_EMPTY_GRAPH, "graph has no nodes"))
        return diag

    node_keys = [n.id.key for n in graph.nodes]
    node_set = set(node_keys)
    seen_edges: set[tuple[str, str]] = set()
    for edge in graph.edges:
        k = edge.key
        if k in seen_edges:
            diag.errors.append(
                GraphViolation(ERROR_DUPLICATE_EDGE, f"edge repeated: {k[0]!r} -> {k[1]!r}", k)
            )
        seen_edges.add(k)
        missing = tuple(key for key in k if key not in node_set)
        if missing:
            diag.errors.append(
                GraphViolation(
                    ERROR_DANGLING_EDGE,
                    f"edge endpoint(s) not in node set: {', '.join(repr(m) for m in missing)}",
                    k,
                )
            )
        if k[0] == k[1] and not missing:
            diag.errors.append(
                GraphViolation(ERROR_CYCLE, f"self-loop on {k[0]!r}", (k[0],))
            )

    well_formed = _well_formed_edges(graph)
    for component in strongly_connected_components(node_keys, well_formed):
        if len(component) > 1:
            diag.errors.append(
                GraphViolation(
                    ERROR_CYCLE,
                    "cycle through " + " -> ".join(component),
                    tuple(component),
                )
            )

    out_deg = {k: 0 for k in node_keys}
    degree = {k: 0 for k in node_keys}
    for parent, child in well_formed:
        out_deg[parent] += 1
        degree[parent] += 1
        degree[child] += 1

    sink_keys = [k for k in node_keys if out_deg[k] == 0]
    if len(sink_keys) > 1:
        diag.warnings.append(
            GraphViolation(
                WARNING_MULTIPLE_SINKS,
                f"{len(sink_keys)} sinks present",
                tuple(sink_keys),
            )
        )

    components = _weak_components(node_keys, well_formed)
    if len(components) > 1:
        diag.warnings.append(
            GraphViolation(
                WARNING_DISCONNECTED,
                f"{len(components)} weakly connected components",
            )
        )

    for key in node_keys:
        if degree[key] == 0:
            diag.warnings.append(
                GraphViolation(WARNING_ISOLATED_NODE, f"node {key!r} touches no edge", (key,))
            )
    return diag


def _weak_components(
    node_keys: list[str], edge_keys: list[tuple[str, str]]
) -> list[list[str]]:
    neighbours: dict[str, list[str]] = {k: [] for k in node_keys}
    for parent, child in edge_keys:
        neighbours[parent].append(child)
        neighbours[child].append(parent)
    seen: set[str] = set()
    components = []
    for start in node_keys:
        if start in seen:
            continue
        seen.add(start)
        stack = [start]
        members = []
        while stack:
            node = stack.pop()
            members.append(node)
            for nxt in neighbours[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        components.append(members)
    return components


def _require_clean(graph: ReasoningGraph, operation: str) -> None:
    diag = validate(graph)
    if not diag.ok:
        kinds = sorted({v.kind for v in diag.errors})
        raise InvalidGraphError(f"{operation} requires a clean graph, found: {', '.join(kinds)}")


def parents(graph: ReasoningGraph, node: str | NodeId) -> set[NodeId]:
    """Direct prerequisites of ``node``; empty for a source node."""
    target = graph.node(node).id
    return {e.parent for e in graph.edges if e.child == target}


def children(graph: ReasoningGraph, node: str | NodeId) -> set[NodeId]:
    """Direct dependents of ``node``; empty for a sink."""
    source = graph.node(node).id
    return {e.child for e in graph.edges if e.parent == source}


def sinks(graph: ReasoningGraph) -> list[NodeId]:
    """Nodes with no outgoing edges, in first-insertion order."""
    _require_clean(graph, "sinks")
    with_out = {e.parent.key for e in graph.edges}
    return [n.id for n in graph.nodes if n.id.key not in with_out]


def topological_order(graph: ReasoningGraph) -> list[NodeId]:
    """Kahn's algorithm; ties broken by node insertion order."""
    _require_clean(graph, "topological_order")
    node_keys = [n.id.key for n in graph.nodes]
    position = {k: i for i, k in enumerate(node_keys)}
    in_deg = {k: 0 for k in node_keys}
    children_of: dict[str, list[str]] = {k: [] for k in node_keys}
    for edge in graph.edges:
        in_deg[edge.child.key] += 1
        children_of[edge.parent.key].append(edge.child.key)

    ready = sorted((k for k in node_keys if in_deg[k] == 0), key=position.__getitem__)
    order: list[NodeId] = []
    while ready:
        key = ready.pop(0)
        order.append(graph.node(key).id)
        changed = False
        for child_key in children_of[key]:
            in_deg[child_key] -= 1
            if in_deg[child_key] == 0:
                ready.append(child_key)
                changed = True
        if changed:
            ready.sort(key=position.__getitem__)
    return order


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def export_dot(graph: ReasoningGraph, answer: str | None = None) -> str:
    """Render a clean graph as Graphviz DOT text.

    Branch nodes (out-degree >= 2) are tinted blue; the decision node
    (the unique sink, when there is exactly one) is tinted green and,
    when ``answer`` is given, carries it in its label. Output is
    byte-deterministic: statements follow insertion order.
    """
    _require_clean(graph, "export_dot")
    out_deg: dict[str, int] = {n.id.key: 0 for n in graph.nodes}
    for edge in graph.edges:
        out_deg[edge.parent.key] += 1
    sink_keys = [k for k, d in out_deg.items() if d == 0]
    decision_key = sink_keys[0] if len(sink_keys) == 1 else None

    lines = [
        "digraph reasoning {",
        "  rankdir=TB;",
        '  node [shape=box, style="rounded,filled", fillcolor="white"];',
    ]
    for node in graph.nodes:
        key = node.id.key
        label = node.text
        attrs = []
        if key == decision_key:
            if answer is not None:
                label = f"{label}\nanswer: {answer}"
            attrs.append('fillcolor="palegreen"')
        elif out_deg[key] >= 2:
            attrs.append('fillcolor="lightblue"')
        attrs.insert(0, f'label="{_dot_escape(label)}"')
        lines.append(f'  "{_dot_escape(key)}" [{" ".join(attrs)}];')
    for edge in graph.edges:
        lines.append(f'  "{_dot_escape(edge.parent.key)}" -> "{_dot_escape(edge.child.key)}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
