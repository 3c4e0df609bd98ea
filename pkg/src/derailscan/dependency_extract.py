"""Tag canonical AST nodes with dependency categories and build the graph.

Five categories drive everything downstream: declaration, expression,
control, data, and function. Which AST kinds map to which category is a
plain data table (``data/default_labels.tsv``), overridable per run with a
``kind<TAB>category`` file. Calls to ``require``/``assert``/``revert`` are
the one exception to pure kind-based tagging: they guard execution flow, so
they are lifted from function to control.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .ast_ingest import CanonicalAst, CanonicalAstNode
from .errors import InputError


class DependencyCategory(enum.Enum):
    DECLARATION = "declaration"
    EXPRESSION = "expression"
    CONTROL = "control"
    DATA = "data"
    FUNCTION = "function"


class EdgeType(enum.Enum):
    AST_CHILD = "AstChild"
    CONTROL_DEP = "ControlDep"
    DATA_DEP = "DataDep"
    FUNCTION_CALL = "FunctionCall"


# call targets that gate execution rather than transfer control to user code
CONTROL_GUARD_CALLEES = frozenset({"require", "assert", "revert"})


class BadLabelFile(InputError):
    pass


@dataclass(frozen=True)
class LabelSet:
    """The set L of retained syntax-element kinds, each mapped to a category."""

    entries: Mapping[str, DependencyCategory]

    def __post_init__(self):
        if not self.entries:
            raise BadLabelFile("label set is empty")

    def category_for(self, kind: str) -> DependencyCategory | None:
        return self.entries.get(kind)

    def __contains__(self, kind: str) -> bool:
        return kind in self.entries

    @staticmethod
    def _parse_lines(lines: Iterable[str], origin: str) -> "LabelSet":
        entries: dict[str, DependencyCategory] = {}
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise BadLabelFile(f"{origin}:{lineno}: expected kind<TAB>category")
            kind, cat = parts[0].strip(), parts[1].strip().lower()
            try:
                entries[kind] = DependencyCategory(cat)
            except ValueError:
                raise BadLabelFile(
                    f"{origin}:{lineno}: unknown category {cat!r}"
                ) from None
        return LabelSet(entries)

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelSet":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise BadLabelFile(f"cannot read label file {path}: {exc}") from exc
        return cls._parse_lines(text.splitlines(), str(path))

    @classmethod
    def default(cls) -> "LabelSet":
        text = (
            resources.files("derailscan.data")
            .joinpath("default_labels.tsv")
            .read_text(encoding="utf-8")
        )
        return cls._parse_lines(text.splitlines(), "default_labels.tsv")


@dataclass
class NodeAttr:
    """Graph-node attribute tuple: id, name, type (kind), value, category."""

    n_id: int
    n_name: str | None
    n_type: str
    n_value: str | None
    category: DependencyCategory | None = None


@dataclass(frozen=True)
class EdgeAttr:
    e_start: int
    e_end: int
    e_type: EdgeType


@dataclass
class AttributedGraph:
    """Directed graph over NodeAttr tuples with typed edges.

    ``adjacency`` is always the successor projection of ``edges`` in edge
    order; it is rebuilt by ``_reindex`` and never edited directly.
    """

    nodes: dict[int, NodeAttr]
    edges: list[EdgeAttr]
    adjacency: dict[int, list[int]] = field(default_factory=dict)
    root_id: int | None = None
    graph_label: int | None = None
    source_path: str = ""
    warnings: list[str] = field(default_factory=list)

    def _reindex(self) -> None:
        self.adjacency = {n_id: [] for n_id in self.nodes}
        for e in self.edges:
            self.adjacency[e.e_start].append(e.e_end)

    def ast_children(self, node_id: int) -> list[int]:
        return [
            e.e_end
            for e in self.edges
            if e.e_start == node_id and e.e_type is EdgeType.AST_CHILD
        ]


def _guard_call(tree: CanonicalAst, node: CanonicalAstNode) -> bool:
    if node.kind != "FunctionCall" or not node.child_ids:
        return False
    callee = tree.nodes[node.child_ids[0]]
    return callee.kind == "Identifier" and callee.name in CONTROL_GUARD_CALLEES


def tag_dependencies(
    tree: CanonicalAst, labels: LabelSet
) -> dict[int, DependencyCategory]:
    """Assign each node whose kind is in L its dependency category.

    Unmatched kinds are simply absent from the result. Guard calls
    (require/assert/revert) are control dependencies regardless of the
    FunctionCall entry in L.
    """
    tags: dict[int, DependencyCategory] = {}
    for node in tree.nodes.values():
        cat = labels.category_for(node.kind)
        if cat is None:
            continue
        if cat is DependencyCategory.FUNCTION and _guard_call(tree, node):
            cat = DependencyCategory.CONTROL
        tags[node.id] = cat
    return tags


def build_graph(
    tree: CanonicalAst,
    tags: Mapping[int, DependencyCategory],
    label: int | None = None,
) -> AttributedGraph:
    """Build the attributed dependency graph for one tagged source unit.

    One node per AST node; one AstChild edge per parent/child pair; DataDep
    edges from data-category nodes to the declaration they reference;
    FunctionCall edges from function-category call nodes to the local
    FunctionDefinition they resolve to. Unresolvable references within the
    document become warnings, never edges. Negative reference ids are
    compiler builtins and are skipped silently.
    """
    nodes = {
        n.id: NodeAttr(n.id, n.name, n.kind, n.value, tags.get(n.id))
        for n in tree.nodes.values()
    }
    edges: list[EdgeAttr] = []
    warnings: list[str] = []
    for node in tree.preorder():
        for child in node.child_ids:
            edges.append(EdgeAttr(node.id, child, EdgeType.AST_CHILD))
    for node in tree.preorder():
        ref = node.referenced_declaration
        if tags.get(node.id) is DependencyCategory.DATA and ref is not None:
            if ref < 0:
                continue
            target = tree.nodes.get(ref)
            if target is None:
                warnings.append(f"dangling reference: node {node.id} -> {ref}")
                continue
            if tags.get(ref) is DependencyCategory.DECLARATION:
                edges.append(EdgeAttr(node.id, ref, EdgeType.DATA_DEP))
        if tags.get(node.id) is DependencyCategory.FUNCTION:
            target_id = _resolve_local_call(tree, node)
            if target_id is not None:
                edges.append(EdgeAttr(node.id, target_id, EdgeType.FUNCTION_CALL))
    graph = AttributedGraph(
        nodes=nodes,
        edges=edges,
        root_id=tree.root_id,
        graph_label=label,
        source_path=tree.source_path,
        warnings=warnings,
    )
    graph._reindex()
    return graph


def _resolve_local_call(tree: CanonicalAst, call: CanonicalAstNode) -> int | None:
    """Resolve a call to a FunctionDefinition in the same document, if any."""
    for child_id in call.child_ids[:1]:
        callee = tree.nodes[child_id]
        ref = callee.referenced_declaration
        if ref is None or ref < 0:
            continue
        target = tree.nodes.get(ref)
        if target is not None and target.kind == "FunctionDefinition":
            return ref
    return None


@dataclass(frozen=True)
class InteractionPoint:
    """A call in one document resolved to a definition in another."""

    caller_graph: int
    caller_node: int
    callee_graph: int
    callee_node: int
    qualified_name: str


def _definition_arity(graph: AttributedGraph, func_id: int) -> int:
    for child in graph.ast_children(func_id):
        if graph.nodes[child].n_type == "ParameterList":
            return len(
                [
                    c
                    for c in graph.ast_children(child)
                    if graph.nodes[c].n_type == "VariableDeclaration"
                ]
            )
    return 0


def _qualified_definitions(
    graphs: list[AttributedGraph],
) -> dict[tuple[str, int], tuple[int, int]]:
    """Index (contract.function, arity) -> (graph index, definition node id)."""
    index: dict[tuple[str, int], tuple[int, int]] = {}
    for g_idx, graph in enumerate(graphs):
        for node in graph.nodes.values():
            if node.n_type != "ContractDefinition" or not node.n_name:
                continue
            for child in graph.ast_children(node.n_id):
                func = graph.nodes[child]
                if func.n_type != "FunctionDefinition" or not func.n_name:
                    continue
                key = (f"{node.n_name}.{func.n_name}", _definition_arity(graph, func.n_id))
                index.setdefault(key, (g_idx, func.n_id))
    return index


def identify_cross_contract_nodes(
    graphs: list[AttributedGraph],
) -> list[InteractionPoint]:
    """Find call nodes whose target definition lives in a different document.

    Matching is conservative: the call must be a member access ``X.f(...)``
    that does not resolve locally, and some other document must define a
    contract X with a function f of the same arity. Unmatched candidates
    produce a warning on the calling graph and no interaction.
    """
    definitions = _qualified_definitions(graphs)
    interactions: list[InteractionPoint] = []
    for g_idx, graph in enumerate(graphs):
        for node in sorted(graph.nodes.values(), key=lambda n: n.n_id):
            if node.category is not DependencyCategory.FUNCTION:
                continue
            if node.n_type != "FunctionCall":
                continue
            children = graph.ast_children(node.n_id)
            if not children:
                continue
            callee = graph.nodes[children[0]]
            if callee.n_type != "MemberAccess" or not callee.n_name:
                continue
            callee_children = graph.ast_children(callee.n_id)
            if not callee_children:
                continue
            base = graph.nodes[callee_children[0]]
            if base.n_type != "Identifier" or not base.n_name:
                continue
            qualified = f"{base.n_name}.{callee.n_name}"
            arity = len(children) - 1
            hit = definitions.get((qualified, arity))
            if hit is None:
                graph.warnings.append(
                    f"unresolved cross-contract call {qualified}/{arity} "
                    f"at node {node.n_id}"
                )
                continue
            callee_graph, callee_node = hit
            if callee_graph == g_idx:
                continue
            interactions.append(
                InteractionPoint(g_idx, node.n_id, callee_graph, callee_node, qualified)
            )
    return interactions
