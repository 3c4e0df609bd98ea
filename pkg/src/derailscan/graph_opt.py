"""Prune dependency graphs down to categorized nodes and merge documents.

Raw graphs carry every AST node. Most kinds carry no dependency signal, so
optimization walks the tree once from the root and keeps only nodes that
received a category, reconnecting each survivor to its nearest retained
ancestor. The root is always kept so the result stays a single tree.

Merging places per-document graphs side by side under distinct id ranges
and adds one FunctionCall edge per cross-contract interaction.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

from .dependency_extract import (
    AttributedGraph,
    EdgeAttr,
    EdgeType,
    InteractionPoint,
    NodeAttr,
)
from .errors import InternalError


class MissingRoot(InternalError):
    pass


class IdCollision(InternalError):
    pass


def _copy_attr(a: NodeAttr) -> NodeAttr:
    return NodeAttr(a.n_id, a.n_name, a.n_type, a.n_value, a.category)


def optimize_graph(graph: AttributedGraph) -> AttributedGraph:
    """Drop uncategorized nodes, rewiring children to retained ancestors.

    Single depth-first walk over the AstChild skeleton. A node survives if
    it has a category or is the root. Each surviving node gets one AstChild
    edge from its nearest surviving proper ancestor, so ancestor/descendant
    reachability among survivors is exactly preserved. DataDep and
    FunctionCall edges survive only when both endpoints do. Nodes not
    reachable from the root are discarded.
    """
    root = graph.root_id
    if root is None or root not in graph.nodes:
        raise MissingRoot(f"graph {graph.source_path!r} has no root node")

    kids: dict[int, list[int]] = defaultdict(list)
    for e in graph.edges:
        if e.e_type is EdgeType.AST_CHILD:
            kids[e.e_start].append(e.e_end)

    retained: dict[int, NodeAttr] = {}
    tree_edges: list[EdgeAttr] = []
    visited: set[int] = set()
    stack: list[tuple[int, int | None]] = [(root, None)]
    while stack:
        nid, anc = stack.pop()
        if nid in visited:
            continue
        visited.add(nid)
        attr = graph.nodes[nid]
        if nid == root or attr.category is not None:
            retained[nid] = _copy_attr(attr)
            if anc is not None:
                tree_edges.append(EdgeAttr(anc, nid, EdgeType.AST_CHILD))
            anc = nid
        for child in reversed(kids.get(nid, [])):
            stack.append((child, anc))

    extra_edges = [
        e
        for e in graph.edges
        if e.e_type is not EdgeType.AST_CHILD
        and e.e_start in retained
        and e.e_end in retained
    ]
    out = AttributedGraph(
        nodes=retained,
        edges=tree_edges + extra_edges,
        root_id=root,
        graph_label=graph.graph_label,
        source_path=graph.source_path,
        warnings=list(graph.warnings),
    )
    out._reindex()
    return out


def document_offsets(graphs: Sequence[AttributedGraph]) -> list[int]:
    """Id shift per graph placing each one past its predecessor's maximum."""
    offsets: list[int] = []
    next_free = 0
    for g in graphs:
        offsets.append(next_free)
        next_free += (max(g.nodes) if g.nodes else 0) + 1
    return offsets


def merge_subgraphs(
    graphs: Sequence[AttributedGraph],
    interactions: Sequence[InteractionPoint] = (),
    label: int | None = None,
    _offsets: Sequence[int] | None = None,
) -> AttributedGraph:
    """Combine per-document graphs into one graph with disjoint id ranges.

    Document i's ids are shifted by a running offset (past the previous
    document's maximum id), then each interaction becomes a FunctionCall
    edge from the shifted caller node to the shifted callee definition.
    ``_offsets`` exists for tests; supplying overlapping ranges raises
    IdCollision.
    """
    if not graphs:
        raise MissingRoot("cannot merge zero graphs")
    if _offsets is None:
        offsets = document_offsets(graphs)
    else:
        if len(_offsets) != len(graphs):
            raise IdCollision("offset count does not match graph count")
        offsets = list(_offsets)

    nodes: dict[int, NodeAttr] = {}
    edges: list[EdgeAttr] = []
    warnings: list[str] = []
    for g, off in zip(graphs, offsets):
        for nid, attr in sorted(g.nodes.items()):
            new_id = nid + off
            if new_id in nodes:
                raise IdCollision(f"merged id {new_id} assigned twice")
            nodes[new_id] = NodeAttr(
                new_id, attr.n_name, attr.n_type, attr.n_value, attr.category
            )
        for e in g.edges:
            edges.append(EdgeAttr(e.e_start + off, e.e_end + off, e.e_type))
        warnings.extend(g.warnings)

    for ip in interactions:
        edges.append(
            EdgeAttr(
                ip.caller_node + offsets[ip.caller_graph],
                ip.callee_node + offsets[ip.callee_graph],
                EdgeType.FUNCTION_CALL,
            )
        )

    merged = AttributedGraph(
        nodes=nodes,
        edges=edges,
        root_id=(graphs[0].root_id + offsets[0]) if graphs[0].root_id is not None else None,
        graph_label=label,
        source_path=";".join(g.source_path for g in graphs if g.source_path),
        warnings=warnings,
    )
    merged._reindex()
    return merged
