"""Shared builders for the test suite.

Everything here is plain construction code: tiny attributed graphs, random
trees, an in-memory corpus pipeline, and a compact-to-legacy AST format
converter used by the version-reconciliation checks.
"""

from __future__ import annotations

from typing import Any, Mapping, Sequence

import numpy as np
import pytest

from derailscan.ast_ingest import extract_documents, parse_ast_document
from derailscan.dependency_extract import (
    AttributedGraph,
    DependencyCategory,
    EdgeAttr,
    EdgeType,
    LabelSet,
    NodeAttr,
    build_graph,
    identify_cross_contract_nodes,
    tag_dependencies,
)
from derailscan.embed_normalize import (
    NormalizedDataset,
    assemble_dataset,
    build_vocabulary,
    init_embedding,
)
from derailscan.graph_opt import merge_subgraphs, optimize_graph
from derailscan.synth_corpus import generate_project_document


def make_graph(
    nodes: Sequence[tuple[int, str, DependencyCategory | None]],
    tree_edges: Sequence[tuple[int, int]],
    root_id: int,
    extra_edges: Sequence[tuple[int, int, EdgeType]] = (),
) -> AttributedGraph:
    """Hand-built attributed graph: (id, kind, category) nodes, parent edges."""
    g = AttributedGraph(
        nodes={
            nid: NodeAttr(nid, None, kind, None, cat) for nid, kind, cat in nodes
        },
        edges=[EdgeAttr(a, b, EdgeType.AST_CHILD) for a, b in tree_edges]
        + [EdgeAttr(a, b, t) for a, b, t in extra_edges],
        root_id=root_id,
    )
    g._reindex()
    return g


KIND_POOL = [f"K{i}" for i in range(10)]


def random_tree_graph(
    rng: np.random.Generator, max_nodes: int = 200
) -> tuple[AttributedGraph, set[str]]:
    """Random rooted tree with random kinds and a random retained-kind set.

    Nodes outside the retained set get no category; the root's kind may or
    may not be retained (it must survive either way).
    """
    n = int(rng.integers(1, max_nodes + 1))
    kinds = [KIND_POOL[int(k)] for k in rng.integers(0, len(KIND_POOL), size=n)]
    retained_kinds = {k for k in KIND_POOL if rng.random() < 0.4}
    nodes = []
    edges = []
    for i in range(n):
        cat = DependencyCategory.EXPRESSION if kinds[i] in retained_kinds else None
        nodes.append((i, kinds[i], cat))
        if i > 0:
            parent = int(rng.integers(0, i))
            edges.append((parent, i))
    return make_graph(nodes, edges, root_id=0), retained_kinds


def tree_parents(graph: AttributedGraph) -> dict[int, int]:
    """Child -> parent map over AstChild edges."""
    return {
        e.e_end: e.e_start
        for e in graph.edges
        if e.e_type is EdgeType.AST_CHILD
    }


def ancestor_pairs(parents: Mapping[int, int], keep: set[int]) -> set[tuple[int, int]]:
    """All (ancestor, descendant) pairs among ``keep``, by walking up."""
    pairs = set()
    for v in keep:
        cur = v
        while cur in parents:
            cur = parents[cur]
            if cur in keep:
                pairs.add((cur, v))
    return pairs


def build_corpus_dataset(
    num_graphs: int, seed: int, dim: int = 16
) -> NormalizedDataset:
    """Generated corpus pushed through the full graph pipeline, in memory."""
    rng = np.random.default_rng(seed)
    num_pos = num_graphs // 2
    flags = np.array([1] * num_pos + [0] * (num_graphs - num_pos))
    rng.shuffle(flags)
    labels = LabelSet.default()
    graphs = []
    names = []
    for i, flag in enumerate(flags):
        payload = generate_project_document(rng, bool(flag), i)
        docs = extract_documents(payload, f"proj{i:04d}.json")
        trees = [parse_ast_document(d) for d in docs]
        raw = [build_graph(t, tag_dependencies(t, labels)) for t in trees]
        interactions = identify_cross_contract_nodes(raw)
        optimized = [optimize_graph(g) for g in raw]
        merged = merge_subgraphs(optimized, interactions, label=int(flag))
        graphs.append(merged)
        names.append(f"proj{i:04d}")
    vocab = build_vocabulary(graphs)
    m = init_embedding(dim, vocab.size, seed)
    return assemble_dataset(graphs, vocab, m, names=names)


def modern_to_legacy(node: Any) -> Any:
    """Rewrite a compact-format AST node into the legacy layout.

    The kind moves into ``name``, scalar attributes move under
    ``attributes`` (with the legacy quirks: an Identifier's target name is
    stored as ``attributes.value``, a member name as
    ``attributes.member_name``), and id-bearing children are concatenated
    into a single ``children`` array in document order.
    """
    if isinstance(node, list):
        return [modern_to_legacy(x) for x in node]
    if not isinstance(node, dict):
        return node
    if "nodeType" not in node:
        return {k: modern_to_legacy(v) for k, v in node.items()}

    kind = node["nodeType"]
    out: dict[str, Any] = {"id": node["id"], "name": kind}
    if "src" in node:
        out["src"] = node["src"]
    attributes: dict[str, Any] = {}
    children: list[Any] = []

    def collect(value: Any) -> None:
        if isinstance(value, dict):
            if "nodeType" in value or "id" in value:
                children.append(modern_to_legacy(value))
            else:
                for v in value.values():
                    collect(v)
        elif isinstance(value, list):
            for v in value:
                collect(v)

    for key, value in node.items():
        if key in ("id", "nodeType", "src"):
            continue
        if isinstance(value, (dict, list)):
            collect(value)
        elif key == "name":
            if kind == "Identifier":
                attributes["value"] = value
            else:
                attributes["name"] = value
        elif key == "memberName":
            attributes["member_name"] = value
        elif key == "referencedDeclaration":
            attributes["referencedDeclaration"] = value
        else:
            attributes[key] = value
    if attributes:
        out["attributes"] = attributes
    if children:
        out["children"] = children
    return out


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
