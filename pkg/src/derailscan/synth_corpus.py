"""Seeded generator for a separable synthetic contract corpus.

Each project is a compiler-style AST JSON document. Defective projects
(label 1) contain unchecked state writes: bare Assignment statements on
state variables. Clean projects (label 0) only validate and read state
(guards, requires, loops, calls) and never write it. Both classes draw
the same background material (guarded require blocks, loops, helper
calls, a second contract reached through a member call), so the write
marker itself is the planted signal and a contract with no statements at
all sits naturally with the clean class.

The decision-stump oracle below confirms separability independently of any
model: it brute-forces single-token count-fraction rules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed_normalize import NormalizedDataset

TAXONOMY_WEIGHTS = [
    ("logical-inconsistency", 0.5115),
    ("resource-constraint", 0.2055),
    ("type-declaration-error", 0.1223),
    ("access-control", 0.0923),
    ("exception-handling", 0.0684),
]


class _Builder:
    """Allocates node ids and src spans for one synthetic document."""

    def __init__(self):
        self.next_id = 0

    def node(self, node_type: str, **fields) -> dict:
        nid = self.next_id
        self.next_id += 1
        out = {"id": nid, "nodeType": node_type, "src": f"{nid * 10}:8:0"}
        out.update(fields)
        return out


def _identifier(b: _Builder, name: str, ref: int | None = None) -> dict:
    node = b.node("Identifier", name=name)
    if ref is not None:
        node["referencedDeclaration"] = ref
    return node


def _literal(b: _Builder, value: int) -> dict:
    return b.node("Literal", value=str(value))


def _binop(b: _Builder, left: dict, right: dict, op: str) -> dict:
    return b.node(
        "BinaryOperation", operator=op, leftExpression=left, rightExpression=right
    )


def _block(b: _Builder, statements: list[dict]) -> dict:
    return b.node("Block", statements=statements)


def _state_write(b: _Builder, var_name: str, var_id: int) -> dict:
    value = _binop(b, _identifier(b, var_name, var_id), _literal(b, 1), "+")
    assignment = b.node(
        "Assignment",
        operator="=",
        leftHandSide=_identifier(b, var_name, var_id),
        rightHandSide=value,
    )
    return b.node("ExpressionStatement", expression=assignment)


def _state_read(b: _Builder, var_name: str, var_id: int) -> dict:
    compare = _binop(b, _identifier(b, var_name, var_id), _literal(b, 0), ">")
    return b.node("ExpressionStatement", expression=compare)


def _guarded(b: _Builder, stmt: dict, owner_name: str, owner_id: int) -> dict:
    condition = _binop(
        b, _identifier(b, owner_name, owner_id), _identifier(b, "caller"), "=="
    )
    return b.node("IfStatement", condition=condition, trueBody=_block(b, [stmt]))


def _require(b: _Builder, owner_name: str, owner_id: int) -> dict:
    check = _binop(
        b, _identifier(b, owner_name, owner_id), _identifier(b, "caller"), "=="
    )
    call = b.node(
        "FunctionCall",
        expression=_identifier(b, "require", ref=-18),
        arguments=[check],
    )
    return b.node("ExpressionStatement", expression=call)


def _for_loop(b: _Builder, body_stmts: list[dict]) -> dict:
    return b.node("ForStatement", body=_block(b, body_stmts))


def _function(
    b: _Builder, name: str, param_names: Sequence[str], statements: list[dict]
) -> dict:
    params = b.node(
        "ParameterList",
        parameters=[
            b.node(
                "VariableDeclaration",
                name=p,
                typeName=b.node("ElementaryTypeName", name="uint256"),
            )
            for p in param_names
        ],
    )
    return b.node(
        "FunctionDefinition", name=name, parameters=params, body=_block(b, statements)
    )


def generate_project_document(
    rng: np.random.Generator, positive: bool, index: int
) -> dict:
    """One combined-json payload: primary contract, sometimes a helper."""
    b = _Builder()
    source_unit = b.node("SourceUnit", nodes=[])
    source_unit["nodes"].append(
        b.node("PragmaDirective", literals=["solidity", "^", "0.8", ".20"])
    )
    contract = b.node("ContractDefinition", name=f"C{index:04d}", nodes=[])
    source_unit["nodes"].append(contract)

    # a slice of the clean class is inert (no behavior, possibly not even
    # declarations), so empty and near-empty contracts are anchored to the
    # clean side instead of being out of distribution
    inert = not positive and rng.random() < 0.2
    num_vars = int(rng.integers(0, 3)) if inert else int(rng.integers(2, 5))
    state_vars = []
    for v in range(num_vars):
        decl = b.node(
            "VariableDeclaration",
            name=f"sv{v}",
            stateVariable=True,
            typeName=b.node("ElementaryTypeName", name="uint256"),
        )
        contract["nodes"].append(decl)
        state_vars.append((f"sv{v}", decl["id"]))
    if inert:
        return {
            "version": "0.8.20",
            "sources": {f"contracts/c{index:04d}.sol": {"ast": source_unit}},
        }
    owner_name, owner_id = state_vars[0]

    with_helper_fn = rng.random() < 0.6
    noise_fn = None
    if with_helper_fn:
        noise_fn = _function(b, "tally", ["slot"], [])
        contract["nodes"].append(noise_fn)

    sources = {}
    helper_call_target = None
    if rng.random() < 0.3:
        hb = _Builder()
        helper_unit = hb.node("SourceUnit", nodes=[])
        helper_unit["nodes"].append(
            hb.node("PragmaDirective", literals=["solidity", "^", "0.8", ".20"])
        )
        helper = hb.node("ContractDefinition", name=f"H{index:04d}", nodes=[])
        helper["nodes"].append(_function(hb, "sync", ["amount"], []))
        helper_unit["nodes"].append(helper)
        sources[f"contracts/h{index:04d}.sol"] = {"ast": helper_unit}
        helper_call_target = f"H{index:04d}"

    num_funcs = int(rng.integers(1, 4))
    for f in range(num_funcs):
        statements: list[dict] = []
        # background drawn identically for both classes
        if rng.random() < 0.5:
            guard = _guarded(
                b, _require(b, owner_name, owner_id), owner_name, owner_id
            )
            statements.append(guard)
        var_name, var_id = state_vars[int(rng.integers(0, num_vars))]
        read = _state_read(b, var_name, var_id)
        if rng.random() < 0.4:
            statements.append(_for_loop(b, [read]))
        else:
            statements.append(read)
        # the planted marker: unchecked writes, defective projects only
        if positive:
            for _ in range(int(rng.integers(1, 4))):
                var_name, var_id = state_vars[int(rng.integers(0, num_vars))]
                statements.append(_state_write(b, var_name, var_id))
        if noise_fn is not None and rng.random() < 0.7:
            call = b.node(
                "FunctionCall",
                expression=_identifier(b, "tally", ref=noise_fn["id"]),
                arguments=[_literal(b, f)],
            )
            statements.append(b.node("ExpressionStatement", expression=call))
        if helper_call_target is not None and f == 0:
            member = b.node(
                "MemberAccess",
                memberName="sync",
                expression=_identifier(b, helper_call_target),
            )
            call = b.node(
                "FunctionCall", expression=member, arguments=[_literal(b, 7)]
            )
            statements.append(b.node("ExpressionStatement", expression=call))
        contract["nodes"].append(_function(b, f"act{f}", [], statements))

    sources[f"contracts/c{index:04d}.sol"] = {"ast": source_unit}
    return {"version": "0.8.20", "sources": sources}


@dataclass(frozen=True)
class ManifestRow:
    project_id: str
    label: int
    taxonomy: str
    document: str


def draw_taxonomy(rng: np.random.Generator) -> str:
    names = [n for n, _ in TAXONOMY_WEIGHTS]
    probs = [p for _, p in TAXONOMY_WEIGHTS]
    return str(rng.choice(names, p=probs))


def generate_corpus(
    out_dir: str | Path,
    num_graphs: int = 200,
    seed: int = 0,
    pos_fraction: float = 0.5,
) -> list[ManifestRow]:
    """Write one project directory per graph plus a labels table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    num_pos = int(round(num_graphs * pos_fraction))
    flags = np.array([1] * num_pos + [0] * (num_graphs - num_pos))
    rng.shuffle(flags)
    manifest: list[ManifestRow] = []
    for i, flag in enumerate(flags):
        positive = bool(flag)
        project_id = f"proj{i:04d}"
        payload = generate_project_document(rng, positive, i)
        project_dir = out / project_id
        project_dir.mkdir(parents=True, exist_ok=True)
        doc_path = project_dir / "contracts.ast.json"
        doc_path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
        taxonomy = draw_taxonomy(rng) if positive else ""
        manifest.append(ManifestRow(project_id, int(flag), taxonomy, str(doc_path)))
    lines = ["# project_id\tlabel\ttaxonomy"]
    for row in manifest:
        lines.append(f"{row.project_id}\t{row.label}\t{row.taxonomy}")
    (out / "labels.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def decision_stump_accuracy(
    dataset: NormalizedDataset,
) -> tuple[float, str, float]:
    """Best single-token count-fraction rule over the labeled corpus.

    For every token, the per-graph fraction of nodes carrying it is swept
    against every threshold midpoint, both polarities. Returns (accuracy,
    token, threshold) of the best rule; accuracy 1.0 certifies that one
    token linearly separates the classes.
    """
    labels = np.asarray(dataset.graph_labels)
    tokens = sorted(set(dataset.node_labels))
    num_graphs = dataset.num_graphs
    fractions = np.zeros((len(tokens), num_graphs))
    token_pos = {t: i for i, t in enumerate(tokens)}
    for g in range(num_graphs):
        start, end = dataset.graph_rows(g)
        n = max(end - start, 1)
        for t in dataset.node_labels[start:end]:
            fractions[token_pos[t], g] += 1.0 / n
    best = (0.0, "", 0.0)
    for t_idx, token in enumerate(tokens):
        fr = fractions[t_idx]
        uniq = np.unique(fr)
        thresholds = np.concatenate([[uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0])
        preds = fr[None, :] >= thresholds[:, None]
        for flip in (False, True):
            p = ~preds if flip else preds
            accs = (p == (labels == 1)).mean(axis=1)
            j = int(np.argmax(accs))
            if accs[j] > best[0]:
                best = (float(accs[j]), token, float(thresholds[j]))
    return best
