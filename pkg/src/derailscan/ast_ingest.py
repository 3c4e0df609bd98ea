"""Canonicalize compiler-emitted Solidity ASTs across compiler versions.

Two JSON encodings exist in the wild and both are accepted here:

* the legacy format (roughly solc < 0.8 with ``--ast-json``): the syntax
  element of a node lives in the ``name`` field, human-readable attributes
  (name, value, referencedDeclaration, ...) live in an ``attributes``
  mapping, and children are concatenated into a single ``children`` array;

* the compact format (``--ast-compact-json``, standard-JSON ``ast`` output):
  the syntax element lives in ``nodeType``, attributes are direct fields,
  and children hang off format-specific keys (``nodes``, ``body``,
  ``statements``, ...), either as nested objects or arrays.

What both formats share is that every real node carries a unique integer
``id`` and child nodes sit inside nested containers of their parent. The
canonicalizer therefore does not enumerate per-kind schemas; it scans the
raw tree for id-bearing mappings, records the nesting level of each, and
wires hierarchy by the level rules: mappings found inside the same container
at the same level are siblings, and a node's parent is the nearest preceding
node one level up.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

from .errors import InputError


class MalformedAst(InputError):
    """Raw document is not a usable tree (no ids, cycles, duplicate ids)."""


class UnsupportedFormat(InputError):
    """Most nodes carry neither kind field; this is not an AST document."""


class OrphanNode(InputError):
    """A non-root node has no candidate parent at the previous level."""


class CompilerNotFound(InputError):
    pass


class CompilationFailed(InputError):
    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


@dataclass
class RawAstDocument:
    """One source unit's AST exactly as the compiler emitted it."""

    source_unit_path: str
    compiler_version: str
    root: Any


@dataclass
class FlatNode:
    """A parsed node before hierarchy wiring: canonical fields + position."""

    id: int
    kind: str
    name: str | None
    value: str | None
    src_span: tuple[int, int, int]
    referenced_declaration: int | None
    level: int
    order: int
    has_kind_field: bool = True


@dataclass
class CanonicalAstNode:
    id: int
    kind: str
    name: str | None = None
    value: str | None = None
    src_span: tuple[int, int, int] = (0, 0, 0)
    parent_id: int | None = None
    child_ids: list[int] = field(default_factory=list)
    referenced_declaration: int | None = None


@dataclass
class CanonicalAst:
    """A canonicalized source unit: id-keyed nodes plus the root id."""

    nodes: dict[int, CanonicalAstNode]
    root_id: int
    source_path: str = ""

    def __len__(self) -> int:
        return len(self.nodes)

    def children(self, node_id: int) -> list[CanonicalAstNode]:
        return [self.nodes[c] for c in self.nodes[node_id].child_ids]

    def depth(self, node_id: int) -> int:
        d = 0
        cur = self.nodes[node_id]
        while cur.parent_id is not None:
            cur = self.nodes[cur.parent_id]
            d += 1
        return d

    def preorder(self) -> Iterator[CanonicalAstNode]:
        stack = [self.root_id]
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            stack.extend(reversed(node.child_ids))


@dataclass
class ContractProject:
    """A project of one or more source units, optionally labeled."""

    project_id: str
    documents: list[CanonicalAst]
    label: int | None = None
    defect_categories: set[str] | None = None


def _parse_src(src: Any) -> tuple[int, int, int]:
    # solc encodes spans as "offset:length:file"; anything else degrades to (0,0,0)
    if not isinstance(src, str):
        return (0, 0, 0)
    parts = src.split(":")
    if len(parts) != 3:
        return (0, 0, 0)
    try:
        return (int(parts[0]), int(parts[1]), int(parts[2]))
    except ValueError:
        return (0, 0, 0)


def _as_text(value: Any) -> str | None:
    if value is None or isinstance(value, (dict, list)):
        return None
    if isinstance(value, str):
        return value
    return str(value)


def _as_ref(value: Any) -> int | None:
    if isinstance(value, bool) or not isinstance(value, int):
        return None
    return value


def _node_fields(
    raw: Mapping[str, Any],
) -> tuple[str, str | None, str | None, int | None, bool]:
    """Reconcile the version-specific field layouts into (kind, name, value, ref)."""
    node_type = raw.get("nodeType")
    if isinstance(node_type, str) and node_type:
        kind = node_type
        name = _as_text(raw.get("name")) or _as_text(raw.get("memberName"))
        value = _as_text(raw.get("value"))
        ref = _as_ref(raw.get("referencedDeclaration"))
        return kind, name or None, value, ref, True

    legacy_kind = raw.get("name")
    if isinstance(legacy_kind, str) and legacy_kind:
        attrs = raw.get("attributes")
        attrs = attrs if isinstance(attrs, Mapping) else {}
        name = _as_text(attrs.get("name")) or _as_text(attrs.get("member_name"))
        value = _as_text(attrs.get("value"))
        if legacy_kind == "Identifier" and not name:
            # legacy Identifiers store the referenced name in attributes.value
            name, value = value, None
        ref = _as_ref(attrs.get("referencedDeclaration"))
        return legacy_kind, name or None, value, ref, True

    return "Unknown", None, None, None, False


def _is_node(obj: Any) -> bool:
    return (
        isinstance(obj, Mapping)
        and "id" in obj
        and isinstance(obj["id"], int)
        and not isinstance(obj["id"], bool)
    )


def flatten_raw(root: Any) -> list[FlatNode]:
    """Collect every id-bearing mapping in document order with its nesting level.

    The level of a node is the number of id-bearing mappings enclosing it,
    which is exactly the hierarchy the level rules in ``infer_hierarchy``
    expect. Raises MalformedAst on cycles, duplicate ids, or an id-free
    document.
    """
    flat: list[FlatNode] = []
    seen_ids: set[int] = set()
    # (object, level, on_path_marker) — marker pops the object from the cycle guard
    stack: list[tuple[Any, int, bool]] = [(root, 0, False)]
    on_path: set[int] = set()
    while stack:
        obj, level, leaving = stack.pop()
        if leaving:
            on_path.discard(id(obj))
            continue
        if isinstance(obj, (Mapping, list)):
            if id(obj) in on_path:
                raise MalformedAst("cyclic reference in raw AST document")
            on_path.add(id(obj))
            stack.append((obj, level, True))
        if _is_node(obj):
            node_id = obj["id"]
            if node_id in seen_ids:
                raise MalformedAst(f"duplicate node id {node_id}")
            seen_ids.add(node_id)
            kind, name, value, ref, has_kind = _node_fields(obj)
            flat.append(
                FlatNode(
                    id=node_id,
                    kind=kind,
                    name=name,
                    value=value,
                    src_span=_parse_src(obj.get("src")),
                    referenced_declaration=ref,
                    level=level,
                    order=len(flat),
                    has_kind_field=has_kind,
                )
            )
            children_level = level + 1
            for child_value in reversed(list(obj.values())):
                stack.append((child_value, children_level, False))
        elif isinstance(obj, Mapping):
            for child_value in reversed(list(obj.values())):
                stack.append((child_value, level, False))
        elif isinstance(obj, list):
            for item in reversed(obj):
                stack.append((item, level, False))
    if not flat:
        raise MalformedAst("no id-bearing nodes in document")
    return flat


def infer_hierarchy(flat: Sequence[FlatNode], source_path: str = "") -> CanonicalAst:
    """Wire parent/child links from (level, document order) annotations.

    Nodes at the same level are siblings; each node's parent is the nearest
    preceding node at level - 1. Exactly one level-0 node may exist.
    """
    nodes: dict[int, CanonicalAstNode] = {}
    last_at_level: dict[int, int] = {}
    root_id: int | None = None
    for fn in sorted(flat, key=lambda n: n.order):
        node = CanonicalAstNode(
            id=fn.id,
            kind=fn.kind,
            name=fn.name,
            value=fn.value,
            src_span=fn.src_span,
            referenced_declaration=fn.referenced_declaration,
        )
        if fn.level == 0:
            if root_id is not None:
                raise MalformedAst("multiple root nodes in one document")
            root_id = fn.id
        else:
            parent_id = last_at_level.get(fn.level - 1)
            if parent_id is None:
                raise OrphanNode(
                    f"node {fn.id} at level {fn.level} has no candidate parent"
                )
            node.parent_id = parent_id
            nodes[parent_id].child_ids.append(fn.id)
        last_at_level[fn.level] = fn.id
        nodes[fn.id] = node
    if root_id is None:
        raise OrphanNode("no level-0 node to serve as root")
    return CanonicalAst(nodes=nodes, root_id=root_id, source_path=source_path)


def parse_ast_document(raw: RawAstDocument) -> CanonicalAst:
    """Canonicalize one raw AST document into a version-independent tree."""
    flat = flatten_raw(raw.root)
    missing = sum(1 for n in flat if not n.has_kind_field)
    if missing * 2 > len(flat):
        raise UnsupportedFormat(
            f"{missing}/{len(flat)} nodes carry neither a nodeType nor a "
            "legacy name field; input is probably not a compiler AST"
        )
    return infer_hierarchy(flat, raw.source_unit_path)


def extract_documents(payload: Any, default_path: str) -> list[RawAstDocument]:
    """Split a loaded JSON payload into per-source-unit raw documents.

    Accepts a bare AST node, a ``{"AST": ...}`` wrapper, or the compiler's
    combined/standard-JSON shape with a ``sources`` mapping.
    """
    version = str(payload.get("version", "unknown")) if isinstance(payload, Mapping) else "unknown"
    if isinstance(payload, Mapping) and not _is_node(payload):
        sources = payload.get("sources")
        if isinstance(sources, Mapping):
            docs = []
            for path, entry in sources.items():
                if not isinstance(entry, Mapping):
                    continue
                ast = entry.get("ast") or entry.get("AST")
                if ast is not None:
                    docs.append(RawAstDocument(str(path), version, ast))
            if docs:
                return docs
        wrapped = payload.get("AST") or payload.get("ast")
        if wrapped is not None:
            return [RawAstDocument(default_path, version, wrapped)]
    return [RawAstDocument(default_path, version, payload)]


def load_ast_file(path: str | Path) -> list[RawAstDocument]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise MalformedAst(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedAst(f"{path} is not valid JSON: {exc}") from exc
    return extract_documents(payload, str(path))


def find_compiler(version: str, compiler_paths: Mapping[str, str]) -> str:
    """Pick the executable configured for a compiler version.

    Keys of ``compiler_paths`` are version prefixes ("0.8", "0.8.19"); the
    longest prefix matching ``version`` wins. A ``"*"`` entry is the fallback.
    """
    best: str | None = None
    best_len = -1
    for key, exe in compiler_paths.items():
        if key == "*":
            if best_len < 0:
                best = exe
            continue
        if version.startswith(key) and len(key) > best_len:
            best, best_len = exe, len(key)
    if best is None:
        raise CompilerNotFound(f"no compiler configured for version {version!r}")
    if not Path(best).exists():
        raise CompilerNotFound(f"configured compiler {best!r} does not exist")
    return best


def invoke_external_compiler(
    source_path: str | Path,
    version: str,
    compiler_paths: Mapping[str, str],
) -> RawAstDocument:
    """Run the configured compiler on one source file and capture its AST.

    Pure subprocess-and-capture shim; the source file is never modified.
    """
    exe = find_compiler(version, compiler_paths)
    source_path = str(source_path)
    try:
        proc = subprocess.run(
            [exe, "--combined-json", "ast", source_path],
            capture_output=True,
            text=True,
        )
    except OSError as exc:
        raise CompilerNotFound(f"cannot execute {exe!r}: {exc}") from exc
    if proc.returncode != 0:
        raise CompilationFailed(
            f"compiler exited with status {proc.returncode} on {source_path}",
            stderr=proc.stderr,
        )
    try:
        payload = json.loads(proc.stdout)
    except json.JSONDecodeError as exc:
        raise CompilationFailed(
            f"compiler produced unparseable output for {source_path}",
            stderr=proc.stderr,
        ) from exc
    docs = extract_documents(payload, source_path)
    for doc in docs:
        if doc.source_unit_path == source_path:
            return RawAstDocument(source_path, version, doc.root)
    return RawAstDocument(source_path, version, docs[0].root)
