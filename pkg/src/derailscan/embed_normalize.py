"""Vocabulary, embedding lookup, feature normalization, dataset container.

Every graph node is reduced to a token (its kind, optionally suffixed with
a bucketed name hash). Tokens index columns of a seeded embedding matrix;
the selected columns become node feature rows, scaled to unit length. A
corpus of embedded graphs is stored in a single little-endian container
file (magic ``SGDS``) holding node ids, tokens, a global edge list,
features, per-graph boundaries, and per-graph labels.

Stored features are the time-zero snapshot: training re-derives them from
the model's own embedding matrix so the matrix can be trained jointly.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .dependency_extract import AttributedGraph, NodeAttr
from .errors import InputError

UNK_TOKEN = "<UNK>"
DATASET_MAGIC = b"SGDS"
DATASET_VERSION = 1


class DimensionMismatch(InputError):
    pass


class NonFiniteInput(InputError):
    pass


class IoFailure(InputError):
    pass


class SchemaVersionMismatch(InputError):
    pass


def node_token(attr: NodeAttr, name_buckets: int = 0) -> str:
    """Token text for one node: kind, plus a coarse name bucket if enabled."""
    if name_buckets > 0 and attr.n_name:
        bucket = zlib.crc32(attr.n_name.encode("utf-8")) % name_buckets
        return f"{attr.n_type}#{bucket}"
    return attr.n_type


@dataclass(frozen=True)
class Vocabulary:
    word2idx: dict[str, int]
    unk_index: int

    @property
    def size(self) -> int:
        return len(self.word2idx)

    def index_of(self, token: str) -> int:
        return self.word2idx.get(token, self.unk_index)

    def to_json(self) -> dict:
        return {"word2idx": dict(self.word2idx), "unk_index": self.unk_index}

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        word2idx = {str(k): int(v) for k, v in payload["word2idx"].items()}
        return cls(word2idx=word2idx, unk_index=int(payload["unk_index"]))


def build_vocabulary(
    graphs: Sequence[AttributedGraph], min_count: int = 1, name_buckets: int = 0
) -> Vocabulary:
    """Count tokens over all graphs and index them densely.

    Kept tokens (count >= min_count) get indices by descending count, ties
    broken lexicographically; the unknown token is appended last. The
    result depends only on the token multiset, not on graph order.
    """
    counts: dict[str, int] = {}
    for g in graphs:
        for attr in g.nodes.values():
            tok = node_token(attr, name_buckets)
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    word2idx = {t: i for i, t in enumerate(kept)}
    word2idx[UNK_TOKEN] = len(kept)
    return Vocabulary(word2idx=word2idx, unk_index=len(kept))


def init_embedding(dim: int, vocab_size: int, seed: int) -> np.ndarray:
    """Seeded (dim x vocab_size) matrix, entries uniform on [-0.1, 0.1]."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.1, 0.1, size=(dim, vocab_size))


def embed_nodes(
    graph: AttributedGraph,
    vocab: Vocabulary,
    m: np.ndarray,
    name_buckets: int = 0,
) -> np.ndarray:
    """Feature matrix: row per node (ids ascending) = looked-up column of m."""
    if m.shape[1] != vocab.size:
        raise DimensionMismatch(
            f"embedding has {m.shape[1]} columns for a vocabulary of {vocab.size}"
        )
    idx = [
        vocab.index_of(node_token(graph.nodes[nid], name_buckets))
        for nid in sorted(graph.nodes)
    ]
    if not idx:
        return np.zeros((0, m.shape[0]))
    return m[:, idx].T.copy()


def normalize_features(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; all-zero rows pass through."""
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise NonFiniteInput("feature matrix contains non-finite entries")
    if x.size == 0:
        return x.copy()
    norms = np.sqrt((x * x).sum(axis=1))
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe[:, None]


@dataclass
class NormalizedDataset:
    """One embedded corpus: flat node arrays plus per-graph index ranges."""

    node_ids: np.ndarray  # (N,) original merged-graph node ids
    node_labels: list[str]  # (N,) token text per node
    edge_list: np.ndarray  # (E, 2) global row indices into features
    features: np.ndarray  # (N, dim) normalized rows
    graph_boundaries: np.ndarray  # (G, 2) [start, end) row ranges
    graph_labels: np.ndarray  # (G,) 0/1, or -1 when unlabeled
    graph_taxonomy: list[str] = field(default_factory=list)
    graph_names: list[str] = field(default_factory=list)
    vocab: Vocabulary | None = None
    name_buckets: int = 0

    @property
    def num_graphs(self) -> int:
        return len(self.graph_boundaries)

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    def graph_rows(self, g: int) -> tuple[int, int]:
        start, end = self.graph_boundaries[g]
        return int(start), int(end)

    def graph_edges(self, g: int) -> np.ndarray:
        """Edges of graph g as local (0-based) index pairs."""
        start, end = self.graph_rows(g)
        if len(self.edge_list) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        mask = (self.edge_list[:, 0] >= start) & (self.edge_list[:, 0] < end)
        return self.edge_list[mask] - start


def assemble_dataset(
    graphs: Sequence[AttributedGraph],
    vocab: Vocabulary,
    m: np.ndarray,
    name_buckets: int = 0,
    taxonomy: Sequence[str] | None = None,
    names: Sequence[str] | None = None,
) -> NormalizedDataset:
    """Embed each graph, concatenate, normalize, record graph ranges."""
    node_ids: list[int] = []
    node_labels: list[str] = []
    edges: list[tuple[int, int]] = []
    feature_blocks: list[np.ndarray] = []
    boundaries: list[tuple[int, int]] = []
    labels: list[int] = []
    offset = 0
    for g in graphs:
        order = sorted(g.nodes)
        local = {nid: i for i, nid in enumerate(order)}
        node_ids.extend(order)
        node_labels.extend(node_token(g.nodes[nid], name_buckets) for nid in order)
        seen: set[tuple[int, int]] = set()
        for e in g.edges:
            pair = (local[e.e_start] + offset, local[e.e_end] + offset)
            if pair not in seen:
                seen.add(pair)
                edges.append(pair)
        feature_blocks.append(embed_nodes(g, vocab, m, name_buckets))
        boundaries.append((offset, offset + len(order)))
        labels.append(-1 if g.graph_label is None else int(g.graph_label))
        offset += len(order)
    dim = m.shape[0]
    features = (
        np.concatenate(feature_blocks, axis=0)
        if feature_blocks
        else np.zeros((0, dim))
    )
    return NormalizedDataset(
        node_ids=np.asarray(node_ids, dtype=np.int64),
        node_labels=node_labels,
        edge_list=(
            np.asarray(edges, dtype=np.int64)
            if edges
            else np.zeros((0, 2), dtype=np.int64)
        ),
        features=normalize_features(features),
        graph_boundaries=(
            np.asarray(boundaries, dtype=np.int64)
            if boundaries
            else np.zeros((0, 2), dtype=np.int64)
        ),
        graph_labels=np.asarray(labels, dtype=np.int64),
        graph_taxonomy=list(taxonomy) if taxonomy is not None else [""] * len(graphs),
        graph_names=(
            list(names) if names is not None else [g.source_path for g in graphs]
        ),
        vocab=vocab,
        name_buckets=name_buckets,
    )


def subset_dataset(d: NormalizedDataset, graph_indices: Sequence[int]) -> NormalizedDataset:
    """New dataset containing only the chosen graphs, rows reindexed."""
    node_ids: list[np.ndarray] = []
    node_labels: list[str] = []
    edges: list[np.ndarray] = []
    features: list[np.ndarray] = []
    boundaries: list[tuple[int, int]] = []
    offset = 0
    for g in graph_indices:
        start, end = d.graph_rows(g)
        n = end - start
        node_ids.append(d.node_ids[start:end])
        node_labels.extend(d.node_labels[start:end])
        features.append(d.features[start:end])
        local = d.graph_edges(g)
        if len(local):
            edges.append(local + offset)
        boundaries.append((offset, offset + n))
        offset += n
    dim = d.features.shape[1] if d.features.ndim == 2 else 0
    return NormalizedDataset(
        node_ids=(
            np.concatenate(node_ids) if node_ids else np.zeros(0, dtype=np.int64)
        ),
        node_labels=node_labels,
        edge_list=(
            np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
        ),
        features=(
            np.concatenate(features) if features else np.zeros((0, dim))
        ),
        graph_boundaries=(
            np.asarray(boundaries, dtype=np.int64)
            if boundaries
            else np.zeros((0, 2), dtype=np.int64)
        ),
        graph_labels=d.graph_labels[list(graph_indices)].copy()
        if len(graph_indices)
        else np.zeros(0, dtype=np.int64),
        graph_taxonomy=[d.graph_taxonomy[g] for g in graph_indices],
        graph_names=[d.graph_names[g] for g in graph_indices],
        vocab=d.vocab,
        name_buckets=d.name_buckets,
    )


def _write_bytes(fh: BinaryIO, payload: bytes) -> None:
    fh.write(struct.pack("<I", len(payload)))
    fh.write(payload)


def _write_strings(fh: BinaryIO, items: Sequence[str]) -> None:
    for s in items:
        _write_bytes(fh, s.encode("utf-8"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise IoFailure(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_bytes(fh: BinaryIO) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n)


def _read_strings(fh: BinaryIO, count: int) -> list[str]:
    return [_read_bytes(fh).decode("utf-8") for _ in range(count)]


def serialize_dataset(d: NormalizedDataset, path: str | Path) -> None:
    """Write the container file. Little-endian throughout."""
    header = {
        "num_nodes": int(d.num_nodes),
        "num_edges": int(len(d.edge_list)),
        "num_graphs": int(d.num_graphs),
        "embedding_dim": int(d.features.shape[1]) if d.features.ndim == 2 else 0,
        "name_buckets": int(d.name_buckets),
        "vocab": d.vocab.to_json() if d.vocab is not None else None,
    }
    try:
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<I", DATASET_VERSION))
            _write_bytes(fh, json.dumps(header, sort_keys=True).encode("utf-8"))
            fh.write(np.ascontiguousarray(d.node_ids, dtype="<i8").tobytes())
            _write_strings(fh, d.node_labels)
            fh.write(np.ascontiguousarray(d.edge_list, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(d.features, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(d.graph_boundaries, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(d.graph_labels, dtype="<i8").tobytes())
            _write_strings(fh, d.graph_taxonomy)
            _write_strings(fh, d.graph_names)
    except OSError as exc:
        raise IoFailure(f"cannot write dataset {path}: {exc}") from exc


def load_dataset(path: str | Path) -> NormalizedDataset:
    try:
        with open(path, "rb") as fh:
            magic = _read_exact(fh, 4)
            if magic != DATASET_MAGIC:
                raise SchemaVersionMismatch(f"{path}: not a dataset file")
            (version,) = struct.unpack("<I", _read_exact(fh, 4))
            if version != DATASET_VERSION:
                raise SchemaVersionMismatch(
                    f"{path}: dataset schema v{version}, expected v{DATASET_VERSION}"
                )
            try:
                header = json.loads(_read_bytes(fh).decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                raise SchemaVersionMismatch(f"{path}: bad header: {exc}") from exc
            n = int(header["num_nodes"])
            e = int(header["num_edges"])
            g = int(header["num_graphs"])
            dim = int(header["embedding_dim"])
            node_ids = np.frombuffer(_read_exact(fh, 8 * n), dtype="<i8").copy()
            node_labels = _read_strings(fh, n)
            edge_list = (
                np.frombuffer(_read_exact(fh, 16 * e), dtype="<i8")
                .reshape(e, 2)
                .copy()
            )
            features = (
                np.frombuffer(_read_exact(fh, 8 * n * dim), dtype="<f8")
                .reshape(n, dim)
                .copy()
            )
            boundaries = (
                np.frombuffer(_read_exact(fh, 16 * g), dtype="<i8")
                .reshape(g, 2)
                .copy()
            )
            labels = np.frombuffer(_read_exact(fh, 8 * g), dtype="<i8").copy()
            taxonomy = _read_strings(fh, g)
            names = _read_strings(fh, g)
    except OSError as exc:
        raise IoFailure(f"cannot read dataset {path}: {exc}") from exc
    vocab = (
        Vocabulary.from_json(header["vocab"]) if header.get("vocab") else None
    )
    return NormalizedDataset(
        node_ids=node_ids,
        node_labels=node_labels,
        edge_list=edge_list,
        features=features,
        graph_boundaries=boundaries,
        graph_labels=labels,
        graph_taxonomy=taxonomy,
        graph_names=names,
        vocab=vocab,
        name_buckets=int(header.get("name_buckets", 0)),
    )
