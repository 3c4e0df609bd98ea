"""Dense three-layer graph convolutional network, written out by hand.

Propagation uses the symmetric-normalized adjacency with self-loops:
S = D^(-1/2) (A + I) D^(-1/2), H(l+1) = ReLU(S H(l) W(l)) for three layers.
Per-graph readout mean-pools final node states and applies a linear map
plus softmax; the loss is binary cross-entropy on the class-1 probability.
Gradients are exact reverse-mode derivations of that composition, including
the row normalization and the embedding-column lookup, so the whole model
(weights and embedding) trains jointly under an adaptive-moment optimizer.

Dense matrices only: optimized graphs are small, so an n x n operator is
cheap. Sparse storage is a deliberate non-feature.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .embed_normalize import (
    DimensionMismatch,
    IoFailure,
    SchemaVersionMismatch,
    Vocabulary,
)
from .errors import InputError, InternalError

CHECKPOINT_MAGIC = b"SGMD"
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-12


class IndexOutOfRange(InputError):
    pass


class NonFiniteActivation(InternalError):
    pass


class LengthMismatch(InternalError):
    pass


class ShapeMismatch(InternalError):
    pass


@dataclass(frozen=True)
class GcnConfig:
    embedding_dim: int = 64
    hidden_dims: tuple[int, int, int] = (64, 64, 64)
    num_classes: int = 2
    seed: int = 0
    name_buckets: int = 0
    freeze_embedding: bool = False

    def __post_init__(self):
        if self.embedding_dim <= 0 or any(d <= 0 for d in self.hidden_dims):
            raise ShapeMismatch("model dimensions must be positive")
        if len(self.hidden_dims) != 3:
            raise ShapeMismatch("exactly three hidden layers are supported")
        if self.num_classes != 2:
            raise ShapeMismatch("binary classification only")

    def to_json(self) -> dict:
        return {
            "embedding_dim": self.embedding_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
            "seed": self.seed,
            "name_buckets": self.name_buckets,
            "freeze_embedding": self.freeze_embedding,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "GcnConfig":
        return cls(
            embedding_dim=int(payload["embedding_dim"]),
            hidden_dims=tuple(int(d) for d in payload["hidden_dims"]),
            num_classes=int(payload["num_classes"]),
            seed=int(payload["seed"]),
            name_buckets=int(payload.get("name_buckets", 0)),
            freeze_embedding=bool(payload.get("freeze_embedding", False)),
        )


@dataclass
class GcnModel:
    weights: list[np.ndarray]  # W0 (dim x d1), W1 (d1 x d2), W2 (d2 x d3)
    readout: np.ndarray  # WL (d3 x 2)
    embedding: np.ndarray  # M (dim x vocab)
    config: GcnConfig
    vocab: Vocabulary
    label_map: dict[str, str]

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, self.readout, self.embedding]

    def clone(self) -> "GcnModel":
        return GcnModel(
            weights=[w.copy() for w in self.weights],
            readout=self.readout.copy(),
            embedding=self.embedding.copy(),
            config=self.config,
            vocab=self.vocab,
            label_map=dict(self.label_map),
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(
    config: GcnConfig, vocab: Vocabulary, label_map: dict[str, str]
) -> GcnModel:
    """Seeded init. Draw order is fixed: embedding, then W0..W2, then WL."""
    rng = np.random.default_rng(config.seed)
    embedding = rng.uniform(
        -0.1, 0.1, size=(config.embedding_dim, vocab.size)
    )
    dims = [config.embedding_dim, *config.hidden_dims]
    weights = [_glorot(rng, dims[i], dims[i + 1]) for i in range(3)]
    readout = _glorot(rng, dims[3], config.num_classes)
    return GcnModel(
        weights=weights,
        readout=readout,
        embedding=embedding,
        config=config,
        vocab=vocab,
        label_map=label_map,
    )


def normalized_adjacency(edge_list: np.ndarray, n: int) -> np.ndarray:
    """S = D^(-1/2) (A + I) D^(-1/2) for the symmetrized edge set.

    Built as an elementwise product with a symmetric outer factor, so the
    result is bitwise symmetric, not merely symmetric up to rounding.
    """
    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise IndexOutOfRange(f"edge endpoint outside [0, {n})")
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    a_hat = a + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return np.outer(d_inv_sqrt, d_inv_sqrt) * a_hat


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardResult:
    hiddens: list[np.ndarray]  # [H0, H1, H2, H3]
    pooled: np.ndarray  # (G, d3)
    logits: np.ndarray  # (G, 2)
    probs: np.ndarray  # (G, 2)


def forward(
    model: GcnModel,
    features: np.ndarray,
    norm_adj: np.ndarray,
    boundaries: Sequence[tuple[int, int]] | None = None,
) -> ForwardResult:
    n = features.shape[0]
    if norm_adj.shape != (n, n):
        raise DimensionMismatch(
            f"adjacency is {norm_adj.shape}, features have {n} rows"
        )
    if features.shape[1] != model.weights[0].shape[0]:
        raise DimensionMismatch(
            f"feature width {features.shape[1]} does not match "
            f"first layer input {model.weights[0].shape[0]}"
        )
    if boundaries is None:
        boundaries = [(0, n)]
    hiddens = [features]
    h = features
    for w in model.weights:
        h = np.maximum(norm_adj @ h @ w, 0.0)
        hiddens.append(h)
    pooled = np.zeros((len(boundaries), model.readout.shape[0]))
    for g, (start, end) in enumerate(boundaries):
        if end > start:
            pooled[g] = h[start:end].mean(axis=0)
    logits = pooled @ model.readout
    if not (np.isfinite(h).all() and np.isfinite(logits).all()):
        raise NonFiniteActivation("non-finite values in forward pass")
    return ForwardResult(
        hiddens=hiddens, pooled=pooled, logits=logits, probs=softmax_rows(logits)
    )


def loss(probs: np.ndarray, labels: Sequence[int]) -> float:
    y = np.asarray(labels, dtype=float)
    if len(y) != probs.shape[0]:
        raise LengthMismatch(f"{probs.shape[0]} predictions, {len(y)} labels")
    p1 = np.clip(probs[:, 1], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p1) + (1.0 - y) * np.log(1.0 - p1)))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    readout: np.ndarray
    embedding: np.ndarray | None

    def as_list(self) -> list[np.ndarray | None]:
        return [*self.weights, self.readout, self.embedding]


def backward(
    model: GcnModel,
    norm_adj: np.ndarray,
    boundaries: Sequence[tuple[int, int]],
    labels: Sequence[int],
    fwd: ForwardResult,
    token_indices: Sequence[int] | None = None,
) -> Gradients:
    """Exact gradients of loss(forward(...)) for every parameter.

    ``token_indices`` gives the embedding column each node row was looked
    up from; pass None to skip the embedding gradient (frozen embedding).
    When given, the input features are assumed to be the row-normalized
    lookup of those columns, and the gradient flows through both steps.
    """
    y = np.asarray(labels, dtype=float)
    num_graphs = fwd.probs.shape[0]
    if len(y) != num_graphs:
        raise LengthMismatch(f"{num_graphs} predictions, {len(y)} labels")

    p1 = fwd.probs[:, 1]
    p1c = np.clip(p1, PROB_CLAMP, 1.0 - PROB_CLAMP)
    dp1 = -(y / p1c - (1.0 - y) / (1.0 - p1c)) / num_graphs
    dp1 = np.where((p1 > PROB_CLAMP) & (p1 < 1.0 - PROB_CLAMP), dp1, 0.0)
    # two-class softmax jacobian: dp1/dz1 = p1 p0, dp1/dz0 = -p1 p0
    pp = fwd.probs[:, 0] * fwd.probs[:, 1]
    dlogits = np.stack([-dp1 * pp, dp1 * pp], axis=1)

    g_readout = fwd.pooled.T @ dlogits
    dpooled = dlogits @ model.readout.T

    h_final = fwd.hiddens[-1]
    dh = np.zeros_like(h_final)
    for g, (start, end) in enumerate(boundaries):
        if end > start:
            dh[start:end] = dpooled[g] / (end - start)

    g_weights: list[np.ndarray] = [np.empty(0)] * 3
    for layer in (2, 1, 0):
        h_in = fwd.hiddens[layer]
        h_out = fwd.hiddens[layer + 1]
        dz = dh * (h_out > 0.0)
        sh = norm_adj @ h_in
        g_weights[layer] = sh.T @ dz
        dh = norm_adj.T @ (dz @ model.weights[layer].T)

    g_embedding = None
    if token_indices is not None:
        idx = np.asarray(token_indices, dtype=np.int64)
        raw = model.embedding[:, idx].T  # (n, dim), pre-normalization rows
        norms = np.sqrt((raw * raw).sum(axis=1))
        d_raw = np.zeros_like(raw)
        nz = norms > 0.0
        r = norms[nz][:, None]
        x, dx = raw[nz], dh[nz]
        d_raw[nz] = dx / r - x * ((x * dx).sum(axis=1, keepdims=True) / r**3)
        g_embedding_t = np.zeros((model.embedding.shape[1], model.embedding.shape[0]))
        np.add.at(g_embedding_t, idx, d_raw)
        g_embedding = g_embedding_t.T
    return Gradients(weights=g_weights, readout=g_readout, embedding=g_embedding)


@dataclass
class TrainState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    warmup_steps: int = 50
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def init_state(
    params: Sequence[np.ndarray],
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    warmup_steps: int = 50,
) -> TrainState:
    return TrainState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        warmup_steps=warmup_steps,
        step=0,
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
    )


def optimizer_step(
    state: TrainState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
) -> None:
    """Adaptive-moment update with bias correction, in place on params.

    The effective rate ramps linearly over the first ``warmup_steps``
    steps, then stays at ``learning_rate``. A None gradient leaves that
    parameter and its moments untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeMismatch("parameter, gradient, and moment counts differ")
    state.step += 1
    t = state.step
    lr = state.learning_rate * min(1.0, t / max(1, state.warmup_steps))
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.shape}")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def _write_matrix(fh: BinaryIO, name: str, m: np.ndarray) -> None:
    blob = name.encode("utf-8")
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
    fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise IoFailure(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_matrix(fh: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    rows, cols = struct.unpack("<II", _read_exact(fh, 8))
    data = np.frombuffer(_read_exact(fh, 8 * rows * cols), dtype="<f8")
    return name, data.reshape(rows, cols).copy()


def save_checkpoint(model: GcnModel, path: str | Path) -> None:
    meta = {
        "config": model.config.to_json(),
        "vocab": model.vocab.to_json(),
        "label_set": dict(model.label_map),
    }
    matrices = [
        ("W0", model.weights[0]),
        ("W1", model.weights[1]),
        ("W2", model.weights[2]),
        ("WL", model.readout),
        ("M", model.embedding),
    ]
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            blob = json.dumps(meta, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(matrices)))
            for name, m in matrices:
                _write_matrix(fh, name, m)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> GcnModel:
    try:
        with open(path, "rb") as fh:
            if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
                raise SchemaVersionMismatch(f"{path}: not a checkpoint file")
            (version,) = struct.unpack("<I", _read_exact(fh, 4))
            if version != CHECKPOINT_VERSION:
                raise SchemaVersionMismatch(
                    f"{path}: checkpoint schema v{version}, "
                    f"expected v{CHECKPOINT_VERSION}"
                )
            (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
            try:
                meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
            except (ValueError, UnicodeDecodeError) as exc:
                raise SchemaVersionMismatch(f"{path}: bad metadata: {exc}") from exc
            (count,) = struct.unpack("<I", _read_exact(fh, 4))
            matrices = dict(_read_matrix(fh) for _ in range(count))
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    missing = {"W0", "W1", "W2", "WL", "M"} - set(matrices)
    if missing:
        raise SchemaVersionMismatch(f"{path}: missing matrices {sorted(missing)}")
    return GcnModel(
        weights=[matrices["W0"], matrices["W1"], matrices["W2"]],
        readout=matrices["WL"],
        embedding=matrices["M"],
        config=GcnConfig.from_json(meta["config"]),
        vocab=Vocabulary.from_json(meta["vocab"]),
        label_map={str(k): str(v) for k, v in meta["label_set"].items()},
    )
