"""Command-line pipeline driver and report emission.

Subcommands cover the whole flow: ``synth`` generates a labeled corpus,
``ingest`` turns source/AST projects into optimized merged graphs,
``dataset`` embeds graph bundles into one container file, ``train`` fits
the classifier and snapshots the best epoch, ``eval`` scores a labeled
dataset, and ``predict`` runs raw projects through the checkpoint's own
vocabulary and label set to produce per-project defect reports.

Reports are deterministic: no timestamps, fixed float formatting, sorted
project order. Each report path also renders a figure next to the
delimited output (history curves, confusion matrix, confidence bars).
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import ast_ingest
from .dependency_extract import (
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
from .embed_normalize import (
    NormalizedDataset,
    assemble_dataset,
    build_vocabulary,
    init_embedding,
    load_dataset,
    serialize_dataset,
)
from .errors import InputError, InternalError
from .gcn_engine import (
    GcnConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .graph_opt import document_offsets, merge_subgraphs, optimize_graph
from .synth_corpus import generate_corpus
from .train_eval import (
    EpochRecord,
    EvalMetrics,
    SplitSpec,
    evaluate,
    forward_graph,
    history_table,
    split,
    train,
)


class NoInputs(InputError):
    pass


class BadConfig(InputError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    compiler_paths: dict[str, str] = field(default_factory=dict)
    label_file: str | None = None
    embedding_dim: int = 64
    hidden_dims: tuple[int, int, int] = (64, 64, 64)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    warmup_steps: int = 50
    train_fraction: float = 0.9
    stratified: bool = True
    threshold: float = 0.5
    seed: int = 0
    out_dir: str = "out"
    min_count: int = 1
    name_buckets: int = 0
    freeze_embedding: bool = False
    epochs: int = 50
    patience: int = 10
    strict: bool = False
    suspects: int = 5

    def __post_init__(self):
        if self.embedding_dim <= 0 or any(d <= 0 for d in self.hidden_dims):
            raise BadConfig("model dimensions must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise BadConfig("train fraction must lie in (0, 1)")
        if not 0.0 <= self.threshold <= 1.0:
            raise BadConfig("threshold must lie in [0, 1]")
        if self.suspects < 0 or self.min_count < 1:
            raise BadConfig("suspects must be >= 0 and min_count >= 1")


def apply_config_file(config: PipelineConfig, path: str) -> PipelineConfig:
    """Values in the file win over flag values."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise BadConfig(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise BadConfig(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise BadConfig(f"config {path} must be a JSON object")
    known = {f.name for f in fields(PipelineConfig)}
    updates = {}
    for key, value in payload.items():
        if key not in known:
            raise BadConfig(f"config {path}: unknown key {key!r}")
        if key == "hidden_dims":
            value = tuple(int(v) for v in value)
        if key == "compiler_paths":
            value = {str(k): str(v) for k, v in value.items()}
        updates[key] = value
    return replace(config, **updates)


def load_label_set(config: PipelineConfig) -> LabelSet:
    if config.label_file:
        return LabelSet.from_file(config.label_file)
    return LabelSet.default()


# ---------------------------------------------------------------------------
# ingest pipeline


@dataclass
class ProjectGraphs:
    project_id: str
    merged: AttributedGraph
    spans: dict[int, tuple[str, int, int]]  # merged node id -> (file, off, len)
    files: list[str]
    documents: int
    taxonomy: str = ""


def discover_projects(paths: list[str]) -> list[tuple[str, list[Path]]]:
    """Resolve input paths into (project_id, document files) pairs.

    A file is its own project; a directory with source/AST files directly
    inside is one project; a directory of such directories is a corpus and
    yields one project per child.
    """
    projects: list[tuple[str, list[Path]]] = []

    def doc_files(d: Path) -> list[Path]:
        return sorted(
            p for p in d.iterdir()
            if p.is_file() and p.suffix in (".json", ".sol")
        )

    for raw in paths:
        p = Path(raw)
        if p.is_file():
            projects.append((p.stem, [p]))
        elif p.is_dir():
            direct = doc_files(p)
            if direct:
                projects.append((p.name, direct))
            else:
                for child in sorted(x for x in p.iterdir() if x.is_dir()):
                    docs = doc_files(child)
                    if docs:
                        projects.append((child.name, docs))
        else:
            raise NoInputs(f"input path does not exist: {p}")
    if not projects:
        raise NoInputs("no input documents found")
    return projects


def _documents_for_file(
    path: Path, config: PipelineConfig
) -> list[ast_ingest.RawAstDocument]:
    if path.suffix == ".sol":
        if not config.compiler_paths:
            raise ast_ingest.CompilerNotFound(
                f"{path}: no compiler configured for Solidity sources"
            )
        return [
            ast_ingest.invoke_external_compiler(
                str(path), "*", config.compiler_paths
            )
        ]
    return ast_ingest.load_ast_file(str(path))


def build_project(
    project_id: str,
    files: list[Path],
    labels: LabelSet,
    config: PipelineConfig,
    label: int | None = None,
    taxonomy: str = "",
) -> ProjectGraphs:
    """Parse, tag, optimize, and merge all documents of one project."""
    trees: list[ast_ingest.CanonicalAst] = []
    actual_files: list[str] = []
    warnings: list[str] = []
    for path in files:
        try:
            docs = _documents_for_file(path, config)
            for doc in docs:
                trees.append(ast_ingest.parse_ast_document(doc))
                actual_files.append(str(path))
        except InputError as exc:
            if config.strict:
                raise InputError(f"{path}: {exc}") from exc
            warnings.append(f"skipped {path}: {exc}")
    if not trees:
        raise NoInputs(f"project {project_id}: no parseable documents")
    raw_graphs = [build_graph(t, tag_dependencies(t, labels)) for t in trees]
    interactions = identify_cross_contract_nodes(raw_graphs)
    optimized = [optimize_graph(g) for g in raw_graphs]
    offsets = document_offsets(optimized)
    merged = merge_subgraphs(optimized, interactions, label=label, _offsets=offsets)
    merged.warnings.extend(warnings)
    spans: dict[int, tuple[str, int, int]] = {}
    for tree, opt, off, actual in zip(trees, optimized, offsets, actual_files):
        for nid in opt.nodes:
            offset, length, _ = tree.nodes[nid].src_span
            spans[nid + off] = (actual, offset, length)
    return ProjectGraphs(
        project_id=project_id,
        merged=merged,
        spans=spans,
        files=sorted(set(actual_files)),
        documents=len(trees),
        taxonomy=taxonomy,
    )


def parse_labels_file(path: str) -> dict[str, tuple[int, str]]:
    """Rows of ``project_id<TAB>label[<TAB>taxonomy]``; # starts a comment."""
    table: dict[str, tuple[int, str]] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read labels {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise InputError(f"{path}:{lineno}: expected project<TAB>label")
        try:
            flag = int(parts[1])
        except ValueError:
            raise InputError(f"{path}:{lineno}: label must be 0 or 1") from None
        if flag not in (0, 1):
            raise InputError(f"{path}:{lineno}: label must be 0 or 1")
        table[parts[0]] = (flag, parts[2] if len(parts) > 2 else "")
    return table


# ---------------------------------------------------------------------------
# graph bundle files

_CATEGORY_VALUES = {c.value: c for c in DependencyCategory}
_EDGE_VALUES = {e.value: e for e in EdgeType}


def save_bundle(project: ProjectGraphs, path: Path) -> None:
    g = project.merged
    payload = {
        "project_id": project.project_id,
        "label": g.graph_label,
        "taxonomy": project.taxonomy,
        "root_id": g.root_id,
        "source_path": g.source_path,
        "documents": project.documents,
        "files": project.files,
        "nodes": [
            [
                a.n_id,
                a.n_name,
                a.n_type,
                a.n_value,
                a.category.value if a.category else None,
            ]
            for _, a in sorted(g.nodes.items())
        ],
        "edges": [[e.e_start, e.e_end, e.e_type.value] for e in g.edges],
        "warnings": list(g.warnings),
    }
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def load_bundle(path: Path) -> tuple[AttributedGraph, str, str]:
    """Returns (graph, project_id, taxonomy)."""
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read bundle {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"bundle {path} is not valid JSON: {exc}") from exc
    try:
        nodes = {
            int(n[0]): NodeAttr(
                int(n[0]),
                n[1],
                str(n[2]),
                n[3],
                _CATEGORY_VALUES[n[4]] if n[4] else None,
            )
            for n in payload["nodes"]
        }
        edges = [
            EdgeAttr(int(s), int(e), _EDGE_VALUES[t])
            for s, e, t in payload["edges"]
        ]
        graph = AttributedGraph(
            nodes=nodes,
            edges=edges,
            root_id=payload["root_id"],
            graph_label=payload["label"],
            source_path=payload.get("source_path", ""),
            warnings=list(payload.get("warnings", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bundle {path} is malformed: {exc}") from exc
    graph._reindex()
    return graph, str(payload.get("project_id", path.stem)), str(
        payload.get("taxonomy", "")
    )


def _dump_edges(graph: AttributedGraph, path: Path) -> None:
    lines = [f"{e.e_start} {e.e_end} {e.e_type.value}" for e in graph.edges]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# reports


@dataclass
class DefectReport:
    project_id: str
    verdict: int
    confidence: float
    contract_paths: list[str]
    suspect_spans: list[tuple[str, int, int]]
    taxonomy_note: str = ""
    warnings: int = 0


def _clamp_span(
    span: tuple[str, int, int], sizes: dict[str, int]
) -> tuple[str, int, int]:
    path, offset, length = span
    if path not in sizes:
        p = Path(path)
        sizes[path] = p.stat().st_size if p.is_file() else 0
    limit = sizes[path]
    offset = max(0, min(offset, limit))
    return path, offset, max(0, min(length, limit - offset))


def render_reports_tsv(reports: list[DefectReport]) -> str:
    lines = [
        "project_id\tverdict\tconfidence\ttaxonomy\tdocuments"
        "\tsuspect_spans\twarnings"
    ]
    for r in reports:
        spans = ";".join(f"{p}:{o}+{n}" for p, o, n in r.suspect_spans)
        docs = ";".join(r.contract_paths)
        lines.append(
            f"{r.project_id}\t{r.verdict}\t{r.confidence:.6f}"
            f"\t{r.taxonomy_note}\t{docs}\t{spans}\t{r.warnings}"
        )
    return "\n".join(lines) + "\n"


def render_report_text(r: DefectReport) -> str:
    lines = [
        f"project: {r.project_id}",
        f"verdict: {'defect' if r.verdict else 'clean'}",
        f"confidence: {r.confidence:.6f}",
        f"taxonomy: {r.taxonomy_note or '-'}",
        "documents:",
    ]
    lines.extend(f"  {p}" for p in r.contract_paths)
    lines.append("suspect spans:")
    if r.suspect_spans:
        lines.extend(
            f"  {p} offset {o} length {n}" for p, o, n in r.suspect_spans
        )
    else:
        lines.append("  none")
    lines.append(f"warnings: {r.warnings}")
    return "\n".join(lines) + "\n"


def render_metrics_tsv(metrics: EvalMetrics, threshold: float) -> str:
    rows = [
        ("threshold", f"{threshold:.6f}"),
        ("tp", str(metrics.tp)),
        ("fp", str(metrics.fp)),
        ("tn", str(metrics.tn)),
        ("fn", str(metrics.fn)),
        ("acc", f"{metrics.acc:.6f}"),
        ("recall", f"{metrics.recall:.6f}"),
        ("precision", f"{metrics.precision:.6f}"),
        ("f1", f"{metrics.f1:.6f}"),
        ("fpr", f"{metrics.fpr:.6f}"),
        ("flags", ",".join(metrics.flags) or "-"),
    ]
    return "\n".join(f"{k}\t{v}" for k, v in rows) + "\n"


# ---------------------------------------------------------------------------
# figures

_PNG_META = {"Software": None}  # keep output bytes stable across hosts


def save_history_figure(history: list[EpochRecord], path: Path) -> None:
    epochs = [r.epoch for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [r.train_loss for r in history], label="train loss")
    ax1.plot(epochs, [r.val_loss for r in history], label="val loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r.metrics.f1 for r in history], label="val F1")
    ax2.plot(epochs, [r.metrics.acc for r in history], label="val acc")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(-0.05, 1.05)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_confusion_figure(metrics: EvalMetrics, path: Path) -> None:
    grid = np.array([[metrics.tn, metrics.fp], [metrics.fn, metrics.tp]])
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.imshow(grid, cmap="Blues")
    for (i, j), v in np.ndenumerate(grid):
        ax.text(j, i, str(v), ha="center", va="center")
    ax.set_xticks([0, 1], ["pred clean", "pred defect"])
    ax.set_yticks([0, 1], ["clean", "defect"])
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def save_confidence_figure(reports: list[DefectReport], path: Path) -> None:
    names = [r.project_id for r in reports]
    conf = [r.confidence for r in reports]
    colors = ["firebrick" if r.verdict else "seagreen" for r in reports]
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.3 * len(reports) + 1)))
    ax.barh(range(len(reports)), conf, color=colors)
    ax.set_yticks(range(len(reports)), names)
    ax.set_xlim(0, 1)
    ax.set_xlabel("defect confidence")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace, config: PipelineConfig) -> int:
    out = Path(args.out or config.out_dir)
    manifest = generate_corpus(
        out, num_graphs=args.graphs, seed=config.seed, pos_fraction=args.pos_fraction
    )
    positives = sum(r.label for r in manifest)
    print(
        f"generated {len(manifest)} projects ({positives} defective) in {out}"
    )
    print(f"labels: {out / 'labels.tsv'}")
    return 0


def cmd_ingest(args: argparse.Namespace, config: PipelineConfig) -> int:
    labels = load_label_set(config)
    label_table = parse_labels_file(args.labels) if args.labels else {}
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = ["project_id\tdocuments\tnodes\tedges\twarnings"]
    bundles = 0
    for project_id, files in discover_projects(args.paths):
        flag, taxonomy = label_table.get(project_id, (None, ""))
        try:
            project = build_project(
                project_id, files, labels, config, label=flag, taxonomy=taxonomy
            )
        except NoInputs as exc:
            if config.strict:
                raise
            print(f"warning: {exc}", file=sys.stderr)
            continue
        save_bundle(project, out / f"{project_id}.graph.json")
        if args.dump_edges:
            _dump_edges(project.merged, out / f"{project_id}.edges.txt")
        g = project.merged
        for w in g.warnings:
            print(f"warning: {project_id}: {w}", file=sys.stderr)
        summary.append(
            f"{project_id}\t{project.documents}\t{len(g.nodes)}"
            f"\t{len(g.edges)}\t{len(g.warnings)}"
        )
        bundles += 1
    if bundles == 0:
        raise NoInputs("no project produced a graph")
    (out / "ingest_summary.tsv").write_text(
        "\n".join(summary) + "\n", encoding="utf-8"
    )
    print(f"ingested {bundles} projects into {out}")
    return 0


def _bundle_paths(paths: list[str]) -> list[Path]:
    found: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found.extend(sorted(p.glob("*.graph.json")))
        elif p.is_file():
            found.append(p)
        else:
            raise NoInputs(f"input path does not exist: {p}")
    if not found:
        raise NoInputs("no graph bundles found")
    return found


def cmd_dataset(args: argparse.Namespace, config: PipelineConfig) -> int:
    graphs = []
    taxonomy = []
    names = []
    for path in _bundle_paths(args.paths):
        graph, project_id, tax = load_bundle(path)
        graphs.append(graph)
        taxonomy.append(tax)
        names.append(project_id)
    vocab = build_vocabulary(
        graphs, min_count=config.min_count, name_buckets=config.name_buckets
    )
    m = init_embedding(config.embedding_dim, vocab.size, config.seed)
    dataset = assemble_dataset(
        graphs,
        vocab,
        m,
        name_buckets=config.name_buckets,
        taxonomy=taxonomy,
        names=names,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    serialize_dataset(dataset, out)
    labeled = int((dataset.graph_labels >= 0).sum())
    print(
        f"dataset {out}: {dataset.num_graphs} graphs ({labeled} labeled), "
        f"{dataset.num_nodes} nodes, {len(dataset.edge_list)} edges, "
        f"vocab {vocab.size}, dim {config.embedding_dim}"
    )
    return 0


def cmd_train(args: argparse.Namespace, config: PipelineConfig) -> int:
    dataset = load_dataset(args.dataset)
    if dataset.vocab is None:
        raise InputError(f"{args.dataset}: dataset carries no vocabulary")
    labels = load_label_set(config)
    label_map = {k: c.value for k, c in labels.entries.items()}
    model = init_model(
        GcnConfig(
            embedding_dim=config.embedding_dim,
            hidden_dims=config.hidden_dims,
            seed=config.seed,
            name_buckets=config.name_buckets,
            freeze_embedding=config.freeze_embedding,
        ),
        dataset.vocab,
        label_map,
    )
    spec = SplitSpec(
        train_fraction=config.train_fraction,
        seed=config.seed,
        stratified=config.stratified,
    )
    train_set, val_set = split(dataset, spec)
    best, history = train(
        model,
        train_set,
        val_set,
        epochs=config.epochs,
        patience=config.patience,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
        warmup_steps=config.warmup_steps,
        threshold=config.threshold,
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(best, out / "model.sgmd")
    (out / "history.tsv").write_text(history_table(history), encoding="utf-8")
    if history:
        save_history_figure(history, out / "history.png")
        # ties go to the later epoch, matching the snapshot rule in train()
        best_epoch = max(history, key=lambda r: (r.metrics.f1, r.epoch))
        print(
            f"trained {len(history)} epochs on {train_set.num_graphs}/"
            f"{val_set.num_graphs} graphs; best epoch {best_epoch.epoch} "
            f"val_f1 {best_epoch.metrics.f1:.6f}"
        )
    else:
        print("epochs=0: saved the initial model unchanged")
    print(f"checkpoint: {out / 'model.sgmd'}")
    print(f"history: {out / 'history.tsv'}")
    return 0


def cmd_eval(args: argparse.Namespace, config: PipelineConfig) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    metrics = evaluate(model, dataset, threshold=config.threshold)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_metrics.tsv").write_text(
        render_metrics_tsv(metrics, config.threshold), encoding="utf-8"
    )
    save_confusion_figure(metrics, out / "eval_confusion.png")
    print(
        f"acc {metrics.acc:.6f} recall {metrics.recall:.6f} "
        f"precision {metrics.precision:.6f} f1 {metrics.f1:.6f} "
        f"fpr {metrics.fpr:.6f}"
    )
    print(f"metrics: {out / 'eval_metrics.tsv'}")
    return 0


def cmd_predict(args: argparse.Namespace, config: PipelineConfig) -> int:
    model = load_checkpoint(args.checkpoint)
    try:
        entries = {
            k: DependencyCategory(v) for k, v in model.label_map.items()
        }
    except ValueError as exc:
        raise InputError(f"checkpoint label set is invalid: {exc}") from exc
    labels = LabelSet(entries)
    label_table = parse_labels_file(args.labels) if args.labels else {}
    reports: list[DefectReport] = []
    sizes: dict[str, int] = {}
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for project_id, files in discover_projects(args.paths):
        _, taxonomy = label_table.get(project_id, (None, ""))
        project = build_project(project_id, files, labels, config, taxonomy=taxonomy)
        dataset = assemble_dataset(
            [project.merged],
            model.vocab,
            model.embedding,
            name_buckets=model.config.name_buckets,
            taxonomy=[project.taxonomy],
            names=[project_id],
        )
        fwd, _ = forward_graph(model, dataset, 0)
        confidence = float(fwd.probs[0, 1])
        norms = np.sqrt((fwd.hiddens[-1] ** 2).sum(axis=1))
        order = np.argsort(-norms, kind="stable")[: config.suspects]
        node_order = sorted(project.merged.nodes)
        spans = [
            _clamp_span(project.spans[node_order[int(i)]], sizes) for i in order
        ]
        reports.append(
            DefectReport(
                project_id=project_id,
                verdict=1 if confidence >= config.threshold else 0,
                confidence=confidence,
                contract_paths=project.files,
                suspect_spans=spans,
                taxonomy_note=taxonomy,
                warnings=len(project.merged.warnings),
            )
        )
    reports.sort(key=lambda r: r.project_id)
    (out / "reports.tsv").write_text(render_reports_tsv(reports), encoding="utf-8")
    for r in reports:
        (out / f"report_{r.project_id}.txt").write_text(
            render_report_text(r), encoding="utf-8"
        )
    save_confidence_figure(reports, out / "confidence.png")
    flagged = sum(r.verdict for r in reports)
    print(f"predicted {len(reports)} projects, {flagged} flagged defective")
    print(f"reports: {out / 'reports.tsv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; its values override flags")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--seed", type=int, help="seed for every random draw")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derailscan",
        description=(
            "Detect state-derailment defects in smart contracts by parsing "
            "compiler ASTs into dependency graphs and classifying them with "
            "a graph convolutional network."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic corpus")
    _add_common(p)
    p.add_argument("--out", help="corpus directory (defaults to --out-dir)")
    p.add_argument("--graphs", type=int, default=200)
    p.add_argument("--pos-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse projects into merged graph bundles")
    _add_common(p)
    p.add_argument("paths", nargs="+", help="project files or directories")
    p.add_argument("--labels", help="labels table (project, label, taxonomy)")
    p.add_argument("--label-file", dest="label_file", help="label-set override TSV")
    p.add_argument("--strict", action="store_true", help="fail on any bad document")
    p.add_argument("--dump-edges", action="store_true", help="write edge-list dumps")
    p.add_argument("--compilers", help="JSON mapping version prefix -> solc path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("dataset", help="embed graph bundles into a dataset file")
    _add_common(p)
    p.add_argument("paths", nargs="+", help="bundle files or directories")
    p.add_argument("--out", required=True, help="dataset output path")
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--name-buckets", dest="name_buckets", type=int)
    p.add_argument("--dim", dest="embedding_dim", type=int)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the classifier on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--dim", dest="embedding_dim", type=int)
    p.add_argument("--hidden-dims", dest="hidden_dims", help="e.g. 64,64,64")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--freeze-embedding", dest="freeze_embedding", action="store_true")
    p.add_argument("--threshold", type=float)
    p.add_argument("--warmup", dest="warmup_steps", type=int)
    p.add_argument("--name-buckets", dest="name_buckets", type=int)
    p.add_argument("--label-file", dest="label_file", help="label-set override TSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a labeled dataset with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="report defects for raw projects")
    _add_common(p)
    p.add_argument("paths", nargs="+", help="project files or directories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--suspects", type=int, help="suspect spans per report")
    p.add_argument("--labels", help="labels table for taxonomy notes")
    p.add_argument("--compilers", help="JSON mapping version prefix -> solc path")
    p.set_defaults(func=cmd_predict)
    return parser


_FLAG_FIELDS = (
    "out_dir",
    "seed",
    "min_count",
    "name_buckets",
    "embedding_dim",
    "epochs",
    "patience",
    "learning_rate",
    "train_fraction",
    "threshold",
    "warmup_steps",
    "label_file",
    "suspects",
)


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig()
    updates = {}
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if getattr(args, "hidden_dims", None):
        try:
            dims = tuple(int(v) for v in str(args.hidden_dims).split(","))
        except ValueError:
            raise BadConfig(f"bad --hidden-dims value: {args.hidden_dims!r}") from None
        updates["hidden_dims"] = dims
    if getattr(args, "no_stratify", False):
        updates["stratified"] = False
    if getattr(args, "freeze_embedding", False):
        updates["freeze_embedding"] = True
    if getattr(args, "strict", False):
        updates["strict"] = True
    if getattr(args, "compilers", None):
        try:
            paths = json.loads(args.compilers)
        except ValueError as exc:
            raise BadConfig(f"--compilers is not valid JSON: {exc}") from exc
        if not isinstance(paths, dict):
            raise BadConfig("--compilers must be a JSON object")
        updates["compiler_paths"] = {str(k): str(v) for k, v in paths.items()}
    config = replace(config, **updates)
    if getattr(args, "config", None):
        config = apply_config_file(config, args.config)
    return config


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        return args.func(args, config)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
