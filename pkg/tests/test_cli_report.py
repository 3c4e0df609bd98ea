"""Configuration handling, CLI pipeline, exit codes, and report rendering."""

from __future__ import annotations

import json
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from derailscan.cli_report import (
    BadConfig,
    NoInputs,
    PipelineConfig,
    _clamp_span,
    apply_config_file,
    build_parser,
    build_project,
    config_from_args,
    discover_projects,
    load_bundle,
    main,
    parse_labels_file,
    render_metrics_tsv,
    render_report_text,
    render_reports_tsv,
    save_bundle,
    DefectReport,
)
from derailscan.dependency_extract import LabelSet
from derailscan.embed_normalize import load_dataset
from derailscan.errors import InternalError
from derailscan.gcn_engine import load_checkpoint
from derailscan.train_eval import metrics_from_counts

TRIVIAL_AST = {
    "id": 0,
    "nodeType": "SourceUnit",
    "nodes": [
        {"id": 1, "nodeType": "ContractDefinition", "name": "A", "nodes": []}
    ],
}


def parse_args(argv):
    return build_parser().parse_args(argv)


# ---------------------------------------------------------------------------
# configuration


def test_config_defaults():
    c = PipelineConfig()
    assert c.embedding_dim == 64
    assert c.hidden_dims == (64, 64, 64)
    assert c.threshold == 0.5
    assert c.train_fraction == 0.9
    assert c.stratified and not c.strict
    assert c.suspects == 5


def test_config_validation():
    with pytest.raises(BadConfig):
        PipelineConfig(embedding_dim=0)
    with pytest.raises(BadConfig):
        PipelineConfig(hidden_dims=(8, -8, 8))
    with pytest.raises(BadConfig):
        PipelineConfig(train_fraction=1.0)
    with pytest.raises(BadConfig):
        PipelineConfig(threshold=1.5)
    with pytest.raises(BadConfig):
        PipelineConfig(suspects=-1)
    with pytest.raises(BadConfig):
        PipelineConfig(min_count=0)


def test_flags_populate_config():
    args = parse_args(
        [
            "train", "--dataset", "d.sgds", "--epochs", "3", "--lr", "0.01",
            "--hidden-dims", "8,16,8", "--dim", "24", "--no-stratify",
            "--name-buckets", "4", "--seed", "9", "--out-dir", "runs",
            "--freeze-embedding", "--threshold", "0.3", "--warmup", "7",
        ]
    )
    c = config_from_args(args)
    assert c.epochs == 3
    assert c.learning_rate == 0.01
    assert c.hidden_dims == (8, 16, 8)
    assert c.embedding_dim == 24
    assert not c.stratified
    assert c.name_buckets == 4
    assert c.seed == 9
    assert c.out_dir == "runs"
    assert c.freeze_embedding
    assert c.threshold == 0.3
    assert c.warmup_steps == 7


def test_bad_hidden_dims_flag():
    args = parse_args(["train", "--dataset", "d", "--hidden-dims", "8,x,8"])
    with pytest.raises(BadConfig, match="hidden-dims"):
        config_from_args(args)


def test_compilers_flag():
    args = parse_args(
        ["ingest", "p", "--compilers", '{"0.8": "/opt/solc8", "*": "/opt/solc"}']
    )
    c = config_from_args(args)
    assert c.compiler_paths == {"0.8": "/opt/solc8", "*": "/opt/solc"}
    for bad in ("not json", '["a"]'):
        args = parse_args(["ingest", "p", "--compilers", bad])
        with pytest.raises(BadConfig):
            config_from_args(args)


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(
        json.dumps({"learning_rate": 0.5, "hidden_dims": [4, 4, 4]}),
        encoding="utf-8",
    )
    args = parse_args(
        ["train", "--dataset", "d", "--lr", "0.01", "--config", str(cfg),
         "--epochs", "2"]
    )
    c = config_from_args(args)
    assert c.learning_rate == 0.5  # file wins
    assert c.hidden_dims == (4, 4, 4)
    assert c.epochs == 2  # flag survives for keys the file does not set


def test_config_file_errors(tmp_path):
    base = PipelineConfig()
    missing = tmp_path / "absent.json"
    with pytest.raises(BadConfig, match="cannot read"):
        apply_config_file(base, str(missing))
    bad = tmp_path / "bad.json"
    bad.write_text("{nope", encoding="utf-8")
    with pytest.raises(BadConfig, match="not valid JSON"):
        apply_config_file(base, str(bad))
    arr = tmp_path / "arr.json"
    arr.write_text("[1]", encoding="utf-8")
    with pytest.raises(BadConfig, match="JSON object"):
        apply_config_file(base, str(arr))
    unknown = tmp_path / "unknown.json"
    unknown.write_text('{"emedding_dim": 8}', encoding="utf-8")
    with pytest.raises(BadConfig, match="unknown key"):
        apply_config_file(base, str(unknown))


# ---------------------------------------------------------------------------
# project discovery


def test_discover_project_shapes(tmp_path):
    single = tmp_path / "one.json"
    single.write_text("{}", encoding="utf-8")
    assert discover_projects([str(single)]) == [("one", [single])]

    proj = tmp_path / "proj"
    proj.mkdir()
    (proj / "b.json").write_text("{}", encoding="utf-8")
    (proj / "a.json").write_text("{}", encoding="utf-8")
    (proj / "notes.txt").write_text("skip me", encoding="utf-8")
    assert discover_projects([str(proj)]) == [
        ("proj", [proj / "a.json", proj / "b.json"])
    ]

    corpus = tmp_path / "corpus"
    for name in ("p2", "p1"):
        d = corpus / name
        d.mkdir(parents=True)
        (d / "c.json").write_text("{}", encoding="utf-8")
    found = discover_projects([str(corpus)])
    assert [pid for pid, _ in found] == ["p1", "p2"]


def test_discover_rejects_missing_and_empty(tmp_path):
    with pytest.raises(NoInputs, match="does not exist"):
        discover_projects([str(tmp_path / "ghost")])
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(NoInputs, match="no input documents"):
        discover_projects([str(empty)])


# ---------------------------------------------------------------------------
# labels files


def test_parse_labels_file(tmp_path):
    path = tmp_path / "labels.tsv"
    path.write_text(
        "# project\tlabel\ttaxonomy\nproj1\t1\taccess-control\nproj2\t0\n",
        encoding="utf-8",
    )
    table = parse_labels_file(str(path))
    assert table == {"proj1": (1, "access-control"), "proj2": (0, "")}


def test_parse_labels_file_errors(tmp_path):
    path = tmp_path / "labels.tsv"
    for text, match in [
        ("proj1\n", "expected project"),
        ("proj1\ttwo\n", "label must be 0 or 1"),
        ("proj1\t2\n", "label must be 0 or 1"),
    ]:
        path.write_text(text, encoding="utf-8")
        with pytest.raises(Exception, match=match):
            parse_labels_file(str(path))
    with pytest.raises(Exception, match="cannot read"):
        parse_labels_file(str(tmp_path / "absent.tsv"))


# ---------------------------------------------------------------------------
# the full pipeline, shared across the tests below


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    graphs = root / "graphs"
    run = root / "run"
    dataset = root / "corpus.sgds"
    assert main(["synth", "--out", str(corpus), "--graphs", "200", "--seed", "3"]) == 0
    assert (
        main(
            [
                "ingest", str(corpus),
                "--labels", str(corpus / "labels.tsv"),
                "--out-dir", str(graphs),
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "dataset", str(graphs),
                "--out", str(dataset),
                "--dim", "16", "--seed", "3",
            ]
        )
        == 0
    )
    assert (
        main(
            [
                "train", "--dataset", str(dataset),
                "--epochs", "25", "--patience", "25",
                "--dim", "16", "--hidden-dims", "16,16,16",
                "--lr", "0.005", "--seed", "3",
                "--out-dir", str(run),
            ]
        )
        == 0
    )
    labels = {}
    for line in (corpus / "labels.tsv").read_text().splitlines():
        if line.startswith("#"):
            continue
        pid, flag, taxonomy = line.split("\t")
        labels[pid] = int(flag)
    return SimpleNamespace(
        root=root,
        corpus=corpus,
        graphs=graphs,
        run=run,
        dataset=dataset,
        checkpoint=run / "model.sgmd",
        labels=labels,
    )


def test_synth_layout(pipeline):
    rows = (pipeline.corpus / "labels.tsv").read_text().splitlines()
    assert rows[0].startswith("#")
    assert len(rows) == 201
    assert (pipeline.corpus / "proj0000" / "contracts.ast.json").is_file()
    flags = [int(r.split("\t")[1]) for r in rows[1:]]
    assert sum(flags) == 100


def test_synth_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--out", str(a), "--graphs", "6", "--seed", "11"]) == 0
    assert main(["synth", "--out", str(b), "--graphs", "6", "--seed", "11"]) == 0
    assert (a / "labels.tsv").read_bytes() == (b / "labels.tsv").read_bytes()
    for i in range(6):
        doc = f"proj{i:04d}/contracts.ast.json"
        assert (a / doc).read_bytes() == (b / doc).read_bytes()


def test_ingest_bundles(pipeline):
    bundles = sorted(pipeline.graphs.glob("*.graph.json"))
    assert len(bundles) == 200
    summary = (pipeline.graphs / "ingest_summary.tsv").read_text().splitlines()
    assert summary[0].split("\t") == [
        "project_id", "documents", "nodes", "edges", "warnings",
    ]
    assert len(summary) == 201


def test_bundle_contents(pipeline):
    graph, project_id, taxonomy = load_bundle(
        pipeline.graphs / "proj0000.graph.json"
    )
    assert project_id == "proj0000"
    assert graph.graph_label in (0, 1)
    assert graph.root_id in graph.nodes
    assert all(e.e_start in graph.nodes and e.e_end in graph.nodes for e in graph.edges)
    if graph.graph_label == 1:
        assert taxonomy != ""


def test_dataset_contents(pipeline):
    d = load_dataset(pipeline.dataset)
    assert d.num_graphs == 200
    assert d.vocab is not None
    assert set(d.graph_labels.tolist()) == {0, 1}
    assert d.features.shape[1] == 16
    assert d.graph_names == sorted(d.graph_names)


def test_train_outputs(pipeline):
    assert pipeline.checkpoint.is_file()
    model = load_checkpoint(pipeline.checkpoint)
    assert model.config.embedding_dim == 16
    assert model.config.hidden_dims == (16, 16, 16)
    history = (pipeline.run / "history.tsv").read_text().splitlines()
    assert history[0].startswith("epoch\t")
    assert len(history) >= 2
    assert (pipeline.run / "history.png").stat().st_size > 0


def test_eval_outputs(pipeline, capsys):
    out = pipeline.root / "evalout"
    code = main(
        [
            "eval", "--checkpoint", str(pipeline.checkpoint),
            "--dataset", str(pipeline.dataset),
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    table = dict(
        line.split("\t")
        for line in (out / "eval_metrics.tsv").read_text().splitlines()
    )
    assert table["threshold"] == "0.500000"
    assert int(table["tp"]) + int(table["fp"]) + int(table["tn"]) + int(
        table["fn"]
    ) == 200
    # the pinned seed fits the whole training corpus
    assert table["acc"] == "1.000000"
    assert table["fpr"] == "0.000000"
    assert (out / "eval_confusion.png").stat().st_size > 0
    assert "acc 1.000000" in capsys.readouterr().out


def test_predict_matches_training_labels(pipeline):
    out = pipeline.root / "predictout"
    code = main(
        [
            "predict", str(pipeline.corpus),
            "--checkpoint", str(pipeline.checkpoint),
            "--labels", str(pipeline.corpus / "labels.tsv"),
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    rows = (out / "reports.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:3] == ["project_id", "verdict", "confidence"]
    assert len(rows) == 201
    ids = [r.split("\t")[0] for r in rows[1:]]
    assert ids == sorted(ids)
    for row in rows[1:]:
        pid, verdict, confidence = row.split("\t")[:3]
        assert int(verdict) == pipeline.labels[pid]
        assert 0.0 <= float(confidence) <= 1.0
    assert (out / "report_proj0000.txt").is_file()
    assert (out / "confidence.png").stat().st_size > 0


def test_predict_suspect_spans_lie_inside_files(pipeline):
    out = pipeline.root / "predictout"
    if not (out / "reports.tsv").is_file():
        test_predict_matches_training_labels(pipeline)
    for row in (out / "reports.tsv").read_text().splitlines()[1:]:
        spans = row.split("\t")[5]
        if not spans:
            continue
        for span in spans.split(";"):
            path, tail = span.rsplit(":", 1)
            offset, length = (int(v) for v in tail.split("+"))
            import os

            size = os.path.getsize(path)
            assert 0 <= offset <= size
            assert 0 <= offset + length <= size


def test_trivial_contract_predicts_clean(pipeline, tmp_path):
    doc = tmp_path / "trivial.json"
    doc.write_text(json.dumps(TRIVIAL_AST), encoding="utf-8")
    out = tmp_path / "out"
    code = main(
        [
            "predict", str(doc),
            "--checkpoint", str(pipeline.checkpoint),
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    rows = (out / "reports.tsv").read_text().splitlines()
    pid, verdict, confidence = rows[1].split("\t")[:3]
    assert pid == "trivial"
    assert verdict == "0"
    assert 0.0 <= float(confidence) < 0.5
    assert "verdict: clean" in (out / "report_trivial.txt").read_text()


def test_repeated_runs_are_byte_identical(pipeline, tmp_path):
    outs = []
    for name in ("r1", "r2"):
        run = tmp_path / name
        assert (
            main(
                [
                    "train", "--dataset", str(pipeline.dataset),
                    "--epochs", "4", "--dim", "16",
                    "--hidden-dims", "16,16,16",
                    "--lr", "0.005", "--seed", "3",
                    "--out-dir", str(run),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "predict", str(pipeline.corpus / "proj0000"),
                    "--checkpoint", str(run / "model.sgmd"),
                    "--out-dir", str(run / "pred"),
                ]
            )
            == 0
        )
        outs.append(run)
    r1, r2 = outs
    for rel in ("model.sgmd", "history.tsv", "history.png"):
        assert (r1 / rel).read_bytes() == (r2 / rel).read_bytes()
    for rel in ("reports.tsv", "report_proj0000.txt", "confidence.png"):
        assert (r1 / "pred" / rel).read_bytes() == (r2 / "pred" / rel).read_bytes()


# ---------------------------------------------------------------------------
# failure paths


def test_ingest_empty_directory_fails(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["ingest", str(empty), "--out-dir", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err


def test_ingest_missing_path_fails(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "ghost")]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_broken_document_skipped_unless_strict(tmp_path, capsys):
    proj = tmp_path / "proj"
    proj.mkdir()
    (proj / "good.json").write_text(json.dumps(TRIVIAL_AST), encoding="utf-8")
    (proj / "broken.json").write_text("{nope", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["ingest", str(proj), "--out-dir", str(out)]) == 0
    err = capsys.readouterr().err
    assert "skipped" in err and "broken.json" in err
    assert (out / "proj.graph.json").is_file()

    assert main(["ingest", str(proj), "--strict", "--out-dir", str(out)]) == 1
    assert "broken.json" in capsys.readouterr().err


def test_all_documents_broken_fails(tmp_path, capsys):
    proj = tmp_path / "proj"
    proj.mkdir()
    (proj / "broken.json").write_text("{nope", encoding="utf-8")
    assert main(["ingest", str(proj), "--out-dir", str(tmp_path / "o")]) == 1
    assert "no project produced a graph" in capsys.readouterr().err


def test_solidity_source_without_compiler_fails(tmp_path, capsys):
    proj = tmp_path / "proj"
    proj.mkdir()
    (proj / "a.sol").write_text("contract A {}", encoding="utf-8")
    assert main(
        ["ingest", str(proj), "--strict", "--out-dir", str(tmp_path / "o")]
    ) == 1
    assert "no compiler configured" in capsys.readouterr().err


def test_wrong_schema_checkpoint_is_an_input_error(pipeline, tmp_path, capsys):
    code = main(
        [
            "eval", "--checkpoint", str(pipeline.dataset),
            "--dataset", str(pipeline.dataset),
            "--out-dir", str(tmp_path / "o"),
        ]
    )
    assert code == 1
    assert "not a checkpoint" in capsys.readouterr().err


def test_internal_error_exits_two(monkeypatch, capsys):
    import derailscan.cli_report as cli

    def exploding_parser():
        import argparse

        p = argparse.ArgumentParser()
        sub = p.add_subparsers(dest="command", required=True)
        q = sub.add_parser("boom")

        def boom(args, config):
            raise InternalError("invariant breached")

        q.set_defaults(func=boom)
        return p

    monkeypatch.setattr(cli, "build_parser", exploding_parser)
    assert cli.main(["boom"]) == 2
    assert "internal error" in capsys.readouterr().err


def test_unexpected_exception_exits_two(monkeypatch, capsys):
    import derailscan.cli_report as cli

    def exploding_parser():
        import argparse

        p = argparse.ArgumentParser()
        sub = p.add_subparsers(dest="command", required=True)
        q = sub.add_parser("boom")

        def boom(args, config):
            raise RuntimeError("surprise")

        q.set_defaults(func=boom)
        return p

    monkeypatch.setattr(cli, "build_parser", exploding_parser)
    assert cli.main(["boom"]) == 2
    assert "surprise" in capsys.readouterr().err


def test_bad_flag_value_exits_one(tmp_path, capsys):
    code = main(
        ["train", "--dataset", "d.sgds", "--hidden-dims", "a,b,c"]
    )
    assert code == 1
    assert "hidden-dims" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# bundles and reports as units


def test_bundle_round_trip(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "c"), "--graphs", "2",
                 "--seed", "5"]) == 0
    files = sorted((tmp_path / "c" / "proj0000").glob("*.json"))
    project = build_project(
        "proj0000", files, LabelSet.default(), PipelineConfig(), label=1,
        taxonomy="access-control",
    )
    path = tmp_path / "roundtrip.graph.json"
    save_bundle(project, path)
    graph, pid, taxonomy = load_bundle(path)
    assert pid == "proj0000" and taxonomy == "access-control"
    assert graph.nodes == project.merged.nodes
    assert graph.edges == project.merged.edges
    assert graph.root_id == project.merged.root_id
    assert graph.graph_label == 1
    assert graph.adjacency == project.merged.adjacency


def test_load_bundle_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.graph.json"
    bad.write_text("{nope", encoding="utf-8")
    with pytest.raises(Exception, match="not valid JSON"):
        load_bundle(bad)
    bad.write_text(json.dumps({"nodes": "what"}), encoding="utf-8")
    with pytest.raises(Exception, match="malformed"):
        load_bundle(bad)


def test_clamp_span(tmp_path):
    f = tmp_path / "src.sol"
    f.write_bytes(b"x" * 100)
    sizes: dict[str, int] = {}
    assert _clamp_span((str(f), 50, 30), sizes) == (str(f), 50, 30)
    assert _clamp_span((str(f), 50, 100), sizes) == (str(f), 50, 50)
    assert _clamp_span((str(f), 150, 10), sizes) == (str(f), 100, 0)
    assert _clamp_span((str(f), -5, 10), sizes) == (str(f), 0, 10)
    ghost = str(tmp_path / "ghost.sol")
    assert _clamp_span((ghost, 4, 2), sizes) == (ghost, 0, 0)
    assert sizes[str(f)] == 100


def test_report_rendering():
    report = DefectReport(
        project_id="p1",
        verdict=1,
        confidence=0.75,
        contract_paths=["a.sol", "b.sol"],
        suspect_spans=[("a.sol", 10, 4)],
        taxonomy_note="access-control",
        warnings=2,
    )
    tsv = render_reports_tsv([report])
    lines = tsv.splitlines()
    assert lines[1].split("\t") == [
        "p1", "1", "0.750000", "access-control", "a.sol;b.sol",
        "a.sol:10+4", "2",
    ]
    text = render_report_text(report)
    assert "verdict: defect" in text
    assert "a.sol offset 10 length 4" in text
    clean = replace(report, verdict=0, suspect_spans=[])
    assert "verdict: clean" in render_report_text(clean)
    assert "  none" in render_report_text(clean)


def test_metrics_rendering():
    m = metrics_from_counts(2, 1, 6, 1)
    table = dict(
        line.split("\t") for line in render_metrics_tsv(m, 0.5).splitlines()
    )
    assert table["tp"] == "2" and table["tn"] == "6"
    assert table["acc"] == "0.800000"
    assert table["fpr"] == "0.142857"
    assert table["flags"] == "-"
    flagged = metrics_from_counts(0, 0, 0, 0)
    table = dict(
        line.split("\t")
        for line in render_metrics_tsv(flagged, 0.5).splitlines()
    )
    assert "recall_zero_division" in table["flags"]
