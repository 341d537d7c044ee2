"""End-to-end command-line flows over real files."""

import json

import numpy as np
import pytest

from synthetic_task import generate_corpus, make_oracle
from protosurrogate.cli import main
from protosurrogate.data_io import attribution_path, bundle_path, read_bundle, write_bundle


def write_corpus(root, count=24, seed=31, id_prefix="doc"):
    documents, bundles, attributions, oracle = generate_corpus(
        count, seed=seed, id_prefix=id_prefix
    )
    dataset = root / f"{id_prefix}.jsonl"
    with open(dataset, "w", encoding="utf-8") as handle:
        for doc in documents:
            handle.write(json.dumps({"id": doc.id, "text": doc.text,
                                     "label": doc.label}) + "\n")
    emb_dir = root / "emb"
    attr_dir = root / "attr"
    emb_dir.mkdir(exist_ok=True)
    attr_dir.mkdir(exist_ok=True)
    for doc in documents:
        write_bundle(bundles[doc.id], bundle_path(emb_dir, doc.id))
        write_bundle(attributions[doc.id], attribution_path(attr_dir, doc.id))
    return documents, dataset, emb_dir, attr_dir, oracle


def write_train_config(root, dataset, emb_dir, attr_dir, **overrides):
    config = {
        "dataset": str(dataset),
        "embeddings": str(emb_dir),
        "attributions": str(attr_dir),
        "model_out": str(root / "model.psm"),
        "report_out": str(root / "train_report.json"),
        "epochs": 2,
        "batch_size": 8,
        "num_prototypes": 4,
        "seed": 11,
    }
    config.update(overrides)
    path = root / "config.json"
    path.write_text(json.dumps(config))
    return path, config


def provider_config_path(root, oracle):
    path = root / "provider.json"
    path.write_text(json.dumps({"type": "synthetic", **oracle.to_config()}))
    return path


@pytest.fixture
def trained(tmp_path):
    documents, dataset, emb_dir, attr_dir, oracle = write_corpus(tmp_path)
    config_path, config = write_train_config(tmp_path, dataset, emb_dir, attr_dir)
    assert main(["train", "--config", str(config_path)]) == 0
    return {
        "root": tmp_path,
        "documents": documents,
        "dataset": dataset,
        "emb": emb_dir,
        "attr": attr_dir,
        "oracle": oracle,
        "model": config["model_out"],
    }


class TestTrainCommand:
    def test_valid_config_trains_and_writes_model(self, tmp_path):
        _, dataset, emb_dir, attr_dir, _ = write_corpus(tmp_path)
        config_path, config = write_train_config(tmp_path, dataset, emb_dir, attr_dir)
        assert main(["train", "--config", str(config_path)]) == 0
        assert (tmp_path / "model.psm").is_file()
        assert (tmp_path / "train_report.json").is_file()

    def test_rerun_is_byte_idempotent(self, tmp_path):
        _, dataset, emb_dir, attr_dir, _ = write_corpus(tmp_path)
        config_path, config = write_train_config(tmp_path, dataset, emb_dir, attr_dir)
        assert main(["train", "--config", str(config_path)]) == 0
        model_first = (tmp_path / "model.psm").read_bytes()
        report_first = (tmp_path / "train_report.json").read_bytes()
        assert main(["train", "--config", str(config_path)]) == 0
        assert (tmp_path / "model.psm").read_bytes() == model_first
        assert (tmp_path / "train_report.json").read_bytes() == report_first

    def test_missing_embeddings_key_exits_2(self, tmp_path, capsys):
        _, dataset, emb_dir, attr_dir, _ = write_corpus(tmp_path)
        config_path, config = write_train_config(tmp_path, dataset, emb_dir, attr_dir)
        raw = json.loads(config_path.read_text())
        del raw["embeddings"]
        config_path.write_text(json.dumps(raw))
        assert main(["train", "--config", str(config_path)]) == 2
        assert "embeddings" in capsys.readouterr().err

    def test_negative_loss_weight_exits_2(self, tmp_path):
        _, dataset, emb_dir, attr_dir, _ = write_corpus(tmp_path)
        config_path, _ = write_train_config(tmp_path, dataset, emb_dir, attr_dir,
                                            lambda_proto=-1.0)
        assert main(["train", "--config", str(config_path)]) == 2

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        _, dataset, emb_dir, attr_dir, _ = write_corpus(tmp_path)
        config_path, _ = write_train_config(tmp_path, dataset, emb_dir, attr_dir,
                                            learning_rte=0.01)
        assert main(["train", "--config", str(config_path)]) == 2
        assert "learning_rte" in capsys.readouterr().err

    def test_predictions_missing_id_exits_4(self, tmp_path, capsys):
        documents, dataset, emb_dir, attr_dir, _ = write_corpus(tmp_path)
        predictions = tmp_path / "preds.jsonl"
        with open(predictions, "w") as handle:
            for doc in documents[:-1]:  # drop the last id
                handle.write(json.dumps({"id": doc.id, "label": doc.label}) + "\n")
        config_path, _ = write_train_config(tmp_path, dataset, emb_dir, attr_dir,
                                            predictions=str(predictions))
        assert main(["train", "--config", str(config_path)]) == 4
        assert documents[-1].id in capsys.readouterr().err

    def test_checkpoints_written_when_requested(self, tmp_path):
        _, dataset, emb_dir, attr_dir, _ = write_corpus(tmp_path)
        config_path, _ = write_train_config(
            tmp_path, dataset, emb_dir, attr_dir,
            checkpoint_dir=str(tmp_path / "checkpoints"),
        )
        assert main(["train", "--config", str(config_path)]) == 0
        files = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
        assert files == ["epoch-000.psm", "epoch-001.psm"]


class TestExplainCommand:
    def test_writes_report_per_document_plus_index(self, trained):
        out = trained["root"] / "explanations"
        code = main([
            "explain", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--attributions", str(trained["attr"]),
            "--out", str(out),
        ])
        assert code == 0
        index = json.loads((out / "index.json").read_text())
        assert len(index["reports"]) == len(trained["documents"])
        for entry in index["reports"]:
            assert (out / entry["file"]).is_file()

    def test_rerun_overwrites_with_identical_bytes(self, trained):
        out = trained["root"] / "idem"
        args = [
            "explain", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--out", str(out),
        ]
        assert main(args) == 0
        snapshot = {p.name: p.read_bytes() for p in out.iterdir()}
        assert main(args) == 0
        assert {p.name: p.read_bytes() for p in out.iterdir()} == snapshot

    def test_html_reports_are_self_contained(self, trained):
        out = trained["root"] / "html"
        assert main([
            "explain", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--out", str(out), "--format", "html",
        ]) == 0
        sample = next(out.glob("doc-*.html")).read_text()
        assert sample.startswith("<!DOCTYPE html>")
        assert "<script src=" not in sample and "href=" not in sample

    def test_top_k_zero_is_usage_error(self, trained):
        assert main([
            "explain", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--out", str(trained["root"] / "x"), "--top-k", "0",
        ]) == 2

    def test_missing_bundles_exit_4_listing_ids(self, trained, tmp_path, capsys):
        empty = tmp_path / "empty-emb"
        empty.mkdir()
        assert main([
            "explain", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(empty),
            "--out", str(tmp_path / "x"),
        ]) == 4
        assert trained["documents"][0].id in capsys.readouterr().err


class TestEvalCommand:
    def test_synthetic_end_to_end_populates_all_seven_fields(self, trained):
        provider = provider_config_path(trained["root"], trained["oracle"])
        prefix = trained["root"] / "report"
        code = main([
            "eval", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--attributions", str(trained["attr"]),
            "--provider", str(provider),
            "--out-prefix", str(prefix),
        ])
        assert code == 0
        payload = json.loads(prefix.with_suffix(".json").read_text())
        for field in ("accuracy", "comprehensiveness", "sufficiency", "dff", "dfs",
                      "deletion", "insertion"):
            assert payload[field] is not None
        csv_text = prefix.with_suffix(".csv").read_text()
        assert csv_text.splitlines()[-1].startswith("summary")

    def test_rerun_overwrites_with_identical_bytes(self, trained):
        provider = provider_config_path(trained["root"], trained["oracle"])
        prefix = trained["root"] / "idem-report"
        args = [
            "eval", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--provider", str(provider),
            "--out-prefix", str(prefix),
        ]
        assert main(args) == 0
        json_first = prefix.with_suffix(".json").read_bytes()
        csv_first = prefix.with_suffix(".csv").read_bytes()
        assert main(args) == 0
        assert prefix.with_suffix(".json").read_bytes() == json_first
        assert prefix.with_suffix(".csv").read_bytes() == csv_first

    def test_importance_file_path(self, trained):
        provider = provider_config_path(trained["root"], trained["oracle"])
        # Baseline explainer scores arrive as occlusion-style .psa files.
        attr_out = trained["root"] / "occl"
        assert main([
            "attribute", "--dataset", str(trained["dataset"]),
            "--provider", str(provider), "--out", str(attr_out),
        ]) == 0
        prefix = trained["root"] / "file-report"
        code = main([
            "eval", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--provider", str(provider),
            "--importance", "file", "--importance-file", str(attr_out),
            "--out-prefix", str(prefix),
        ])
        assert code == 0
        payload = json.loads(prefix.with_suffix(".json").read_text())
        assert payload["comprehensiveness"] is not None

    def test_missing_prediction_id_exits_4(self, trained, capsys):
        provider = provider_config_path(trained["root"], trained["oracle"])
        predictions = trained["root"] / "short-preds.jsonl"
        with open(predictions, "w") as handle:
            handle.write(json.dumps({"id": trained["documents"][0].id, "label": 0}) + "\n")
        assert main([
            "eval", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--predictions", str(predictions),
            "--provider", str(provider),
            "--out-prefix", str(trained["root"] / "r"),
        ]) == 4
        assert trained["documents"][1].id in capsys.readouterr().err

    def test_paper_literal_variant_flag(self, trained):
        provider = provider_config_path(trained["root"], trained["oracle"])
        prefix = trained["root"] / "literal"
        assert main([
            "eval", "--model", trained["model"],
            "--dataset", str(trained["dataset"]),
            "--embeddings", str(trained["emb"]),
            "--provider", str(provider),
            "--variant", "paper-literal",
            "--out-prefix", str(prefix),
        ]) == 0
        payload = json.loads(prefix.with_suffix(".json").read_text())
        assert payload["variant"] == "paper-literal"


class TestAttributeCommand:
    def test_writes_loadable_attribution_files(self, tmp_path):
        documents, dataset, _, _, oracle = write_corpus(tmp_path, count=2, seed=41)
        provider = provider_config_path(tmp_path, oracle)
        out = tmp_path / "occl"
        assert main([
            "attribute", "--dataset", str(dataset),
            "--provider", str(provider), "--out", str(out),
        ]) == 0
        for doc in documents:
            bundle = read_bundle(attribution_path(out, doc.id))
            assert bundle.method == "occlusion"
            assert [len(v) for v in bundle.scores] == [
                len(s.tokens) for s in doc.sentences
            ]

    def test_resume_skips_existing_files(self, tmp_path, capsys):
        documents, dataset, _, _, oracle = write_corpus(tmp_path, count=3, seed=42)
        provider = provider_config_path(tmp_path, oracle)
        out = tmp_path / "occl"
        assert main([
            "attribute", "--dataset", str(dataset),
            "--provider", str(provider), "--out", str(out),
        ]) == 0
        first = attribution_path(out, documents[0].id)
        stamp = first.read_bytes()
        assert main([
            "attribute", "--dataset", str(dataset),
            "--provider", str(provider), "--out", str(out), "--resume",
        ]) == 0
        assert "3 already present" in capsys.readouterr().out
        assert first.read_bytes() == stamp


class TestInspectCommand:
    def test_model_summary(self, trained, capsys):
        assert main(["inspect", trained["model"]]) == 0
        out = capsys.readouterr().out
        assert "prototypes 4" in out
        assert "prototype   0" in out

    def test_segment_mode_emits_json_lines(self, trained, capsys):
        assert main(["inspect", "--segment", "--dataset", str(trained["dataset"])]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == len(trained["documents"])
        record = json.loads(lines[0])
        assert record["id"] == trained["documents"][0].id
        assert record["sentences"][0]["tokens"]

    def test_inspect_without_arguments_is_usage_error(self, capsys):
        assert main(["inspect"]) == 2


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self):
        assert main(["frobnicate"]) == 2

    def test_corrupt_model_is_io_error(self, tmp_path):
        bad = tmp_path / "bad.psm"
        bad.write_bytes(b"PSM1" + b"\x00" * 64)
        dataset = tmp_path / "d.jsonl"
        dataset.write_text('{"id": "a", "text": "Hello there."}\n')
        emb = tmp_path / "emb"
        emb.mkdir()
        assert main([
            "explain", "--model", str(bad), "--dataset", str(dataset),
            "--embeddings", str(emb), "--out", str(tmp_path / "o"),
        ]) == 4
