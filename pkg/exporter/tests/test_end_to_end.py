"""Full bridge: exporter output drives the consumer's training pipeline."""

import json

import pytest

from conftest import keyword_post_fn
from psexport.cli import main
from psexport.client import EndpointClient, EndpointConfig
from psexport.jobs import ExportJob, export_attributions, export_embeddings, export_predictions


@pytest.fixture
def corpus(tmp_path):
    """Two-class keyword corpus large enough to train the consumer on."""
    import numpy as np

    rng = np.random.default_rng(17)
    fillers = ["the", "room", "was", "staff", "we", "a", "very", "night"]
    rows = []
    for i in range(128):
        sentences = []
        for _ in range(rng.integers(1, 4)):
            words = list(rng.choice(fillers, size=rng.integers(1, 3), replace=True))
            words.insert(int(rng.integers(len(words) + 1)),
                         "good" if rng.random() < 0.5 else "poor")
            sentences.append(" ".join(words) + ".")
        rows.append({"id": f"e2e-{i:03d}", "text": " ".join(sentences)})
    path = tmp_path / "reviews.jsonl"
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")
    return path, rows


def test_exported_artifacts_train_the_consumer(corpus, tmp_path):
    from protosurrogate.data_io import read_bundle, read_dataset
    from protosurrogate.explanation import explain
    from protosurrogate.segmentation import Document
    from protosurrogate.target_client import FilePredictionProvider
    from protosurrogate.training import TrainConfig, train

    dataset, rows = corpus
    emb_dir = tmp_path / "emb"
    attr_dir = tmp_path / "attr"
    preds = tmp_path / "preds.jsonl"
    client = EndpointClient(EndpointConfig(url="http://mock.local"),
                            post_fn=keyword_post_fn, sleep_fn=lambda s: None)

    export_embeddings(ExportJob(dataset=str(dataset), output=str(emb_dir),
                                encoder_id="hash:16"))
    export_predictions(ExportJob(dataset=str(dataset), output=str(preds)),
                       client=client)
    export_attributions(ExportJob(dataset=str(dataset), output=str(attr_dir)),
                        client=client)

    documents = read_dataset(dataset)
    provider = FilePredictionProvider(preds)
    documents = [
        Document(id=d.id, text=d.text, sentences=d.sentences,
                 label=provider.label_for(d.id))
        for d in documents
    ]
    bundles = {d.id: read_bundle(emb_dir / f"{d.id}.pse") for d in documents}
    attributions = {d.id: read_bundle(attr_dir / f"{d.id}.psa") for d in documents}

    config = TrainConfig(epochs=8, batch_size=8, num_prototypes=4, seed=13)
    model, report = train(
        documents[:96], bundles, config, attributions=attributions,
        eval_documents=documents[96:], eval_bundles=bundles,
        eval_attributions=attributions,
    )
    assert report.epochs[-1].fidelity >= 0.8

    sample = documents[0]
    result = explain(sample, model, bundles[sample.id], attributions[sample.id])
    sums = result.breakdown.contributions.sum(axis=(0, 1))
    assert abs(sums - result.breakdown.document_logits).max() <= 1e-9


def test_cli_commands_round_trip(corpus, tmp_path):
    from protosurrogate.data_io import read_bundle

    dataset, rows = corpus
    endpoint_cfg = tmp_path / "endpoint.json"
    endpoint_cfg.write_text(json.dumps({"url": "http://mock.local", "model": "m"}))

    emb_out = tmp_path / "cli-emb"
    code = main(["embeddings", "--dataset", str(dataset), "--out", str(emb_out),
                 "--encoder", "hash:8"])
    assert code == 0
    bundle = read_bundle(emb_out / f"{rows[0]['id']}.pse")
    assert bundle.dim == 8

    # Endpoint-backed commands need a reachable endpoint; a bogus port fails
    # with the documented I/O exit code after retries.
    unreachable = tmp_path / "unreachable.json"
    unreachable.write_text(json.dumps({
        "url": "http://127.0.0.1:9", "model": "m",
        "max_retries": 2, "timeout": 0.2, "backoff_seconds": 0.01,
    }))
    code = main(["predictions", "--dataset", str(dataset),
                 "--out", str(tmp_path / "p.jsonl"),
                 "--endpoint", str(unreachable)])
    assert code == 4

    code = main(["embeddings", "--dataset", str(dataset), "--out", str(emb_out),
                 "--encoder", "bogus:1"])
    assert code == 4

    assert main(["embeddings", "--dataset", str(dataset)]) == 2  # missing --out
