"""Export jobs: embeddings, predictions, and occlusion attributions.

Each job consumes a line-delimited JSON dataset ({id, text, label?}) and
emits files the downstream artifact reads directly: one ``.pse`` per
document for embeddings, one ``.psa`` per document for attributions, and
a predictions ``.jsonl`` of {id, label}.  Jobs are resumable: existing
outputs are skipped, and prediction parse failures are recorded in a
sidecar file while the job continues.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .client import EndpointClient, EndpointConfig
from .encoders import TokenRecord, make_encoder
from .errors import SpanAlignmentFailure, UnparseableAnswer
from .formats import read_dataset, write_attribution_file, write_embedding_file
from .segmentation import Span, split_sentences

logger = logging.getLogger(__name__)


@dataclass
class ExportJob:
    dataset: str
    output: str
    encoder_id: str = "hash:16"
    endpoint: EndpointConfig | None = None
    dataset_kind: str = "binary-sentiment"
    resume: bool = False
    parallelism: int = 4  # bounded in-flight endpoint requests


def _bounded_map(fn, items, workers: int):
    """Map with a bounded thread pool; results come back in input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class JobResult:
    written: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)


def _effective_start(text: str, start: int, end: int) -> int | None:
    """First visible character of a token; None when it is all whitespace."""
    i = start
    while i < end and text[i].isspace():
        i += 1
    return i if i < end else None


def group_tokens_by_span(
    doc_id: str, text: str, records: list[TokenRecord], spans: list[Span]
) -> list[list[TokenRecord]]:
    """Assign each token to the sentence span containing its first character.

    Raises:
        SpanAlignmentFailure: a token starts outside every span, or a
            sentence ends up with no tokens at all.
    """
    grouped: list[list[TokenRecord]] = [[] for _ in spans]
    for record in records:
        if record.start < 0 or record.end > len(text) or record.end <= record.start:
            raise SpanAlignmentFailure(
                doc_id, record.start,
                f"token offsets [{record.start}, {record.end}) fall outside the text",
            )
        start = _effective_start(text, record.start, record.end)
        if start is None:
            continue
        for i, span in enumerate(spans):
            if span.start <= start < span.end:
                grouped[i].append(record)
                break
        else:
            raise SpanAlignmentFailure(doc_id, start)
    for i, bucket in enumerate(grouped):
        if not bucket:
            raise SpanAlignmentFailure(
                doc_id, spans[i].start,
                f"sentence at offset {spans[i].start} received no tokens",
            )
    return grouped


def export_embeddings(job: ExportJob, encoder=None) -> JobResult:
    """One ``.pse`` bundle per document, tokens grouped under sentence spans."""
    encoder = encoder or make_encoder(job.encoder_id)
    out_dir = Path(job.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = JobResult()
    for record in read_dataset(job.dataset):
        doc_id = record["id"]
        path = out_dir / f"{doc_id}.pse"
        if job.resume and path.is_file():
            result.skipped.append(doc_id)
            continue
        text = record["text"]
        spans = split_sentences(text)
        grouped = group_tokens_by_span(doc_id, text, encoder.encode(text), spans)
        write_embedding_file(
            path,
            doc_id=doc_id,
            dim=encoder.dim,
            token_lists=[[t.token for t in bucket] for bucket in grouped],
            matrices=[np.stack([t.vector for t in bucket]) for bucket in grouped],
        )
        result.written.append(doc_id)
    return result


def export_predictions(job: ExportJob, client: EndpointClient | None = None) -> JobResult:
    """A predictions ``.jsonl`` of {id, label} parsed from endpoint answers.

    Unparseable answers are logged per id to ``<output>.failures.jsonl``
    and the job continues; resume re-runs only ids with no stored label.
    """
    client = client or EndpointClient(job.endpoint)
    out_path = Path(job.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    done: set[str] = set()
    if job.resume and out_path.is_file():
        with open(out_path, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    done.add(json.loads(line)["id"])
    mode = "a" if (job.resume and out_path.is_file()) else "w"
    failures_path = out_path.with_name(out_path.name + ".failures.jsonl")
    result = JobResult()
    failures: list[dict] = []

    pending = []
    for record in read_dataset(job.dataset):
        if record["id"] in done:
            result.skipped.append(record["id"])
        else:
            pending.append(record)

    def classify_one(record: dict):
        try:
            return record["id"], client.classify(job.dataset_kind, record["text"]), None
        except UnparseableAnswer as exc:
            return record["id"], None, exc

    # Chunked so that a hard endpoint failure mid-run loses at most one
    # chunk of already-computed answers; within a chunk, requests run with
    # bounded parallelism and results land in dataset order.
    chunk_size = max(job.parallelism * 4, 1)
    with open(out_path, mode, encoding="utf-8") as handle:
        for base in range(0, len(pending), chunk_size):
            chunk = pending[base:base + chunk_size]
            for doc_id, label, error in _bounded_map(classify_one, chunk,
                                                     job.parallelism):
                if error is not None:
                    logger.warning("doc %s: %s", doc_id, error)
                    failures.append({"id": doc_id, "error": str(error),
                                     "raw": error.raw})
                    result.failed.append(doc_id)
                    continue
                handle.write(json.dumps({"id": doc_id, "label": label}) + "\n")
                result.written.append(doc_id)
            handle.flush()
    if failures:
        with open(failures_path, "w", encoding="utf-8") as handle:
            for entry in failures:
                handle.write(json.dumps(entry) + "\n")
    return result


def export_attributions(
    job: ExportJob, encoder=None, client: EndpointClient | None = None
) -> JobResult:
    """Occlusion attributions aligned with the encoder's tokenization.

    For each token, the text is re-classified with that token's characters
    removed; the score is the drop in (one-hot) confidence for the
    original label, so values lie in {0, 1}.  One ``.psa`` per document.
    """
    encoder = encoder or make_encoder(job.encoder_id)
    client = client or EndpointClient(job.endpoint)
    out_dir = Path(job.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = JobResult()
    for record in read_dataset(job.dataset):
        doc_id = record["id"]
        path = out_dir / f"{doc_id}.psa"
        if job.resume and path.is_file():
            result.skipped.append(doc_id)
            continue
        text = record["text"]
        spans = split_sentences(text)
        grouped = group_tokens_by_span(doc_id, text, encoder.encode(text), spans)
        base_label = client.classify(job.dataset_kind, text)

        def masked_label(token: TokenRecord) -> int:
            return client.classify(job.dataset_kind,
                                   text[:token.start] + text[token.end:])

        scores = []
        for bucket in grouped:
            labels = _bounded_map(masked_label, bucket, job.parallelism)
            scores.append(np.array(
                [1.0 if l != base_label else 0.0 for l in labels], dtype=np.float32
            ))
        write_attribution_file(path, doc_id=doc_id, scores=scores, method="occlusion")
        result.written.append(doc_id)
    return result
