"""The exporter's segmentation must match the consumer's byte-for-byte."""

import json
import subprocess
import sys
from pathlib import Path

from psexport.segmentation import split_sentences

FIXTURES = Path(__file__).parent / "data" / "segmentation_fixtures.jsonl"


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def local_segment_lines() -> list[str]:
    lines = []
    with open(FIXTURES, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            record = json.loads(line)
            spans = split_sentences(record["text"])
            lines.append(canonical({
                "id": record["id"],
                "sentences": [
                    {
                        "start": s.start,
                        "end": s.end,
                        "text": s.text_of(record["text"]),
                        "tokens": list(s.tokens),
                    }
                    for s in spans
                ],
            }))
    return lines


def test_segmentation_is_byte_identical_to_consumer_cli():
    proc = subprocess.run(
        [sys.executable, "-m", "protosurrogate.cli", "inspect", "--segment",
         "--dataset", str(FIXTURES)],
        capture_output=True, text=True, check=True,
    )
    consumer_lines = proc.stdout.strip().splitlines()
    assert consumer_lines == local_segment_lines()


def test_fixture_corpus_covers_edge_cases():
    with open(FIXTURES, "r", encoding="utf-8") as handle:
        texts = [json.loads(line)["text"] for line in handle if line.strip()]
    assert any("?!" in t for t in texts)          # delimiter runs
    assert any(not t.rstrip().endswith((".", "!", "?")) for t in texts)  # trailing text
    assert any("\n" in t for t in texts)          # newlines
    assert any(ord(c) > 127 for t in texts for c in t)  # non-ascii
