"""Shared exporter test fixtures: a tiny dataset and a mock endpoint."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from psexport.client import EndpointClient, EndpointConfig

DATA_DIR = Path(__file__).parent / "data"

# Binary mock rule: reviews containing "good" answer A, everything else B.
GOOD_WORD = "good"


class _FakeResponse:
    def __init__(self, status_code=200, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or json.dumps(payload or {})

    def json(self):
        if self._payload is None:
            raise ValueError("no json body")
        return self._payload


def keyword_post_fn(url, json=None, headers=None, timeout=None):
    prompt = json["messages"][0]["content"]
    review = prompt.split("Review: ", 1)[1].rsplit(" Output:", 1)[0]
    answer = "A" if GOOD_WORD in review else "B"
    return _FakeResponse(payload={"choices": [{"message": {"content": answer}}]})


@pytest.fixture
def mock_client():
    config = EndpointConfig(url="http://mock.local/v1/chat/completions",
                            model="mock-model")
    return EndpointClient(config, post_fn=keyword_post_fn, sleep_fn=lambda s: None)


@pytest.fixture
def small_dataset(tmp_path):
    rows = [
        {"id": "r0", "text": "The stay was good overall. Coffee was fine."},
        {"id": "r1", "text": "Nothing worked at all! Avoid this place."},
        {"id": "r2", "text": "A good pool. A good view. Slow elevator though."},
        {"id": "r3", "text": "Checkout dragged on forever"},
    ]
    path = tmp_path / "reviews.jsonl"
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")
    return path, rows


def fake_response(content):
    return _FakeResponse(payload={"choices": [{"message": {"content": content}}]})
