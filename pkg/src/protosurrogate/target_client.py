"""Target-model access: prompts, prediction providers, and occlusion.

Three interchangeable providers realize the texts -> probabilities
predictor contract:

* ``SyntheticOracle`` — deterministic keyword rules, softmaxed; the
  desk-scale stand-in for a real target model.
* ``HttpProvider`` — renders a dataset prompt, posts it to a
  chat-completions-style endpoint, and parses the single-token answer
  into a one-hot distribution.  Transient failures retry with
  exponential backoff.
* ``FilePredictionProvider`` — stored per-document labels/probabilities,
  looked up by id (it cannot serve perturbed texts).

Occlusion attribution masks one token at a time and records the
confidence drop for the originally predicted class.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import requests

from .data_io import AttributionBundle
from .errors import (
    HttpFailure,
    MissingPrediction,
    ParseError,
    ShapeMismatch,
    UnknownDatasetKind,
    UnparseableAnswer,
)
from .segmentation import Document, segment_document, tokenize

logger = logging.getLogger(__name__)

PROMPT_TEMPLATES: dict[str, str] = {
    "binary-sentiment": (
        "Classify the sentiment of the following review as either A (positive) "
        "or B (negative). Provide only the letter (A or B) as your response, "
        "with no additional explanation. Review: {review} Output:"
    ),
    "dbpedia-4": (
        "Classify the following Review into one of the categories: 1 (Person), "
        "2 (Animal), 3 (Building), or 4 (Natural Place). Respond with only the "
        "corresponding integer (1, 2, 3, or 4) and no explanation. Your answer "
        "must be exactly one of: 1, 2, 3, or 4. Review: {review} Output:"
    ),
    "consumer-4": (
        "Classify the following Review into one of the categories: 1 (Checking "
        "or Savings Account), 2 (Credit Card or Prepaid Card), 3 (Debt "
        "Collection), or 4 (Mortgage). Respond with only the corresponding "
        "integer (1, 2, 3, or 4) and no explanation. Your answer must be "
        "exactly one of: 1, 2, 3, or 4. Review: {review} Output:"
    ),
}

_ANSWER_ALPHABET: dict[str, list[str]] = {
    "binary-sentiment": ["A", "B"],
    "dbpedia-4": ["1", "2", "3", "4"],
    "consumer-4": ["1", "2", "3", "4"],
}

_STRIPPABLE = ".,;:!?)\"'"


def num_classes_for(kind: str) -> int:
    if kind not in _ANSWER_ALPHABET:
        raise UnknownDatasetKind(f"no prompt template for dataset kind {kind!r}")
    return len(_ANSWER_ALPHABET[kind])


def build_prompt(kind: str, review: str) -> str:
    """Instantiate the classification prompt for a dataset kind."""
    if kind not in PROMPT_TEMPLATES:
        raise UnknownDatasetKind(f"no prompt template for dataset kind {kind!r}")
    return PROMPT_TEMPLATES[kind].replace("{review}", review)


def parse_answer(kind: str, response: str) -> int:
    """Map a model reply to a 0-based class index.

    The first whitespace token is matched against the dataset's answer
    alphabet (A/B or 1-4) after stripping trailing punctuation; anything
    else raises, never silently defaults.
    """
    alphabet = _ANSWER_ALPHABET.get(kind)
    if alphabet is None:
        raise UnknownDatasetKind(f"no answer parser for dataset kind {kind!r}")
    tokens = response.strip().split()
    if not tokens:
        raise UnparseableAnswer(response, f"one of {alphabet}")
    token = tokens[0].strip(_STRIPPABLE)
    if token not in alphabet:
        raise UnparseableAnswer(response, f"one of {alphabet}")
    return alphabet.index(token)


def one_hot(label: int, num_classes: int) -> np.ndarray:
    probs = np.zeros(num_classes, dtype=np.float64)
    probs[label] = 1.0
    return probs


# --- synthetic oracle -----------------------------------------------------------

@dataclass
class KeywordRule:
    keyword: str
    class_index: int
    weight: float


class SyntheticOracle:
    """Keyword-count classifier with per-class base weights.

    The class score is base_c plus the summed weights of every matching
    keyword occurrence (case-insensitive, whole tokens); the output is the
    softmax of the scores.  The label is a pure function of the token
    multiset, so reordering or re-grouping sentences never changes it.
    """

    def __init__(self, rules: Sequence[KeywordRule], base_weights: Sequence[float]):
        if not rules:
            raise ValueError("oracle needs at least one rule")
        self.rules = list(rules)
        self.base_weights = np.asarray(base_weights, dtype=np.float64)
        if self.base_weights.ndim != 1 or self.base_weights.shape[0] < 2:
            raise ShapeMismatch("base weights must cover at least two classes")
        for rule in self.rules:
            if not 0 <= rule.class_index < self.base_weights.shape[0]:
                raise ShapeMismatch(
                    f"rule {rule.keyword!r} targets class {rule.class_index} outside "
                    f"the {self.base_weights.shape[0]} classes"
                )

    @property
    def num_classes(self) -> int:
        return int(self.base_weights.shape[0])

    def scores(self, text: str) -> np.ndarray:
        counts: dict[str, int] = {}
        for token in tokenize(text.lower()) if text.strip() else []:
            counts[token] = counts.get(token, 0) + 1
        scores = self.base_weights.copy()
        for rule in self.rules:
            hits = counts.get(rule.keyword.lower(), 0)
            if hits:
                scores[rule.class_index] += rule.weight * hits
        return scores

    def __call__(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.num_classes), dtype=np.float64)
        for i, text in enumerate(texts):
            s = self.scores(text)
            e = np.exp(s - s.max())
            out[i] = e / e.sum()
        return out

    def label(self, text: str) -> int:
        return int(np.argmax(self.scores(text)))

    def to_config(self) -> dict:
        return {
            "base_weights": [float(w) for w in self.base_weights],
            "rules": [
                {"keyword": r.keyword, "class": r.class_index, "weight": r.weight}
                for r in self.rules
            ],
        }

    @classmethod
    def from_config(cls, config: dict) -> "SyntheticOracle":
        rules = [
            KeywordRule(keyword=r["keyword"], class_index=r["class"], weight=r["weight"])
            for r in config["rules"]
        ]
        return cls(rules=rules, base_weights=config["base_weights"])

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticOracle":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_config(json.load(handle))


# --- file-backed predictions -------------------------------------------------------

class FilePredictionProvider:
    """Per-document labels (and optional probabilities) from a .jsonl file."""

    def __init__(self, path: str | Path, num_classes: int | None = None):
        self.labels: dict[str, int] = {}
        self.probs: dict[str, np.ndarray] = {}
        max_label = -1
        with open(path, "r", encoding="utf-8") as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(line_number, f"invalid JSON ({exc.msg})") from exc
                if "id" not in record or "label" not in record:
                    raise ParseError(line_number, "prediction needs 'id' and 'label'")
                doc_id = record["id"]
                label = int(record["label"])
                self.labels[doc_id] = label
                max_label = max(max_label, label)
                if "probs" in record:
                    self.probs[doc_id] = np.asarray(record["probs"], dtype=np.float64)
        self.num_classes = num_classes or max(max_label + 1, 2)

    def label_for(self, doc_id: str) -> int:
        if doc_id not in self.labels:
            raise MissingPrediction(f"no prediction for document {doc_id!r}")
        return self.labels[doc_id]

    def probs_for(self, doc_id: str) -> np.ndarray:
        if doc_id in self.probs:
            return self.probs[doc_id]
        return one_hot(self.label_for(doc_id), self.num_classes)


# --- HTTP provider -------------------------------------------------------------------

DEFAULT_AUTH_ENV = "TARGET_API_TOKEN"


class HttpProvider:
    """Chat-completions client that turns single-token answers into one-hots.

    Requests are JSON bodies {model, messages, temperature: 0, max_tokens: 4}
    with bearer-token auth read from an environment variable.  Transient
    failures (connection errors, 429, 5xx) are retried up to ``max_retries``
    times with exponential backoff; responses are matched to requests by
    position in a bounded in-flight window, never by arrival order.
    """

    RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        url: str,
        model: str,
        dataset_kind: str,
        auth_env: str = DEFAULT_AUTH_ENV,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff_seconds: float = 0.25,
        max_in_flight: int = 1,
        post_fn: Callable[..., requests.Response] | None = None,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.model = model
        self.dataset_kind = dataset_kind
        self.num_classes = num_classes_for(dataset_kind)
        self.auth_env = auth_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.max_in_flight = max(1, max_in_flight)
        self._post = post_fn or requests.post
        self._sleep = sleep_fn

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _complete(self, prompt: str) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": 4,
        }
        attempts = 0
        last_error = "no attempt made"
        while attempts < self.max_retries:
            attempts += 1
            try:
                response = self._post(
                    self.url, json=body, headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if response.status_code == 200:
                    return self._extract_text(response)
                last_error = f"HTTP {response.status_code}"
                if response.status_code not in self.RETRYABLE_STATUS:
                    raise HttpFailure(attempts, last_error)
            if attempts < self.max_retries:
                self._sleep(self.backoff_seconds * (2 ** (attempts - 1)))
        raise HttpFailure(attempts, last_error)

    @staticmethod
    def _extract_text(response: requests.Response) -> str:
        try:
            payload = response.json()
            choice = payload["choices"][0]
            if "message" in choice:
                return choice["message"]["content"]
            return choice["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise UnparseableAnswer(response.text[:200], "a chat-completions choice") from exc

    def predict_one(self, text: str) -> np.ndarray:
        prompt = build_prompt(self.dataset_kind, text)
        answer = self._complete(prompt)
        return one_hot(parse_answer(self.dataset_kind, answer), self.num_classes)

    def __call__(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.num_classes), dtype=np.float64)
        if self.max_in_flight == 1 or len(texts) == 1:
            for i, text in enumerate(texts):
                out[i] = self.predict_one(text)
            return out
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            for i, row in enumerate(pool.map(self.predict_one, texts)):
                out[i] = row
        return out


# --- occlusion attribution -------------------------------------------------------------

Predictor = Callable[[list[str]], np.ndarray]


def occlusion_attributions(
    text: str,
    provider: Predictor,
    token_lists: list[list[str]] | None = None,
    method_tag: str = "occlusion",
    doc_id: str = "",
) -> AttributionBundle:
    """Per-token confidence drops from masking each token in turn.

    score[i][j] = f(x) - f(x with token j of sentence i removed), where f
    is the provider's confidence in its predicted class on the full text.
    Issues exactly one provider call per token plus one baseline call.
    """
    document = segment_document(doc_id or "occlusion-input", text)
    if token_lists is None:
        token_lists = [list(span.tokens) for span in document.sentences]
    elif len(token_lists) != len(document.sentences):
        raise ShapeMismatch(
            f"{len(token_lists)} token lists for {len(document.sentences)} sentences"
        )

    base = np.asarray(provider([text]), dtype=np.float64)[0]
    predicted = int(np.argmax(base))
    confidence = float(base[predicted])

    scores: list[np.ndarray] = []
    for i, tokens in enumerate(token_lists):
        row = np.zeros(len(tokens), dtype=np.float64)
        for j in range(len(tokens)):
            masked = _text_without_token(document, token_lists, i, j)
            probs = np.asarray(provider([masked]), dtype=np.float64)[0]
            row[j] = confidence - float(probs[predicted])
        scores.append(row.astype(np.float32))
    return AttributionBundle(doc_id=doc_id or document.id, scores=scores, method=method_tag)


def _text_without_token(
    document: Document, token_lists: list[list[str]], sentence: int, token: int
) -> str:
    """Rebuild the text from tokens with one token masked out."""
    parts = []
    for i, tokens in enumerate(token_lists):
        kept = [t for j, t in enumerate(tokens) if not (i == sentence and j == token)]
        if kept:
            parts.append(" ".join(kept))
    return " ".join(parts)
