"""Chat-completions endpoint client with retry and answer parsing.

Prompt templates must stay byte-identical to the consumer's copies: the
test suite compares them directly.  The client posts
{model, messages, temperature: 0, max_tokens: 4} with bearer auth from an
environment variable, retries transient failures with exponential
backoff, and parses single-token answers (A/B or 1-4) into 0-based class
labels, never silently defaulting.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Callable

import requests

from .errors import HttpFailure, UnparseableAnswer

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

ANSWER_ALPHABET: dict[str, list[str]] = {
    "binary-sentiment": ["A", "B"],
    "dbpedia-4": ["1", "2", "3", "4"],
    "consumer-4": ["1", "2", "3", "4"],
}

_STRIPPABLE = ".,;:!?)\"'"

DEFAULT_AUTH_ENV = "TARGET_API_TOKEN"
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


def build_prompt(kind: str, review: str) -> str:
    if kind not in PROMPT_TEMPLATES:
        raise KeyError(f"no prompt template for dataset kind {kind!r}")
    return PROMPT_TEMPLATES[kind].replace("{review}", review)


def parse_answer(kind: str, response: str) -> int:
    alphabet = ANSWER_ALPHABET[kind]
    tokens = response.strip().split()
    if not tokens:
        raise UnparseableAnswer(response, f"one of {alphabet}")
    token = tokens[0].strip(_STRIPPABLE)
    if token not in alphabet:
        raise UnparseableAnswer(response, f"one of {alphabet}")
    return alphabet.index(token)


@dataclass
class EndpointConfig:
    url: str
    model: str = "default"
    auth_env: str = DEFAULT_AUTH_ENV
    timeout: float = 30.0
    max_retries: int = 3
    backoff_seconds: float = 0.25

    @classmethod
    def from_dict(cls, raw: dict) -> "EndpointConfig":
        return cls(
            url=raw["url"],
            model=raw.get("model", "default"),
            auth_env=raw.get("auth_env", DEFAULT_AUTH_ENV),
            timeout=float(raw.get("timeout", 30.0)),
            max_retries=int(raw.get("max_retries", 3)),
            backoff_seconds=float(raw.get("backoff_seconds", 0.25)),
        )


class EndpointClient:
    def __init__(
        self,
        config: EndpointConfig,
        post_fn: Callable[..., requests.Response] | None = None,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._post = post_fn or requests.post
        self._sleep = sleep_fn

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: str) -> str:
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": 4,
        }
        attempts = 0
        last_error = "no attempt made"
        while attempts < self.config.max_retries:
            attempts += 1
            try:
                response = self._post(self.config.url, json=body,
                                      headers=self._headers(),
                                      timeout=self.config.timeout)
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if response.status_code == 200:
                    return self._extract_text(response)
                last_error = f"HTTP {response.status_code}"
                if response.status_code not in RETRYABLE_STATUS:
                    raise HttpFailure(attempts, last_error)
            if attempts < self.config.max_retries:
                self._sleep(self.config.backoff_seconds * (2 ** (attempts - 1)))
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
            raise UnparseableAnswer(response.text[:200],
                                    "a chat-completions choice") from exc

    def classify(self, kind: str, review: str) -> int:
        return parse_answer(kind, self.complete(build_prompt(kind, review)))
