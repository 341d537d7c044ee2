"""Prompt byte-equality with the consumer, answer parsing, and retries."""

import pytest
import requests

from conftest import _FakeResponse, fake_response
from psexport.client import (
    ANSWER_ALPHABET,
    EndpointClient,
    EndpointConfig,
    PROMPT_TEMPLATES,
    build_prompt,
    parse_answer,
)
from psexport.errors import HttpFailure, UnparseableAnswer


class TestPromptTemplates:
    def test_templates_match_consumer_byte_for_byte(self):
        from protosurrogate.target_client import PROMPT_TEMPLATES as CONSUMER

        assert set(PROMPT_TEMPLATES) == set(CONSUMER)
        for kind, template in PROMPT_TEMPLATES.items():
            assert template == CONSUMER[kind], kind

    def test_rendered_prompts_match_consumer(self):
        from protosurrogate.target_client import build_prompt as consumer_build

        for kind in PROMPT_TEMPLATES:
            assert build_prompt(kind, "sample review") == consumer_build(
                kind, "sample review"
            )

    def test_binary_prompt_text(self):
        prompt = build_prompt("binary-sentiment", "Great stay")
        assert prompt == (
            "Classify the sentiment of the following review as either A (positive) "
            "or B (negative). Provide only the letter (A or B) as your response, "
            "with no additional explanation. Review: Great stay Output:"
        )


class TestParseAnswer:
    def test_letter_mapping(self):
        assert parse_answer("binary-sentiment", "A") == 0
        assert parse_answer("binary-sentiment", "B.") == 1

    def test_integer_mapping(self):
        for kind in ("dbpedia-4", "consumer-4"):
            for i, token in enumerate(ANSWER_ALPHABET[kind]):
                assert parse_answer(kind, f" {token}\n") == i

    def test_prose_rejected(self):
        with pytest.raises(UnparseableAnswer):
            parse_answer("binary-sentiment", "It is positive")


class TestEndpointClient:
    def client(self, post_fn, **kwargs):
        config = EndpointConfig(url="http://mock.local", model="m", **kwargs)
        return EndpointClient(config, post_fn=post_fn, sleep_fn=lambda s: None)

    def test_classify_round_trip(self):
        client = self.client(lambda *a, **k: fake_response("B"))
        assert client.classify("binary-sentiment", "meh") == 1

    def test_retries_then_succeeds(self):
        attempts = []

        def flaky(url, **kwargs):
            attempts.append(1)
            if len(attempts) < 2:
                raise requests.ConnectionError("reset")
            return fake_response("A")

        assert self.client(flaky).classify("binary-sentiment", "x") == 0
        assert len(attempts) == 2

    def test_exhaustion_carries_attempt_count(self):
        def down(url, **kwargs):
            raise requests.ConnectionError("down")

        with pytest.raises(HttpFailure) as excinfo:
            self.client(down, max_retries=3).classify("binary-sentiment", "x")
        assert excinfo.value.attempts == 3

    def test_non_retryable_fails_fast(self):
        calls = []

        def unauthorized(url, **kwargs):
            calls.append(1)
            return _FakeResponse(status_code=401, payload={})

        with pytest.raises(HttpFailure):
            self.client(unauthorized).classify("binary-sentiment", "x")
        assert len(calls) == 1

    def test_bearer_token_from_env(self, monkeypatch):
        monkeypatch.setenv("TARGET_API_TOKEN", "tok")
        seen = {}

        def post_fn(url, json=None, headers=None, timeout=None):
            seen.update(headers)
            return fake_response("A")

        self.client(post_fn).classify("binary-sentiment", "x")
        assert seen["Authorization"] == "Bearer tok"
