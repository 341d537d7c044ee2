"""Exporter error types."""

from __future__ import annotations


class ExportError(Exception):
    """Base class for exporter failures."""


class EncoderLoadFailure(ExportError):
    """The requested encoder cannot be constructed or loaded."""


class SpanAlignmentFailure(ExportError):
    """A token cannot be assigned to any sentence span.

    Carries the character offset that fell outside every span.
    """

    def __init__(self, doc_id: str, offset: int, message: str = ""):
        detail = message or f"token at offset {offset} falls outside every sentence span"
        super().__init__(f"doc {doc_id!r}: {detail}")
        self.doc_id = doc_id
        self.offset = offset


class UnparseableAnswer(ExportError):
    """An endpoint reply did not match the expected answer alphabet."""

    def __init__(self, raw: str, expected: str):
        super().__init__(f"cannot parse answer {raw!r} (expected {expected})")
        self.raw = raw


class HttpFailure(ExportError):
    """All transport attempts failed; carries the attempt count."""

    def __init__(self, attempts: int, last_error: str):
        super().__init__(f"request failed after {attempts} attempts: {last_error}")
        self.attempts = attempts


class DatasetError(ExportError):
    """The dataset file cannot be parsed."""
