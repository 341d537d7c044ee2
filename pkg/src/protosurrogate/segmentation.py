"""Sentence segmentation and tokenization.

Splits raw text on the terminal delimiters ``.``, ``!``, ``?`` (a run of
consecutive delimiters closes a single sentence) and keeps any trailing
text after the last delimiter as a final sentence.  Offsets are character
offsets into the original text; spans are trimmed of surrounding
whitespace so every span contains at least one visible character.

All functions here are pure and deterministic.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from .errors import EmptyInput, TokenizerMismatch

logger = logging.getLogger(__name__)

_DELIMITERS = frozenset(".!?")

# A token is a maximal run of word characters or a single non-space symbol.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

DEFAULT_SCHEME = "whitespace-punct"


@dataclass(frozen=True)
class SentenceSpan:
    """One sentence: a [start, end) slice of the document text plus tokens."""

    start: int
    end: int
    tokens: tuple[str, ...]

    def text_of(self, text: str) -> str:
        return text[self.start:self.end]


@dataclass(frozen=True)
class Document:
    """A classified text with its sentence decomposition.

    ``label`` is the target model's predicted class for the text (the
    distillation target), not a gold annotation; it is None until known.
    """

    id: str
    text: str
    sentences: tuple[SentenceSpan, ...] = field(default_factory=tuple)
    label: int | None = None

    def sentence_texts(self) -> list[str]:
        return [s.text_of(self.text) for s in self.sentences]


def tokenize(text: str, scheme: str = DEFAULT_SCHEME) -> list[str]:
    """Split sentence text into tokens under the given scheme.

    The default scheme separates word runs from punctuation, so
    "The room was spotless." -> ["The", "room", "was", "spotless", "."].
    Deterministic for a fixed scheme.
    """
    if scheme != DEFAULT_SCHEME:
        raise TokenizerMismatch(f"unknown tokenizer scheme {scheme!r}")
    return _TOKEN_RE.findall(text)


def split_sentences(text: str, scheme: str = DEFAULT_SCHEME) -> list[SentenceSpan]:
    """Split text into sentence spans at ``.``, ``!``, ``?`` boundaries.

    Raises:
        EmptyInput: if the text is empty or all whitespace.
    """
    if not text.strip():
        raise EmptyInput("text is empty or all whitespace")

    boundaries: list[tuple[int, int]] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _DELIMITERS:
            # A run of delimiters ("?!", "...") closes one sentence.
            while i + 1 < n and text[i + 1] in _DELIMITERS:
                i += 1
            boundaries.append((start, i + 1))
            start = i + 1
        i += 1
    if start < n:
        boundaries.append((start, n))

    spans: list[SentenceSpan] = []
    for raw_start, raw_end in boundaries:
        s, e = raw_start, raw_end
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if e <= s:
            continue  # whitespace-only segment between delimiters
        tokens = tokenize(text[s:e], scheme)
        if not tokens:
            logger.warning("dropping sentence with no tokens at [%d, %d)", s, e)
            continue
        spans.append(SentenceSpan(start=s, end=e, tokens=tuple(tokens)))
    return spans


def segment_document(doc_id: str, text: str, label: int | None = None) -> Document:
    """Build a Document with sentence spans for raw text."""
    return Document(id=doc_id, text=text, sentences=tuple(split_sentences(text)), label=label)


def apply_bundle_tokens(document: Document, token_lists: list[list[str]]) -> Document:
    """Replace locally tokenized sentences with externally stored token lists.

    When an embedding bundle exists, its token lists (the encoder's own
    tokenization) take precedence over the local scheme.

    Raises:
        TokenizerMismatch: if the bundle's sentence count disagrees with the
            document's, or any sentence has an empty token list.
    """
    if len(token_lists) != len(document.sentences):
        raise TokenizerMismatch(
            f"doc {document.id!r}: bundle has {len(token_lists)} sentences, "
            f"document has {len(document.sentences)}"
        )
    sentences = []
    for span, tokens in zip(document.sentences, token_lists):
        if not tokens:
            raise TokenizerMismatch(f"doc {document.id!r}: empty token list in bundle")
        sentences.append(replace(span, tokens=tuple(tokens)))
    return replace(document, sentences=tuple(sentences))
