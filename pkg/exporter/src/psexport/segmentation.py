"""Sentence segmentation, mirroring the consumer's splitter byte-for-byte.

The downstream artifact splits on the terminal delimiters ``.``, ``!``,
``?`` (runs of delimiters close one sentence), keeps trailing text as a
final sentence, and trims whitespace from span edges.  This module
re-implements that rule so export jobs can run standalone; the test suite
verifies byte-identical output against `protosur inspect --segment` on a
shared fixture corpus.  Any change here must keep that test green.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import DatasetError

_DELIMITERS = frozenset(".!?")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    tokens: tuple[str, ...]

    def text_of(self, text: str) -> str:
        return text[self.start:self.end]


def word_tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def split_sentences(text: str) -> list[Span]:
    if not text.strip():
        raise DatasetError("text is empty or all whitespace")
    boundaries: list[tuple[int, int]] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _DELIMITERS:
            while i + 1 < n and text[i + 1] in _DELIMITERS:
                i += 1
            boundaries.append((start, i + 1))
            start = i + 1
        i += 1
    if start < n:
        boundaries.append((start, n))

    spans: list[Span] = []
    for raw_start, raw_end in boundaries:
        s, e = raw_start, raw_end
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if e <= s:
            continue
        tokens = word_tokenize(text[s:e])
        if not tokens:
            continue
        spans.append(Span(start=s, end=e, tokens=tuple(tokens)))
    return spans
