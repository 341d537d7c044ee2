"""Token encoders: text -> per-token vectors with character offsets.

An encoder id selects the implementation:

* ``hash:<dim>`` — deterministic offline encoder; word/punctuation tokens
  with sha256-seeded unit vectors.  Useful for tests, dry runs, and
  fixtures.
* ``hf:<model>`` — a HuggingFace transformer (last hidden state per
  token, fast-tokenizer offsets).  Requires the optional ``transformers``
  and ``torch`` dependencies plus locally available weights; anything
  missing raises EncoderLoadFailure.

Tokenization runs over the whole document, and tokens are later re-grouped
under sentence spans by the character offset where each token starts.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .errors import EncoderLoadFailure

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class TokenRecord:
    token: str
    start: int
    end: int
    vector: np.ndarray


class HashEncoder:
    """Deterministic per-token unit vectors seeded by the token's sha256."""

    def __init__(self, dim: int):
        if dim < 1:
            raise EncoderLoadFailure(f"hash encoder dim must be positive, got {dim}")
        self.dim = dim

    def _vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.lower().encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def encode(self, text: str) -> list[TokenRecord]:
        return [
            TokenRecord(m.group(0), m.start(), m.end(), self._vector(m.group(0)))
            for m in _WORD_RE.finditer(text)
        ]


class HFEncoder:
    """Contextual token embeddings from a HuggingFace model."""

    def __init__(self, model_name: str):
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
        except Exception as exc:  # pragma: no cover - depends on extras
            raise EncoderLoadFailure(f"transformers/torch unavailable: {exc}") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name, use_fast=True)
            self.model = AutoModel.from_pretrained(model_name)
            self.model.eval()
        except Exception as exc:
            raise EncoderLoadFailure(f"cannot load encoder {model_name!r}: {exc}") from exc
        self.dim = int(self.model.config.hidden_size)

    def encode(self, text: str) -> list[TokenRecord]:
        import torch

        batch = self.tokenizer(
            text, return_offsets_mapping=True, return_tensors="pt",
            truncation=True,
        )
        offsets = batch.pop("offset_mapping")[0].tolist()
        with torch.no_grad():
            hidden = self.model(**batch).last_hidden_state[0]
        records = []
        for i, (start, end) in enumerate(offsets):
            if end <= start:
                continue  # special tokens carry empty offsets
            records.append(TokenRecord(
                token=text[start:end], start=int(start), end=int(end),
                vector=hidden[i].numpy().astype(np.float32),
            ))
        return records


def make_encoder(encoder_id: str):
    """Build an encoder from an id like ``hash:16`` or ``hf:model-name``."""
    scheme, _, argument = encoder_id.partition(":")
    if scheme == "hash":
        try:
            dim = int(argument)
        except ValueError:
            raise EncoderLoadFailure(f"bad hash encoder dim {argument!r}")
        return HashEncoder(dim)
    if scheme == "hf":
        if not argument:
            raise EncoderLoadFailure("hf encoder needs a model name, e.g. hf:gte-small")
        return HFEncoder(argument)
    raise EncoderLoadFailure(f"unknown encoder scheme {scheme!r}")
