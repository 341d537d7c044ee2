"""The surrogate model artifact: encoder params + prototypes + head.

This is the object that training produces, the archive serializes, and
explanation/faithfulness consume.  It predicts from embedding bundles, so
the external text encoder stays pluggable: anything that can produce an
EmbeddingBundle can drive the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data_io import AttributionBundle, EmbeddingBundle
from .encoder import (
    AttentionParams,
    SentenceEncoding,
    encode_sentence,
    normalize_attributions,
    softmax,
)
from .errors import MissingBundle, ShapeMismatch
from .prototypes import LinearHead, PredictionBreakdown, PrototypeSet, predict_document
from .segmentation import split_sentences


@dataclass
class SurrogateModel:
    attention: AttentionParams
    prototypes: PrototypeSet
    head: LinearHead
    eps: float = 1e-9
    use_attributions: bool = True
    train_config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.prototypes.dim != self.attention.dim:
            raise ShapeMismatch(
                f"prototype dim {self.prototypes.dim} != attention dim {self.attention.dim}"
            )
        if self.head.weights.shape[1] != self.prototypes.count:
            raise ShapeMismatch(
                f"head width {self.head.weights.shape[1]} != prototype count "
                f"{self.prototypes.count}"
            )

    @property
    def dim(self) -> int:
        return self.attention.dim

    @property
    def num_prototypes(self) -> int:
        return self.prototypes.count

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    def sentence_bias(
        self, attributions: AttributionBundle | None, index: int, length: int
    ) -> np.ndarray | None:
        """Normalized attribution bias for sentence ``index``, or None.

        None (disabled or absent attributions) is exactly equivalent to a
        zero bias vector; returning None keeps the ablation switch an
        identity at the bit level.
        """
        if not self.use_attributions or attributions is None:
            return None
        scores = attributions.scores[index]
        if scores.shape[0] != length:
            raise ShapeMismatch(
                f"attribution length {scores.shape[0]} != token count {length} "
                f"(sentence {index})"
            )
        return normalize_attributions(scores, eps=self.eps)

    def encode_document(
        self,
        bundle: EmbeddingBundle,
        attributions: AttributionBundle | None = None,
    ) -> list[SentenceEncoding]:
        if attributions is not None and len(attributions.scores) != len(bundle.matrices):
            raise ShapeMismatch(
                f"attribution bundle has {len(attributions.scores)} sentences, "
                f"embedding bundle has {len(bundle.matrices)}"
            )
        encodings = []
        for i, matrix in enumerate(bundle.matrices):
            bias = self.sentence_bias(attributions, i, matrix.shape[0])
            encodings.append(encode_sentence(matrix, bias, self.attention))
        return encodings

    def sentence_embeddings(
        self,
        bundle: EmbeddingBundle,
        attributions: AttributionBundle | None = None,
    ) -> np.ndarray:
        """(M, d) matrix of pooled sentence embeddings."""
        encs = self.encode_document(bundle, attributions)
        return np.stack([e.embedding for e in encs])

    def predict_bundle(
        self,
        bundle: EmbeddingBundle,
        attributions: AttributionBundle | None = None,
    ) -> PredictionBreakdown:
        hs = self.sentence_embeddings(bundle, attributions)
        return predict_document(hs, self.prototypes, self.head)

    def astype_storage(self) -> "SurrogateModel":
        """Copy with all parameters cast to the float32 storage dtype."""
        return replace(
            self,
            attention=self.attention.astype(np.float32),
            prototypes=PrototypeSet(
                vectors=self.prototypes.vectors.astype(np.float32),
                trainable=self.prototypes.trainable,
                associations=list(self.prototypes.associations),
            ),
            head=LinearHead(weights=self.head.weights.astype(np.float32)),
        )


def class_probabilities(logits: np.ndarray) -> np.ndarray:
    """Softmax readout of document logits."""
    return softmax(np.asarray(logits, dtype=np.float64))


class SurrogateTextPredictor:
    """Adapts the surrogate to the texts -> probabilities predictor contract.

    The model consumes embeddings, not raw text, so this wrapper carries a
    registry of known sentences (text -> token embeddings + raw attribution
    scores) built from the documents' bundles.  Perturbed inputs produced
    by sentence-removal are re-split and looked up sentence by sentence,
    which covers every input the faithfulness machinery generates.

    The empty string (all sentences removed) maps to the uniform
    distribution: with no sentences there are no logits to sum.
    """

    def __init__(self, model: SurrogateModel):
        self.model = model
        self._registry: dict[str, tuple[np.ndarray, np.ndarray | None]] = {}

    def register_document(
        self,
        document,
        bundle: EmbeddingBundle,
        attributions: AttributionBundle | None = None,
    ) -> None:
        for i, span in enumerate(document.sentences):
            scores = attributions.scores[i] if attributions is not None else None
            self._registry[span.text_of(document.text)] = (bundle.matrices[i], scores)

    def __call__(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.model.num_classes), dtype=np.float64)
        for row, text in enumerate(texts):
            out[row] = self._predict_one(text)
        return out

    def _predict_one(self, text: str) -> np.ndarray:
        if not text.strip():
            c = self.model.num_classes
            return np.full(c, 1.0 / c)
        hs = []
        for span in split_sentences(text):
            sentence = text[span.start:span.end]
            try:
                matrix, scores = self._registry[sentence]
            except KeyError:
                raise MissingBundle(f"no registered embeddings for sentence {sentence!r}")
            bias = None
            if self.model.use_attributions and scores is not None:
                bias = normalize_attributions(scores, eps=self.model.eps)
            hs.append(encode_sentence(matrix, bias, self.model.attention).embedding)
        breakdown = predict_document(np.stack(hs), self.model.prototypes, self.model.head)
        return class_probabilities(breakdown.document_logits)
