"""Prototype-based surrogate explainer for black-box text classifiers.

Train an interpretable surrogate that mimics a target model's predictions,
decompose each prediction into per-sentence prototype contributions, and
score explanation faithfulness with perturbation metrics.
"""

from .data_io import (
    AttributionBundle,
    EmbeddingBundle,
    load_model,
    read_bundle,
    read_dataset,
    save_model,
    write_bundle,
)
from .explanation import Explanation, explain, render_report, sentence_importance
from .faithfulness import FaithfulnessReport, evaluate_document, evaluate_explainer
from .prototypes import LinearHead, PredictionBreakdown, PrototypeSet, predict_document
from .segmentation import Document, SentenceSpan, segment_document, split_sentences, tokenize
from .surrogate import SurrogateModel, SurrogateTextPredictor
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "AttributionBundle",
    "Document",
    "EmbeddingBundle",
    "Explanation",
    "FaithfulnessReport",
    "LinearHead",
    "PredictionBreakdown",
    "PrototypeSet",
    "SentenceSpan",
    "SurrogateModel",
    "SurrogateTextPredictor",
    "TrainConfig",
    "TrainReport",
    "evaluate_document",
    "evaluate_explainer",
    "explain",
    "load_model",
    "predict_document",
    "read_bundle",
    "read_dataset",
    "render_report",
    "save_model",
    "segment_document",
    "sentence_importance",
    "split_sentences",
    "tokenize",
    "train",
    "write_bundle",
]
