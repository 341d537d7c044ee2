"""Perturbation-based faithfulness metrics over sentence explanations.

Given a predictor f (texts -> class probabilities), a document, and a
claimed sentence-importance ranking, these metrics measure how well the
ranking matches the predictor's behaviour when sentences are removed,
kept, or re-inserted.  Throughout a document's perturbation sequence,
"confidence" means the probability assigned to the class the predictor
chose on the unperturbed input, and the class function g is the argmax
(ties to the lowest index).

Removal prefixes drop sentences in descending claimed importance.  For
comprehensiveness and sufficiency both readings of the formula are
computed: the ``drop`` variant is the mean confidence drop over prefixes
(higher = removed content mattered) and the ``paper-literal`` variant is
one minus that mean.  ``drop`` is the default.

All prefix texts for one document are cached and shared, so evaluating
comprehensiveness + sufficiency + both decision-flip metrics issues at
most 3L+3 predictor calls.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyDataset, IndexOutOfRange, ShapeMismatch
from .segmentation import Document

# texts -> (len(texts), C) array of class probabilities
Predictor = Callable[[list[str]], np.ndarray]

VARIANTS = ("drop", "paper-literal")


class CachingPredictor:
    """Per-evaluation cache so shared prefixes cost one call each."""

    def __init__(self, predictor: Predictor):
        self._predictor = predictor
        self._cache: dict[str, np.ndarray] = {}
        self.calls = 0  # number of texts actually sent to the predictor

    def probs(self, text: str) -> np.ndarray:
        if text not in self._cache:
            result = np.asarray(self._predictor([text]), dtype=np.float64)
            if result.ndim != 2 or result.shape[0] != 1:
                raise ShapeMismatch(
                    f"predictor returned shape {result.shape} for a single text"
                )
            row = result[0]
            if not np.all(np.isfinite(row)) or abs(row.sum() - 1.0) > 1e-6:
                raise ShapeMismatch(
                    f"predictor output is not a probability vector: {row}"
                )
            self._cache[text] = row
            self.calls += 1
        return self._cache[text]


def remove_sentences(document: Document, indices: set[int] | Sequence[int]) -> str:
    """Concatenate the surviving sentences, in order, with single spaces.

    Removing every sentence yields the empty string, the sentinel each
    Predictor implementation must accept.
    """
    drop = set(indices)
    count = len(document.sentences)
    for i in drop:
        if not 0 <= i < count:
            raise IndexOutOfRange(f"sentence index {i} outside [0, {count})")
    kept = [
        span.text_of(document.text)
        for i, span in enumerate(document.sentences)
        if i not in drop
    ]
    return " ".join(kept)


def importance_order(scores: Sequence[float]) -> list[int]:
    """Indices sorted by descending score; ties go to the lower index."""
    return sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))


def _check_order(document: Document, order: Sequence[int]) -> list[int]:
    order = [int(i) for i in order]
    if sorted(order) != list(range(len(document.sentences))):
        raise IndexOutOfRange(
            f"importance order {order} is not a permutation of the "
            f"{len(document.sentences)} sentence indices"
        )
    return order


@dataclass
class PerturbationCurve:
    """All predictor readings needed by the seven metrics for one document."""

    baseline_class: int
    baseline_confidence: float
    removal_confidences: np.ndarray    # (L+1,) confidence after removing top-l
    removal_classes: np.ndarray        # (L+1,) argmax after removing top-l
    keep_confidences: np.ndarray       # (L+1,) confidence keeping only top-l
    deletion_deltas: np.ndarray        # (L,) f(x) - f(x minus the rank-l sentence)
    insertion_confidences: np.ndarray  # (L+1,) reversed removal curve


def build_curve(
    predictor: Predictor | CachingPredictor,
    document: Document,
    order: Sequence[int],
    include_deletions: bool = True,
) -> PerturbationCurve:
    """Run every perturbation for one document through a shared cache."""
    cache = predictor if isinstance(predictor, CachingPredictor) else CachingPredictor(predictor)
    order = _check_order(document, order)
    length = len(order)

    base = cache.probs(remove_sentences(document, ()))
    baseline_class = int(np.argmax(base))
    baseline_confidence = float(base[baseline_class])

    removal_confidences = np.empty(length + 1)
    removal_classes = np.empty(length + 1, dtype=int)
    for l in range(length + 1):
        probs = cache.probs(remove_sentences(document, order[:l]))
        removal_confidences[l] = probs[baseline_class]
        removal_classes[l] = int(np.argmax(probs))

    keep_confidences = np.empty(length + 1)
    for l in range(length + 1):
        probs = cache.probs(remove_sentences(document, order[l:]))
        keep_confidences[l] = probs[baseline_class]

    deletion_deltas = np.full(length, np.nan)
    if include_deletions:
        for rank, idx in enumerate(order):
            probs = cache.probs(remove_sentences(document, (idx,)))
            deletion_deltas[rank] = baseline_confidence - probs[baseline_class]

    return PerturbationCurve(
        baseline_class=baseline_class,
        baseline_confidence=baseline_confidence,
        removal_confidences=removal_confidences,
        removal_classes=removal_classes,
        keep_confidences=keep_confidences,
        deletion_deltas=deletion_deltas,
        insertion_confidences=removal_confidences[::-1].copy(),
    )


def _variant_value(mean_drop: float, variant: str) -> float:
    if variant == "drop":
        return mean_drop
    if variant == "paper-literal":
        return 1.0 - mean_drop
    raise ValueError(f"unknown variant {variant!r} (expected one of {VARIANTS})")


def comprehensiveness(
    predictor: Predictor,
    document: Document,
    order: Sequence[int],
    variant: str = "drop",
    curve: PerturbationCurve | None = None,
) -> float:
    """Mean confidence drop over removal prefixes (or 1 minus it)."""
    curve = curve or build_curve(predictor, document, order, include_deletions=False)
    mean_drop = float(np.mean(curve.baseline_confidence - curve.removal_confidences))
    return _variant_value(mean_drop, variant)


def sufficiency(
    predictor: Predictor,
    document: Document,
    order: Sequence[int],
    variant: str = "drop",
    curve: PerturbationCurve | None = None,
) -> float:
    """Mean confidence drop over keep prefixes (or 1 minus it)."""
    curve = curve or build_curve(predictor, document, order, include_deletions=False)
    mean_drop = float(np.mean(curve.baseline_confidence - curve.keep_confidences))
    return _variant_value(mean_drop, variant)


def decision_flip_fraction(
    predictor: Predictor,
    document: Document,
    order: Sequence[int],
    curve: PerturbationCurve | None = None,
) -> float:
    """Smallest removal fraction that flips the decision; 1 when none does."""
    curve = curve or build_curve(predictor, document, order, include_deletions=False)
    length = len(curve.removal_classes) - 1
    if length < 1:
        raise IndexOutOfRange("decision flips need at least one sentence")
    for l in range(1, length + 1):
        if curve.removal_classes[l] != curve.baseline_class:
            return l / length
    return 1.0


def decision_flip_most_important(
    predictor: Predictor,
    document: Document,
    order: Sequence[int],
    curve: PerturbationCurve | None = None,
) -> int:
    """1 if removing just the top-ranked sentence changes the class."""
    curve = curve or build_curve(predictor, document, order, include_deletions=False)
    if len(curve.removal_classes) < 2:
        raise IndexOutOfRange("decision flips need at least one sentence")
    return int(curve.removal_classes[1] != curve.baseline_class)


def rank_with_ties(values: Sequence[float]) -> np.ndarray:
    """1-based ranks, ties resolved to the average rank."""
    a = np.asarray(values, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.shape[0], dtype=np.float64)
    i = 0
    while i < a.shape[0]:
        j = i
        while j + 1 < a.shape[0] and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, bool]:
    """Spearman rank correlation with average ranks for ties.

    Returns (rho, degenerate); a constant input has no defined ranks, so
    it is reported as rho = 0 with the degenerate flag set instead of NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ShapeMismatch(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0, True
    rx = rank_with_ties(x)
    ry = rank_with_ties(y)
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))
    return rho, False


def deletion_rank_correlation(
    predictor: Predictor,
    document: Document,
    scores: Sequence[float],
    curve: PerturbationCurve | None = None,
) -> tuple[float, bool]:
    """Spearman between claimed importance and single-removal impact."""
    if len(document.sentences) < 2:
        raise IndexOutOfRange("deletion correlation needs at least two sentences")
    order = importance_order(scores)
    curve = curve or build_curve(predictor, document, order, include_deletions=True)
    ranked_scores = [float(scores[i]) for i in order]
    return spearman(curve.deletion_deltas, ranked_scores)


def insertion_rank_correlation(
    predictor: Predictor,
    document: Document,
    order: Sequence[int],
    curve: PerturbationCurve | None = None,
) -> tuple[float, bool]:
    """Spearman between insertion step and confidence as sentences return.

    The insertion sequence starts from the empty input and adds sentences
    least-important-first, so each step introduces a more important
    sentence than any already present.
    """
    if len(document.sentences) < 2:
        raise IndexOutOfRange("insertion correlation needs at least two sentences")
    curve = curve or build_curve(predictor, document, order, include_deletions=False)
    steps = np.arange(curve.insertion_confidences.shape[0], dtype=np.float64)
    return spearman(curve.insertion_confidences, steps)


def aggregate_token_scores(
    token_scores: Sequence[Sequence[float]],
    document: Document | None = None,
    mode: str = "mean",
) -> np.ndarray:
    """Collapse per-token attribution scores to per-sentence scores.

    ``mean`` is the default aggregation; ``max`` and ``sum`` are available
    as the documented alternatives.
    """
    if document is not None:
        counts = [len(span.tokens) for span in document.sentences]
        got = [len(s) for s in token_scores]
        if got != counts:
            raise ShapeMismatch(
                f"token score lengths {got} do not match sentence token counts {counts}"
            )
    reducers = {"mean": np.mean, "max": np.max, "sum": np.sum}
    if mode not in reducers:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    for s in token_scores:
        if len(s) == 0:
            raise ShapeMismatch("cannot aggregate an empty token score vector")
    return np.array([float(reducers[mode](np.asarray(s, dtype=np.float64)))
                     for s in token_scores])


def fidelity_accuracy(
    surrogate_labels: Sequence[int], documents: Sequence[Document]
) -> float:
    """Fraction of documents where the surrogate matches the target label."""
    if len(surrogate_labels) != len(documents):
        raise ShapeMismatch(
            f"{len(surrogate_labels)} labels for {len(documents)} documents"
        )
    if not documents:
        raise EmptyDataset("fidelity over zero documents")
    agree = 0
    for predicted, doc in zip(surrogate_labels, documents):
        if doc.label is None:
            raise ValueError(f"document {doc.id!r} carries no target label")
        agree += int(predicted == doc.label)
    return agree / len(documents)


@dataclass
class DocumentMetrics:
    doc_id: str
    num_sentences: int
    comp_drop: float
    comp_paper_literal: float
    suff_drop: float
    suff_paper_literal: float
    dff: float
    dfs: int
    deletion: float | None = None
    deletion_degenerate: bool = False
    insertion: float | None = None
    insertion_degenerate: bool = False
    excluded_del_ins: bool = False


@dataclass
class FaithfulnessReport:
    """Dataset-level means for one (predictor, explainer, dataset) triple."""

    variant: str
    accuracy: float | None
    comprehensiveness: float
    sufficiency: float
    dff: float
    dfs: float
    deletion: float | None
    insertion: float | None
    comprehensiveness_other_variant: float
    sufficiency_other_variant: float
    excluded_del_ins: int
    per_document: list[DocumentMetrics] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "accuracy": self.accuracy,
            "comprehensiveness": self.comprehensiveness,
            "sufficiency": self.sufficiency,
            "dff": self.dff,
            "dfs": self.dfs,
            "deletion": self.deletion,
            "insertion": self.insertion,
            "comprehensiveness_other_variant": self.comprehensiveness_other_variant,
            "sufficiency_other_variant": self.sufficiency_other_variant,
            "excluded_del_ins": self.excluded_del_ins,
            "per_document": [
                {
                    "doc_id": m.doc_id,
                    "num_sentences": m.num_sentences,
                    "comprehensiveness": m.comp_drop if self.variant == "drop"
                                         else m.comp_paper_literal,
                    "sufficiency": m.suff_drop if self.variant == "drop"
                                   else m.suff_paper_literal,
                    "dff": m.dff,
                    "dfs": m.dfs,
                    "deletion": m.deletion,
                    "deletion_degenerate": m.deletion_degenerate,
                    "insertion": m.insertion,
                    "insertion_degenerate": m.insertion_degenerate,
                    "excluded_del_ins": m.excluded_del_ins,
                }
                for m in self.per_document
            ],
        }

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow([
            "doc_id", "num_sentences", "comprehensiveness", "sufficiency",
            "dff", "dfs", "deletion", "insertion", "excluded_del_ins",
        ])
        for m in self.per_document:
            comp = m.comp_drop if self.variant == "drop" else m.comp_paper_literal
            suff = m.suff_drop if self.variant == "drop" else m.suff_paper_literal
            writer.writerow([
                m.doc_id, m.num_sentences, f"{comp:.10g}", f"{suff:.10g}",
                f"{m.dff:.10g}", m.dfs,
                "" if m.deletion is None else f"{m.deletion:.10g}",
                "" if m.insertion is None else f"{m.insertion:.10g}",
                int(m.excluded_del_ins),
            ])
        writer.writerow([
            "summary", len(self.per_document),
            f"{self.comprehensiveness:.10g}", f"{self.sufficiency:.10g}",
            f"{self.dff:.10g}", f"{self.dfs:.10g}",
            "" if self.deletion is None else f"{self.deletion:.10g}",
            "" if self.insertion is None else f"{self.insertion:.10g}",
            self.excluded_del_ins,
        ])
        return buffer.getvalue()


def evaluate_document(
    predictor: Predictor,
    document: Document,
    scores: Sequence[float],
    variant: str = "drop",
) -> DocumentMetrics:
    """All per-document metrics through one shared perturbation cache."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if len(scores) != len(document.sentences):
        raise ShapeMismatch(
            f"{len(scores)} importance scores for {len(document.sentences)} sentences"
        )
    order = importance_order(scores)
    length = len(order)
    cache = CachingPredictor(predictor)
    include_del = length >= 2
    curve = build_curve(cache, document, order, include_deletions=include_del)

    comp_drop = comprehensiveness(predictor, document, order, "drop", curve=curve)
    suff_drop = sufficiency(predictor, document, order, "drop", curve=curve)
    metrics = DocumentMetrics(
        doc_id=document.id,
        num_sentences=length,
        comp_drop=comp_drop,
        comp_paper_literal=1.0 - comp_drop,
        suff_drop=suff_drop,
        suff_paper_literal=1.0 - suff_drop,
        dff=decision_flip_fraction(predictor, document, order, curve=curve),
        dfs=decision_flip_most_important(predictor, document, order, curve=curve),
    )
    if include_del:
        metrics.deletion, metrics.deletion_degenerate = deletion_rank_correlation(
            predictor, document, scores, curve=curve
        )
        metrics.insertion, metrics.insertion_degenerate = insertion_rank_correlation(
            predictor, document, order, curve=curve
        )
    else:
        metrics.excluded_del_ins = True
    return metrics


def evaluate_explainer(
    predictor: Predictor,
    documents: Sequence[Document],
    importance: Callable[[Document], Sequence[float]],
    variant: str = "drop",
    accuracy: float | None = None,
) -> FaithfulnessReport:
    """Average the per-document metrics over a dataset.

    ``importance`` maps a document to its claimed per-sentence scores
    (surrogate explanations or file-supplied attributions).  Documents
    with fewer than two sentences are excluded from Del/Ins and tallied.
    """
    if not documents:
        raise EmptyDataset("no documents to evaluate")
    per_document = [
        evaluate_document(predictor, doc, importance(doc), variant)
        for doc in documents
    ]
    dels = [m.deletion for m in per_document if m.deletion is not None]
    inss = [m.insertion for m in per_document if m.insertion is not None]
    comp_drop = float(np.mean([m.comp_drop for m in per_document]))
    suff_drop = float(np.mean([m.suff_drop for m in per_document]))
    if variant == "drop":
        comp, comp_other = comp_drop, 1.0 - comp_drop
        suff, suff_other = suff_drop, 1.0 - suff_drop
    else:
        comp, comp_other = 1.0 - comp_drop, comp_drop
        suff, suff_other = 1.0 - suff_drop, suff_drop
    return FaithfulnessReport(
        variant=variant,
        accuracy=accuracy,
        comprehensiveness=comp,
        sufficiency=suff,
        dff=float(np.mean([m.dff for m in per_document])),
        dfs=float(np.mean([m.dfs for m in per_document])),
        deletion=float(np.mean(dels)) if dels else None,
        insertion=float(np.mean(inss)) if inss else None,
        comprehensiveness_other_variant=comp_other,
        sufficiency_other_variant=suff_other,
        excluded_del_ins=sum(m.excluded_del_ins for m in per_document),
        per_document=per_document,
    )
