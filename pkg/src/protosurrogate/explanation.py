"""Human-readable explanation artifacts for one document prediction.

An explanation grounds every sentence in the prototypes it activates:
each (sentence, prototype) pair carries the cosine similarity, the head
weight for the predicted class, and their product — the pair's exact
contribution to the predicted-class logit.  Because the head has no bias,
the full K x M contribution grid sums to the document logit, so nothing
shown to the user is approximate; top-k truncation affects display only.
"""

from __future__ import annotations

import html as html_lib
import json
from dataclasses import dataclass, field

import numpy as np

from .data_io import AttributionBundle, EmbeddingBundle, canonical_json
from .errors import UnknownFormat
from .prototypes import PredictionBreakdown
from .segmentation import Document
from .surrogate import SurrogateModel, class_probabilities

REPORT_SCHEMA_VERSION = 1


@dataclass
class PrototypeMatch:
    prototype_index: int
    similarity: float
    class_weight: float
    contribution: float            # similarity * weight, signed, never clipped
    exemplar_doc_id: str | None = None
    exemplar_text: str | None = None


@dataclass
class SentenceExplanation:
    index: int
    text: str
    importance: float              # total contribution to the predicted class
    matches: list[PrototypeMatch] = field(default_factory=list)


@dataclass
class Explanation:
    doc_id: str
    predicted_class: int
    class_scores: list[float]               # raw document logits
    class_probabilities: list[float]        # softmax readout of the logits
    sentences: list[SentenceExplanation]
    prototype_totals: list[float]           # per-prototype similarity summed over sentences
    breakdown: PredictionBreakdown

    def sentence_importance(self) -> list[float]:
        return [s.importance for s in self.sentences]

    def sentence_importance_normalized(self) -> list[float]:
        """Importance scaled by the total absolute importance (signs kept).

        A one-sentence document with a positive contribution reads [1.0];
        an all-zero head leaves the vector all zero.
        """
        scores = self.sentence_importance()
        denom = sum(abs(s) for s in scores)
        if denom == 0.0:
            return [0.0 for _ in scores]
        return [s / denom for s in scores]


def explain(
    document: Document,
    model: SurrogateModel,
    bundle: EmbeddingBundle,
    attributions: AttributionBundle | None = None,
    top_k: int = 3,
) -> Explanation:
    """Predict a document and decompose the result per sentence.

    Within each sentence, prototypes are ranked by |contribution to the
    predicted class| and truncated to ``top_k``; the untruncated breakdown
    is kept on the result so the additivity invariant stays checkable.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    breakdown = model.predict_bundle(bundle, attributions)
    predicted = breakdown.predicted_class
    contributions = breakdown.contributions[:, :, predicted]       # (M, K)

    associations = model.prototypes.associations
    sentences = []
    for i, span in enumerate(document.sentences):
        ranked = sorted(
            range(model.num_prototypes),
            key=lambda k: (-abs(contributions[i, k]), k),
        )[:top_k]
        matches = []
        for k in ranked:
            exemplar = associations[k] if k < len(associations) else None
            matches.append(PrototypeMatch(
                prototype_index=k,
                similarity=float(breakdown.activations[i, k]),
                class_weight=float(model.head.weights[predicted, k]),
                contribution=float(contributions[i, k]),
                exemplar_doc_id=exemplar.doc_id if exemplar else None,
                exemplar_text=exemplar.text if exemplar else None,
            ))
        sentences.append(SentenceExplanation(
            index=i,
            text=span.text_of(document.text),
            importance=float(contributions[i].sum()),
            matches=matches,
        ))

    return Explanation(
        doc_id=document.id,
        predicted_class=predicted,
        class_scores=[float(v) for v in breakdown.document_logits],
        class_probabilities=[
            float(v) for v in class_probabilities(breakdown.document_logits)
        ],
        sentences=sentences,
        prototype_totals=[float(v) for v in breakdown.activations.sum(axis=0)],
        breakdown=breakdown,
    )


def sentence_importance(explanation: Explanation) -> list[int]:
    """Sentence ranking, most important first; ties go to the lower index."""
    scores = explanation.sentence_importance()
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def render_report(explanation: Explanation, format: str = "json") -> bytes:
    """Serialize an explanation as canonical JSON or a self-contained HTML page."""
    if format == "json":
        return canonical_json(_report_dict(explanation))
    if format == "html":
        return _render_html(explanation).encode("utf-8")
    raise UnknownFormat(f"unsupported report format {format!r}")


def _report_dict(explanation: Explanation) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "doc_id": explanation.doc_id,
        "predicted_class": explanation.predicted_class,
        "class_scores": explanation.class_scores,
        "class_probabilities": explanation.class_probabilities,
        "prototype_totals": explanation.prototype_totals,
        "sentence_ranking": sentence_importance(explanation),
        "sentence_importance": explanation.sentence_importance(),
        "sentence_importance_normalized": explanation.sentence_importance_normalized(),
        "sentences": [
            {
                "index": s.index,
                "text": s.text,
                "importance": s.importance,
                "matches": [
                    {
                        "prototype": m.prototype_index,
                        "similarity": m.similarity,
                        "class_weight": m.class_weight,
                        "contribution": m.contribution,
                        "exemplar_doc_id": m.exemplar_doc_id,
                        "exemplar_text": m.exemplar_text,
                    }
                    for m in s.matches
                ],
            }
            for s in explanation.sentences
        ],
    }


_HTML_STYLE = """
body { font-family: sans-serif; margin: 2em auto; max-width: 46em; color: #222; }
h1 { font-size: 1.3em; } h2 { font-size: 1.05em; margin-bottom: 0.2em; }
.score { color: #555; } .pos { color: #0a6b23; } .neg { color: #a11; }
table { border-collapse: collapse; margin: 0.4em 0 1em; }
td, th { border: 1px solid #ccc; padding: 0.25em 0.6em; font-size: 0.92em; }
.exemplar { color: #666; font-style: italic; }
""".strip()


def _render_html(explanation: Explanation) -> str:
    esc = html_lib.escape
    rows = []
    rows.append("<!DOCTYPE html><html><head><meta charset='utf-8'>")
    rows.append(f"<title>Explanation {esc(explanation.doc_id)}</title>")
    rows.append(f"<style>{_HTML_STYLE}</style></head><body>")
    rows.append(f"<h1>Document {esc(explanation.doc_id)} &mdash; predicted class "
                f"{explanation.predicted_class}</h1>")
    scores = ", ".join(
        f"class {c}: {s:.4f} (p={p:.4f})"
        for c, (s, p) in enumerate(zip(explanation.class_scores,
                                       explanation.class_probabilities))
    )
    rows.append(f"<p class='score'>{esc(scores)}</p>")
    for s in explanation.sentences:
        rows.append(f"<h2>Sentence {s.index}: {esc(s.text)}</h2>")
        rows.append(f"<p class='score'>importance {s.importance:+.4f}</p>")
        rows.append("<table><tr><th>prototype</th><th>similarity</th>"
                    "<th>weight</th><th>contribution</th><th>exemplar</th></tr>")
        for m in s.matches:
            cls = "pos" if m.contribution >= 0 else "neg"
            exemplar = esc(m.exemplar_text) if m.exemplar_text else "&mdash;"
            rows.append(
                f"<tr><td>{m.prototype_index}</td><td>{m.similarity:.4f}</td>"
                f"<td>{m.class_weight:+.4f}</td>"
                f"<td class='{cls}'>{m.contribution:+.4f}</td>"
                f"<td class='exemplar'>{exemplar}</td></tr>"
            )
        rows.append("</table>")
    rows.append("</body></html>")
    return "\n".join(rows)


def check_additivity(explanation: Explanation, tolerance: float = 1e-9) -> float:
    """Max |sum of contributions - document logit| over classes (test hook)."""
    sums = explanation.breakdown.contributions.sum(axis=(0, 1))
    gap = np.abs(sums - explanation.breakdown.document_logits).max()
    if gap > tolerance:
        raise AssertionError(f"additivity violated by {gap}")
    return float(gap)
