"""Prototype set, linear head, and the interpretable prediction path.

A sentence embedding h activates each prototype p_k by cosine similarity
a_k = cos(h, p_k).  A bias-free linear head maps the activation vector to
per-sentence class logits; document logits are the plain sum of sentence
logits.  Because there is no bias anywhere, the document logit for class c
decomposes exactly into the K x M contribution terms a[i,k] * W[c,k],
which is what makes the explanations additive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, TooFewPoints, ZeroVector

_ZERO_NORM_TOL = 1e-12
_MAX_LLOYD_ITERATIONS = 100


@dataclass
class PrototypeAssociation:
    """The training sentence nearest to one prototype."""

    doc_id: str
    sentence_index: int
    similarity: float
    text: str = ""


@dataclass
class PrototypeSet:
    """K prototype embeddings, optionally frozen after initialization."""

    vectors: np.ndarray                                   # (K, d)
    trainable: bool = True
    associations: list[PrototypeAssociation] = field(default_factory=list)

    def __post_init__(self) -> None:
        v = self.vectors
        if v.ndim != 2 or v.shape[0] < 2:
            raise ShapeMismatch(f"prototype matrix must be (K>=2, d), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("prototype matrix contains non-finite entries")
        norms = np.linalg.norm(np.asarray(v, dtype=np.float64), axis=1)
        if np.any(norms <= 1e-8):
            raise ShapeMismatch("prototype rows must have norm > 1e-8")

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass
class LinearHead:
    """Bias-free class weights over prototype activations, shape (C, K)."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.ndim != 2:
            raise ShapeMismatch(f"head weights must be (C, K), got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ShapeMismatch("head weights contain non-finite entries")

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class PredictionBreakdown:
    """Everything needed to audit one document prediction.

    contributions[i, k, c] = activations[i, k] * W[c, k]; summing the block
    over (i, k) reproduces document_logits[c] (float64, within 1e-9).
    """

    activations: np.ndarray        # (M, K)
    sentence_logits: np.ndarray    # (M, C)
    document_logits: np.ndarray    # (C,)
    contributions: np.ndarray      # (M, K, C)
    predicted_class: int


def kmeans_init(
    embeddings: np.ndarray, num_prototypes: int, rng: np.random.Generator | int
) -> PrototypeSet:
    """Initialize prototypes as K-means centers of the sentence embeddings.

    Seeding is k-means++ from the given generator (or seed), followed by
    Lloyd iteration until the assignment reaches a fixpoint or 100 rounds.
    Empty clusters are re-seeded from the point farthest from its center.
    Deterministic for a fixed seed.

    Raises:
        TooFewPoints: fewer than ``num_prototypes`` distinct embeddings.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    points = np.asarray(embeddings, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeMismatch(f"embeddings must be (N, d), got {points.shape}")
    distinct = np.unique(points, axis=0).shape[0]
    if distinct < num_prototypes:
        raise TooFewPoints(
            f"{distinct} distinct embeddings for {num_prototypes} prototypes"
        )

    centers = _kmeans_plus_plus(points, num_prototypes, rng)
    assignment = _assign(points, centers)
    for _ in range(_MAX_LLOYD_ITERATIONS):
        centers = _update_centers(points, centers, assignment)
        new_assignment = _assign(points, centers)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    return PrototypeSet(vectors=centers.astype(np.float32))


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    closest_sq = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            # All remaining mass is on already-chosen points; pick any unseen one.
            candidates = np.flatnonzero(~_rows_equal_any(points, centers[:i]))
            centers[i] = points[candidates[0]]
        else:
            idx = rng.choice(n, p=closest_sq / total)
            centers[i] = points[idx]
        closest_sq = np.minimum(closest_sq, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def _rows_equal_any(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.array([np.any(np.all(centers == p, axis=1)) for p in points])


def _assign(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin takes the lowest index on ties, keeping assignment deterministic.
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def _update_centers(
    points: np.ndarray, centers: np.ndarray, assignment: np.ndarray
) -> np.ndarray:
    k = centers.shape[0]
    new_centers = centers.copy()
    for c in range(k):
        members = points[assignment == c]
        if members.shape[0] == 0:
            # Re-seed an empty cluster from the globally farthest point.
            own = centers[assignment]
            residual = np.sum((points - own) ** 2, axis=1)
            new_centers[c] = points[int(np.argmax(residual))]
        else:
            new_centers[c] = members.mean(axis=0)
    return new_centers


def kmeans_inertia(points: np.ndarray, centers: np.ndarray) -> float:
    """Sum of squared distances to the nearest center (test oracle aid)."""
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    return float(d2.min(axis=1).sum())


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu <= _ZERO_NORM_TOL or nv <= _ZERO_NORM_TOL:
        raise ZeroVector("cosine of a zero-norm vector is undefined")
    return float(u @ v / (nu * nv))


def activations(h: np.ndarray, prototypes: PrototypeSet) -> np.ndarray:
    """Cosine similarity of one sentence embedding to every prototype."""
    h = np.asarray(h, dtype=np.float64)
    norm_h = np.linalg.norm(h)
    if norm_h <= _ZERO_NORM_TOL:
        raise ZeroVector("sentence embedding has (near-)zero norm")
    p = prototypes.vectors.astype(np.float64)
    return (p @ h) / (np.linalg.norm(p, axis=1) * norm_h)


def cosine_grads(h: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """d cos(h, p) / dh and / dp, plus the cosine itself.

    With unit directions h^ = h/|h| and p^ = p/|p|:
        d/dh = (p^ - cos * h^) / |h|,   d/dp = (h^ - cos * p^) / |p|.
    """
    h = np.asarray(h, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    norm_h = np.linalg.norm(h)
    norm_p = np.linalg.norm(p)
    if norm_h <= _ZERO_NORM_TOL or norm_p <= _ZERO_NORM_TOL:
        raise ZeroVector("cosine gradient of a zero-norm vector is undefined")
    h_hat = h / norm_h
    p_hat = p / norm_p
    cos = float(h_hat @ p_hat)
    return (p_hat - cos * h_hat) / norm_h, (h_hat - cos * p_hat) / norm_p, cos


def associate_nearest(
    prototypes: PrototypeSet,
    sentences: list[tuple[str, int, np.ndarray, str]],
) -> list[PrototypeAssociation]:
    """Find each prototype's most-similar corpus sentence by cosine.

    ``sentences`` holds (doc_id, sentence_index, embedding, text) records.
    Ties are broken by the lowest (doc_id, sentence_index) pair so the
    association is deterministic.
    """
    if not sentences:
        raise ValueError("corpus must contain at least one sentence")
    result: list[PrototypeAssociation] = []
    for k in range(prototypes.count):
        p = prototypes.vectors[k].astype(np.float64)
        best: PrototypeAssociation | None = None
        for doc_id, index, embedding, text in sentences:
            sim = cosine(np.asarray(embedding, dtype=np.float64), p)
            if (
                best is None
                or sim > best.similarity
                or (sim == best.similarity and (doc_id, index) < (best.doc_id, best.sentence_index))
            ):
                best = PrototypeAssociation(
                    doc_id=doc_id, sentence_index=index, similarity=sim, text=text
                )
        assert best is not None
        result.append(best)
    return result


def predict_document(
    encodings: list[np.ndarray] | np.ndarray,
    prototypes: PrototypeSet,
    head: LinearHead,
) -> PredictionBreakdown:
    """Aggregate per-sentence prototype activations into document logits.

    Sentence logits are W a_i; document logits are their sum over sentences;
    the predicted class is the argmax with the lowest index on ties.
    """
    hs = np.asarray(encodings, dtype=np.float64)
    if hs.ndim != 2 or hs.shape[0] < 1:
        raise ShapeMismatch(f"need (M>=1, d) sentence embeddings, got {hs.shape}")
    if head.weights.shape[1] != prototypes.count:
        raise ShapeMismatch(
            f"head expects {head.weights.shape[1]} prototypes, set has {prototypes.count}"
        )

    acts = np.stack([activations(h, prototypes) for h in hs])          # (M, K)
    weights = head.weights.astype(np.float64)                          # (C, K)
    sentence_logits = acts @ weights.T                                 # (M, C)
    document_logits = sentence_logits.sum(axis=0)                      # (C,)
    contributions = acts[:, :, None] * weights.T[None, :, :]           # (M, K, C)
    return PredictionBreakdown(
        activations=acts,
        sentence_logits=sentence_logits,
        document_logits=document_logits,
        contributions=contributions,
        predicted_class=int(np.argmax(document_logits)),
    )
