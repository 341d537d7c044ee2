"""Attribution-aware sentence encoding.

Turns one sentence's token embeddings E (l, d) and normalized attribution
scores r_hat (l,) into a single sentence embedding h (d,) via a learned
single-head self-attention pass:

    S = (E Wq)(E Wk)^T / sqrt(d) + r_hat      (r_hat broadcast over rows)
    A = rowsoftmax(S)
    C = A (E Wv)                              contextual token embeddings
    alpha = softmax(column means of A)        token importance weights
    h = sum_j alpha_j C_j                     weighted pooling

The attribution bias is added to key column j of every query row, so
tokens the target model relied on receive more attention.  Passing
``r_hat=None`` omits the bias entirely (bit-identical to a zero vector),
which is the ablation switch for running without attributions.

Parameters are stored float32; all math runs in float64.  The analytic
backward pass for Wq/Wk/Wv is implemented by hand and checked against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch


@dataclass
class AttentionParams:
    """Learned d x d projections for the guided self-attention pass."""

    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray

    def __post_init__(self) -> None:
        d = self.w_query.shape[0]
        for name in ("w_query", "w_key", "w_value"):
            m = getattr(self, name)
            if m.ndim != 2 or m.shape != (d, d):
                raise ShapeMismatch(f"{name} must be ({d}, {d}), got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ShapeMismatch(f"{name} contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.w_query.shape[0])

    def astype(self, dtype) -> "AttentionParams":
        return AttentionParams(
            w_query=self.w_query.astype(dtype),
            w_key=self.w_key.astype(dtype),
            w_value=self.w_value.astype(dtype),
        )


@dataclass
class SentenceEncoding:
    """Forward-pass products for one sentence."""

    attention: np.ndarray       # (l, l) row-stochastic
    contextual: np.ndarray      # (l, d)
    token_weights: np.ndarray   # (l,) sums to 1
    embedding: np.ndarray       # (d,)


def init_attention_params(dim: int, rng: np.random.Generator) -> AttentionParams:
    """Symmetric-uniform init, scale sqrt(6 / (2 d)), stored float32."""
    bound = np.sqrt(6.0 / (2.0 * dim))
    def draw() -> np.ndarray:
        return rng.uniform(-bound, bound, size=(dim, dim)).astype(np.float32)
    return AttentionParams(w_query=draw(), w_key=draw(), w_value=draw())


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction for overflow safety."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def normalize_attributions(scores: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Clamp raw token attribution scores at zero and normalize.

    r_hat_j = max(r_j, 0) / (sum_j' max(r_j', 0) + eps).  All outputs lie in
    [0, 1] and sum to at most 1; an all-zero (or all-negative) input stays
    all-zero thanks to the eps guard.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ShapeMismatch("attribution scores must be finite")
    clamped = np.maximum(scores, 0.0)
    return clamped / (clamped.sum() + eps)


def attend(
    embeddings: np.ndarray,
    attributions_hat: np.ndarray | None,
    params: AttentionParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the guided self-attention pass for one sentence.

    Returns (A, C): the (l, l) attention matrix and (l, d) contextual
    embeddings.  ``attributions_hat=None`` skips the bias term.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise ShapeMismatch(f"embeddings must be 2-d, got shape {e.shape}")
    length, dim = e.shape
    if dim != params.dim:
        raise ShapeMismatch(f"embedding dim {dim} != parameter dim {params.dim}")

    wq = params.w_query.astype(np.float64)
    wk = params.w_key.astype(np.float64)
    wv = params.w_value.astype(np.float64)

    scores = (e @ wq) @ (e @ wk).T / np.sqrt(dim)          # (l, l)
    if attributions_hat is not None:
        r = np.asarray(attributions_hat, dtype=np.float64)
        if r.shape != (length,):
            raise ShapeMismatch(f"attributions shape {r.shape} != ({length},)")
        scores = scores + r[None, :]                       # bias key column j in every row
    attention = softmax(scores, axis=1)
    contextual = attention @ (e @ wv)                      # (l, d)
    return attention, contextual


def token_importance(attention: np.ndarray) -> np.ndarray:
    """Softmax over the per-column means of the attention matrix.

    Column j's mean is how much attention token j receives on average over
    all source positions; the softmax turns those means into weights that
    sum to 1.
    """
    means = np.asarray(attention, dtype=np.float64).mean(axis=0)
    return softmax(means)


def pool(token_weights: np.ndarray, contextual: np.ndarray) -> np.ndarray:
    """Weighted sum of contextual token embeddings: h = sum_j alpha_j c_j."""
    alpha = np.asarray(token_weights, dtype=np.float64)
    c = np.asarray(contextual, dtype=np.float64)
    if alpha.shape[0] != c.shape[0]:
        raise ShapeMismatch(f"{alpha.shape[0]} weights for {c.shape[0]} rows")
    return alpha @ c


def encode_sentence(
    embeddings: np.ndarray,
    attributions_hat: np.ndarray | None,
    params: AttentionParams,
) -> SentenceEncoding:
    """Full forward pass for one sentence."""
    attention, contextual = attend(embeddings, attributions_hat, params)
    alpha = token_importance(attention)
    h = pool(alpha, contextual)
    return SentenceEncoding(
        attention=attention, contextual=contextual, token_weights=alpha, embedding=h
    )


class _ForwardCache:
    """Intermediates kept alive between forward and backward."""

    __slots__ = ("e", "q", "k", "v", "attention", "contextual", "alpha", "scale")

    def __init__(self, e, q, k, v, attention, contextual, alpha, scale):
        self.e = e
        self.q = q
        self.k = k
        self.v = v
        self.attention = attention
        self.contextual = contextual
        self.alpha = alpha
        self.scale = scale


def _forward_with_cache(
    embeddings: np.ndarray,
    attributions_hat: np.ndarray | None,
    params: AttentionParams,
) -> tuple[SentenceEncoding, _ForwardCache]:
    e = np.asarray(embeddings, dtype=np.float64)
    length, dim = e.shape
    if dim != params.dim:
        raise ShapeMismatch(f"embedding dim {dim} != parameter dim {params.dim}")
    wq = params.w_query.astype(np.float64)
    wk = params.w_key.astype(np.float64)
    wv = params.w_value.astype(np.float64)

    q = e @ wq
    k = e @ wk
    v = e @ wv
    scale = 1.0 / np.sqrt(dim)
    scores = q @ k.T * scale
    if attributions_hat is not None:
        scores = scores + np.asarray(attributions_hat, dtype=np.float64)[None, :]
    attention = softmax(scores, axis=1)
    contextual = attention @ v
    alpha = softmax(attention.mean(axis=0))
    h = alpha @ contextual
    enc = SentenceEncoding(
        attention=attention, contextual=contextual, token_weights=alpha, embedding=h
    )
    return enc, _ForwardCache(e, q, k, v, attention, contextual, alpha, scale)


def _backward_from_cache(
    cache: _ForwardCache, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagate dL/dh through the pass; returns (dWq, dWk, dWv)."""
    g = np.asarray(upstream, dtype=np.float64)            # (d,)
    a = cache.attention                                    # (l, l)
    length = a.shape[0]

    # h = alpha @ C
    d_alpha = cache.contextual @ g                         # (l,)
    d_contextual = np.outer(cache.alpha, g)                # (l, d)

    # alpha = softmax(m), m = column means of A
    d_means = cache.alpha * (d_alpha - cache.alpha @ d_alpha)
    # C = A V; m_j = mean_k A[k, j]
    d_attention = d_contextual @ cache.v.T + d_means[None, :] / length

    # rowwise softmax backward: dS[k] = A[k] * (dA[k] - A[k].dA[k])
    d_scores = a * (d_attention - np.sum(a * d_attention, axis=1, keepdims=True))

    d_q = d_scores @ cache.k * cache.scale
    d_k = d_scores.T @ cache.q * cache.scale
    d_v = a.T @ d_contextual

    grad_wq = cache.e.T @ d_q
    grad_wk = cache.e.T @ d_k
    grad_wv = cache.e.T @ d_v
    for name, grad in (("w_query", grad_wq), ("w_key", grad_wk), ("w_value", grad_wv)):
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"gradient for {name} is not finite")
    return grad_wq, grad_wk, grad_wv


def encode_sentence_with_grads(
    embeddings: np.ndarray,
    attributions_hat: np.ndarray | None,
    params: AttentionParams,
    upstream: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Forward plus analytic gradients of (upstream . h) w.r.t. Wq, Wk, Wv.

    Returns (h, dWq, dWk, dWv).
    """
    if not np.all(np.isfinite(np.asarray(upstream, dtype=np.float64))):
        raise NonFiniteGradient("upstream gradient is not finite")
    enc, cache = _forward_with_cache(embeddings, attributions_hat, params)
    grad_wq, grad_wk, grad_wv = _backward_from_cache(cache, upstream)
    return enc.embedding, grad_wq, grad_wk, grad_wv
