"""Distillation training: the multi-objective loss and its optimizer loop.

The loss for a batch is

    L = mean-CE(document logits, target label)
        + lambda_proto * (-1/K sum_k max_i cos(h_i, p_k))
        + lambda_div   * (1/(K(K-1)) sum_{i != j} |p_i . p_j|)

where the max in the prototype-coverage term runs over the sentences of
the current mini-batch and the labels are the target model's predictions,
never gold annotations.  All gradients (attention projections, head,
prototypes) are computed analytically in float64 and are checked against
central finite differences by the test suite.  Optimization is AdamW with
decoupled weight decay; runs are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data_io import AttributionBundle, EmbeddingBundle
from .encoder import (
    AttentionParams,
    _backward_from_cache,
    _forward_with_cache,
    encode_sentence,
    init_attention_params,
)
from .errors import (
    DivergedLoss,
    LabelOutOfRange,
    MissingBundle,
    ShapeMismatch,
    TokenizerMismatch,
    ZeroVector,
)
from .prototypes import LinearHead, PrototypeSet, associate_nearest, kmeans_init
from .segmentation import Document
from .surrogate import SurrogateModel

logger = logging.getLogger(__name__)

ADAMW_BETA1 = 0.9
ADAMW_BETA2 = 0.999
ADAMW_EPS = 1e-8
ADAMW_WEIGHT_DECAY = 0.01

_ZERO_NORM_TOL = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 2e-2
    batch_size: int = 16
    epochs: int = 10
    num_prototypes: int = 20
    lambda_proto: float = 0.1
    lambda_diversity: float = 0.1
    eps: float = 1e-9
    seed: int = 0
    use_attributions: bool = True
    update_prototypes: bool = True
    num_classes: int | None = None       # inferred from labels when None
    diversity_normalized: bool = False   # overlap between unit directions instead of raw dots

    def validate(self) -> None:
        if self.lambda_proto < 0 or self.lambda_diversity < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.num_prototypes < 2:
            raise ValueError("need at least 2 prototypes")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "num_prototypes": self.num_prototypes,
            "lambda_proto": self.lambda_proto,
            "lambda_diversity": self.lambda_diversity,
            "eps": self.eps,
            "seed": self.seed,
            "use_attributions": self.use_attributions,
            "update_prototypes": self.update_prototypes,
            "num_classes": self.num_classes,
            "diversity_normalized": self.diversity_normalized,
        }


@dataclass
class TrainExample:
    document: Document
    bundle: EmbeddingBundle
    label: int
    attributions: AttributionBundle | None = None


@dataclass
class EpochStats:
    cross_entropy: float
    prototype: float
    diversity: float
    total: float
    fidelity: float | None
    wall_clock_seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    num_documents: int = 0
    num_classes: int = 0

    def to_json_dict(self, include_timings: bool = False) -> dict:
        epochs = []
        for e in self.epochs:
            entry = {
                "cross_entropy": e.cross_entropy,
                "prototype": e.prototype,
                "diversity": e.diversity,
                "total": e.total,
                "fidelity": e.fidelity,
            }
            if include_timings:
                entry["wall_clock_seconds"] = e.wall_clock_seconds
            epochs.append(entry)
        return {
            "num_documents": self.num_documents,
            "num_classes": self.num_classes,
            "epochs": epochs,
        }


@dataclass
class LossComponents:
    cross_entropy: float
    prototype: float
    diversity: float
    total: float

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.total))


# --- individual loss terms -----------------------------------------------------

def ce_loss(logits: np.ndarray, label: int) -> float:
    """Cross entropy -log softmax(logits)[label], max-subtracted."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[0]:
        raise LabelOutOfRange(f"label {label} outside [0, {z.shape[0]})")
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()) - z[label])


def proto_loss(sentence_embeddings: np.ndarray, prototypes: np.ndarray) -> float:
    """-1/K sum_k max_i cos(h_i, p_k); lies in [-1, 1]."""
    cos = _cosine_matrix(sentence_embeddings, prototypes)
    return float(-cos.max(axis=0).mean())


def diversity_loss(prototypes: np.ndarray, normalized: bool = False) -> float:
    """Mean absolute pairwise overlap 1/(K(K-1)) sum_{i!=j} |p_i . p_j|.

    ``normalized=True`` measures overlap between unit directions instead
    of raw vectors.
    """
    p = np.asarray(prototypes, dtype=np.float64)
    k = p.shape[0]
    if k < 2:
        raise ShapeMismatch("diversity needs at least two prototypes")
    if normalized:
        p = p / np.linalg.norm(p, axis=1, keepdims=True)
    gram = np.abs(p @ p.T)
    np.fill_diagonal(gram, 0.0)
    return float(gram.sum() / (k * (k - 1)))


def _cosine_matrix(hs: np.ndarray, ps: np.ndarray) -> np.ndarray:
    hs = np.asarray(hs, dtype=np.float64)
    ps = np.asarray(ps, dtype=np.float64)
    h_norm = np.linalg.norm(hs, axis=1)
    p_norm = np.linalg.norm(ps, axis=1)
    if np.any(h_norm <= _ZERO_NORM_TOL) or np.any(p_norm <= _ZERO_NORM_TOL):
        raise ZeroVector("cosine against a zero-norm vector")
    return (hs / h_norm[:, None]) @ (ps / p_norm[:, None]).T


def _diversity_grad(protos: np.ndarray, normalized: bool) -> np.ndarray:
    """Gradient of diversity_loss w.r.t. the prototype matrix.

    |x| contributes subgradient 0 at x = 0 (np.sign(0) == 0).
    """
    k = protos.shape[0]
    scale = 2.0 / (k * (k - 1))
    if not normalized:
        signs = np.sign(protos @ protos.T)
        np.fill_diagonal(signs, 0.0)
        return scale * (signs @ protos)
    p_norm = np.linalg.norm(protos, axis=1)
    p_hat = protos / p_norm[:, None]
    cos = p_hat @ p_hat.T
    signs = np.sign(cos)
    np.fill_diagonal(signs, 0.0)
    row = np.sum(signs * cos, axis=1)
    return scale * (signs @ p_hat - row[:, None] * p_hat) / p_norm[:, None]


# --- batch loss with analytic gradients ------------------------------------------

class _DocForward:
    __slots__ = ("caches", "embeddings")

    def __init__(self, caches, embeddings):
        self.caches = caches
        self.embeddings = embeddings


def _forward_document(example: TrainExample, model: SurrogateModel) -> _DocForward:
    if example.bundle is None:
        raise MissingBundle(f"document {example.document.id!r} has no embedding bundle")
    caches = []
    hs = []
    for i, matrix in enumerate(example.bundle.matrices):
        bias = model.sentence_bias(example.attributions, i, matrix.shape[0])
        enc, cache = _forward_with_cache(matrix, bias, model.attention)
        caches.append(cache)
        hs.append(enc.embedding)
    return _DocForward(caches, np.stack(hs))


def total_loss(
    batch: list[TrainExample],
    model: SurrogateModel,
    config: TrainConfig,
    threads: int = 1,
) -> tuple[LossComponents, dict[str, np.ndarray]]:
    """Loss over one batch plus analytic gradients for every parameter.

    Gradient keys: w_query, w_key, w_value, head, and prototypes (the last
    only when ``config.update_prototypes``).  Per-document passes may run
    on a thread pool; results are reduced in document order, so the output
    is identical for any thread count.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    batch_size = len(batch)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            forwards = list(pool.map(lambda ex: _forward_document(ex, model), batch))
    else:
        forwards = [_forward_document(ex, model) for ex in batch]

    doc_slices: list[slice] = []
    offset = 0
    for fwd in forwards:
        count = fwd.embeddings.shape[0]
        doc_slices.append(slice(offset, offset + count))
        offset += count
    hs = np.concatenate([f.embeddings for f in forwards], axis=0)       # (N, d)
    dim = hs.shape[1]

    protos = model.prototypes.vectors.astype(np.float64)                 # (K, d)
    weights = model.head.weights.astype(np.float64)                      # (C, K)
    num_prototypes = protos.shape[0]

    h_norm = np.linalg.norm(hs, axis=1)
    p_norm = np.linalg.norm(protos, axis=1)
    if np.any(h_norm <= _ZERO_NORM_TOL):
        raise ZeroVector("a pooled sentence embedding collapsed to zero norm")
    h_hat = hs / h_norm[:, None]
    p_hat = protos / p_norm[:, None]
    cos = h_hat @ p_hat.T                                                # (N, K)

    # Cross entropy over summed document logits, averaged over the batch.
    ce_sum = 0.0
    grad_head = np.zeros_like(weights)
    d_acts = np.zeros_like(cos)                                          # dL/da[i,k]
    for b, example in enumerate(batch):
        acts = cos[doc_slices[b]]                                        # (M, K)
        act_sum = acts.sum(axis=0)
        logits = weights @ act_sum
        ce_sum += ce_loss(logits, example.label)
        shifted = np.exp(logits - logits.max())
        dz = shifted / shifted.sum()
        dz[example.label] -= 1.0
        dz /= batch_size
        grad_head += np.outer(dz, act_sum)
        d_acts[doc_slices[b]] = (weights.T @ dz)[None, :]
    ce_mean = ce_sum / batch_size

    # Prototype coverage: argmax over the batch's sentences (first index wins).
    best_idx = np.argmax(cos, axis=0)                                    # (K,)
    proto_value = float(-cos[best_idx, np.arange(num_prototypes)].mean())

    div_value = diversity_loss(protos, normalized=config.diversity_normalized)
    total = ce_mean + config.lambda_proto * proto_value + config.lambda_diversity * div_value
    components = LossComponents(
        cross_entropy=ce_mean, prototype=proto_value, diversity=div_value, total=total
    )
    if not components.is_finite():
        # Let the caller abort with DivergedLoss; the backward pass would
        # only bury the signal under a gradient error.
        return components, {}

    # --- backward ---
    # Through the cosine activations (CE path).
    row_sum = np.sum(d_acts * cos, axis=1)
    d_hs = (d_acts @ p_hat - row_sum[:, None] * h_hat) / h_norm[:, None]
    d_protos = (d_acts.T @ h_hat - np.sum(d_acts * cos, axis=0)[:, None] * p_hat)
    d_protos /= p_norm[:, None]

    # Prototype-coverage path (subgradient at the argmax sentence).
    coeff = -config.lambda_proto / num_prototypes
    for k in range(num_prototypes):
        i = int(best_idx[k])
        c = cos[i, k]
        d_hs[i] += coeff * (p_hat[k] - c * h_hat[i]) / h_norm[i]
        d_protos[k] += coeff * (h_hat[i] - c * p_hat[k]) / p_norm[k]

    d_protos += config.lambda_diversity * _diversity_grad(protos, config.diversity_normalized)

    # Through the attention encoder, sentence by sentence.
    def _doc_backward(b: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gq = np.zeros((dim, dim))
        gk = np.zeros_like(gq)
        gv = np.zeros_like(gq)
        base = doc_slices[b].start
        for j, cache in enumerate(forwards[b].caches):
            dq, dk, dv = _backward_from_cache(cache, d_hs[base + j])
            gq += dq
            gk += dk
            gv += dv
        return gq, gk, gv

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_doc = list(pool.map(_doc_backward, range(batch_size)))
    else:
        per_doc = [_doc_backward(b) for b in range(batch_size)]

    grad_wq = np.zeros((dim, dim))
    grad_wk = np.zeros_like(grad_wq)
    grad_wv = np.zeros_like(grad_wq)
    for gq, gk, gv in per_doc:  # reduced in document order: deterministic
        grad_wq += gq
        grad_wk += gk
        grad_wv += gv

    grads = {"w_query": grad_wq, "w_key": grad_wk, "w_value": grad_wv, "head": grad_head}
    if config.update_prototypes:
        grads["prototypes"] = d_protos
    return components, grads


# --- optimizer --------------------------------------------------------------------

class AdamW:
    """AdamW with decoupled weight decay over a dict of float64 arrays."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float,
        beta1: float = ADAMW_BETA1,
        beta2: float = ADAMW_BETA2,
        eps: float = ADAMW_EPS,
        weight_decay: float = ADAMW_WEIGHT_DECAY,
    ):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
        self.second_moment = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for key, grad in grads.items():
            m = self.first_moment[key]
            v = self.second_moment[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            params[key] -= self.learning_rate * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * params[key]
            )


def optimizer_settings() -> dict:
    return {
        "name": "adamw",
        "beta1": ADAMW_BETA1,
        "beta2": ADAMW_BETA2,
        "eps": ADAMW_EPS,
        "weight_decay": ADAMW_WEIGHT_DECAY,
    }


# --- training loop -----------------------------------------------------------------

def build_examples(
    documents: list[Document],
    bundles: dict[str, EmbeddingBundle],
    attributions: dict[str, AttributionBundle] | None = None,
) -> list[TrainExample]:
    """Pair documents with their bundles, validating alignment."""
    examples = []
    for doc in documents:
        if doc.label is None:
            raise LabelOutOfRange(f"document {doc.id!r} carries no target label")
        bundle = bundles.get(doc.id)
        if bundle is None:
            raise MissingBundle(f"document {doc.id!r} has no embedding bundle")
        if len(bundle.matrices) != len(doc.sentences):
            raise TokenizerMismatch(
                f"doc {doc.id!r}: bundle has {len(bundle.matrices)} sentences, "
                f"document has {len(doc.sentences)}"
            )
        attr = attributions.get(doc.id) if attributions else None
        if attr is not None:
            attr.validate(bundle.token_counts)
        examples.append(
            TrainExample(document=doc, bundle=bundle, label=doc.label, attributions=attr)
        )
    return examples


def _infer_num_classes(examples: list[TrainExample], config: TrainConfig) -> int:
    observed = max(ex.label for ex in examples) + 1
    if config.num_classes is not None:
        if observed > config.num_classes:
            raise LabelOutOfRange(
                f"label {observed - 1} outside the configured {config.num_classes} classes"
            )
        return config.num_classes
    return max(observed, 2)


def _bundle_dim(examples: list[TrainExample]) -> int:
    dim = examples[0].bundle.dim
    for ex in examples:
        if ex.bundle.dim != dim:
            raise ShapeMismatch(
                f"bundle {ex.bundle.doc_id!r} has dim {ex.bundle.dim}, expected {dim}"
            )
    return dim


def _fidelity(
    model: SurrogateModel,
    documents: list[Document],
    bundles: dict[str, EmbeddingBundle],
    attributions: dict[str, AttributionBundle] | None,
) -> float:
    agree = 0
    for doc in documents:
        attr = attributions.get(doc.id) if attributions else None
        breakdown = model.predict_bundle(bundles[doc.id], attr)
        agree += int(breakdown.predicted_class == doc.label)
    return agree / len(documents)


def _attention_view(params: dict[str, np.ndarray]) -> AttentionParams:
    """AttentionParams sharing the optimizer's arrays (no copies)."""
    return AttentionParams(
        w_query=params["w_query"], w_key=params["w_key"], w_value=params["w_value"]
    )


def train(
    documents: list[Document],
    bundles: dict[str, EmbeddingBundle],
    config: TrainConfig,
    attributions: dict[str, AttributionBundle] | None = None,
    eval_documents: list[Document] | None = None,
    eval_bundles: dict[str, EmbeddingBundle] | None = None,
    eval_attributions: dict[str, AttributionBundle] | None = None,
    threads: int = 1,
    checkpoint_fn=None,
) -> tuple[SurrogateModel, TrainReport]:
    """Distill the target model's labels into a fresh surrogate.

    Randomness (parameter init, k-means seeding, batch shuffling) flows
    from ``config.seed`` through three spawned child streams, in that
    order, so runs are bit-reproducible for a fixed seed and a thread
    count of 1.

    Returns the trained model (already cast to float32 storage, with
    prototype associations filled in) and the per-epoch report.

    Raises:
        DivergedLoss: a batch produced a non-finite loss.
    """
    config.validate()
    if not documents:
        raise ValueError("training needs at least one document")
    examples = build_examples(documents, bundles, attributions)
    num_classes = _infer_num_classes(examples, config)
    dim = _bundle_dim(examples)

    root = np.random.SeedSequence(config.seed)
    param_seq, kmeans_seq, shuffle_seq = root.spawn(3)
    param_rng = np.random.default_rng(param_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)

    attention = init_attention_params(dim, param_rng).astype(np.float64)

    # Prototype initialization: k-means over the sentence embeddings the
    # untrained adapter produces with zero attribution bias.
    init_embeddings = np.stack([
        encode_sentence(matrix, None, attention).embedding
        for ex in examples
        for matrix in ex.bundle.matrices
    ])
    prototype_set = kmeans_init(
        init_embeddings, config.num_prototypes, np.random.default_rng(kmeans_seq)
    )

    params = {
        "w_query": attention.w_query,
        "w_key": attention.w_key,
        "w_value": attention.w_value,
        "head": np.zeros((num_classes, config.num_prototypes)),
        "prototypes": prototype_set.vectors.astype(np.float64),
    }
    model = SurrogateModel(
        attention=_attention_view(params),
        prototypes=PrototypeSet(
            vectors=params["prototypes"], trainable=config.update_prototypes
        ),
        head=LinearHead(weights=params["head"]),
        eps=config.eps,
        use_attributions=config.use_attributions,
    )

    optimized = {
        k: v for k, v in params.items()
        if k != "prototypes" or config.update_prototypes
    }
    optimizer = AdamW(optimized, learning_rate=config.learning_rate)

    report = TrainReport(num_documents=len(examples), num_classes=num_classes)
    num_batches = (len(examples) + config.batch_size - 1) // config.batch_size
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(examples))
        sums = np.zeros(4)
        for b in range(num_batches):
            picks = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = [examples[i] for i in picks]
            components, grads = total_loss(batch, model, config, threads=threads)
            if not components.is_finite():
                raise DivergedLoss(b, [ex.document.id for ex in batch])
            optimizer.step(optimized, grads)
            sums += (components.cross_entropy, components.prototype,
                     components.diversity, components.total)
        means = sums / num_batches
        fidelity = None
        if eval_documents:
            fidelity = _fidelity(model, eval_documents, eval_bundles or bundles,
                                 eval_attributions)
        report.epochs.append(EpochStats(
            cross_entropy=float(means[0]), prototype=float(means[1]),
            diversity=float(means[2]), total=float(means[3]),
            fidelity=fidelity, wall_clock_seconds=time.perf_counter() - started,
        ))
        logger.info("epoch %d: loss %.6f fidelity %s", epoch, means[3], fidelity)
        if checkpoint_fn is not None:
            snapshot = SurrogateModel(
                attention=_attention_view(params).astype(np.float32),
                prototypes=PrototypeSet(
                    vectors=params["prototypes"].astype(np.float32),
                    trainable=config.update_prototypes,
                ),
                head=LinearHead(weights=params["head"].astype(np.float32)),
                eps=config.eps,
                use_attributions=config.use_attributions,
                train_config={**config.to_dict(), "num_classes": num_classes,
                              "optimizer": optimizer_settings()},
            )
            checkpoint_fn(epoch, snapshot)

    final = SurrogateModel(
        attention=_attention_view(params).astype(np.float32),
        prototypes=PrototypeSet(
            vectors=params["prototypes"].astype(np.float32),
            trainable=config.update_prototypes,
        ),
        head=LinearHead(weights=params["head"].astype(np.float32)),
        eps=config.eps,
        use_attributions=config.use_attributions,
        train_config={**config.to_dict(), "num_classes": num_classes,
                      "optimizer": optimizer_settings()},
    )
    final.prototypes.associations = _associate(final, examples)
    return final, report


def _associate(model: SurrogateModel, examples: list[TrainExample]):
    sentences = []
    for ex in examples:
        hs = model.sentence_embeddings(ex.bundle, ex.attributions)
        for i, span in enumerate(ex.document.sentences):
            sentences.append((ex.document.id, i, hs[i], span.text_of(ex.document.text)))
    return associate_nearest(model.prototypes, sentences)
