"""Shared fixtures: the engineered walk-through model and small corpora."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from protosurrogate.data_io import EmbeddingBundle
from protosurrogate.encoder import AttentionParams
from protosurrogate.prototypes import LinearHead, PrototypeAssociation, PrototypeSet
from protosurrogate.segmentation import segment_document
from protosurrogate.surrogate import SurrogateModel

# The engineered hotel-review fixture: three sentences, each activating
# exactly one prototype with similarities (0.92, 0.88, 0.75) and
# positive-class weights (0.95, 0.80, 0.60), so the main contributions are
# 0.874, 0.704, 0.45 and the positive logit is 2.028.
FIXTURE_SIMILARITIES = (0.92, 0.88, 0.75)
FIXTURE_POS_WEIGHTS = (0.95, 0.80, 0.60)
FIXTURE_NEG_WEIGHTS = (0.25, 0.15, 0.10)
FIXTURE_SENTENCES = (
    "The room was spotless.",
    "Staff handled the late arrival kindly.",
    "Breakfast was decent overall.",
)


def build_walkthrough():
    """(document, bundle, model) reproducing the worked similarity/weight table.

    Geometry: sentence i's tokens all share the unit vector e_{2i}; with
    zero query/key projections and identity values, pooling reproduces
    e_{2i} exactly.  Prototype i lives in span(e_{2i}, e_{2i+1}) at the
    angle that makes cos(h_i, p_i) the prescribed similarity, and is
    orthogonal to every other sentence.
    """
    dim = 6
    text = " ".join(FIXTURE_SENTENCES)
    document = segment_document("walkthrough", text, label=1)
    assert len(document.sentences) == 3

    matrices = []
    token_lists = []
    for i, span in enumerate(document.sentences):
        row = np.zeros(dim, dtype=np.float32)
        row[2 * i] = 1.0
        matrices.append(np.tile(row, (len(span.tokens), 1)))
        token_lists.append(list(span.tokens))
    bundle = EmbeddingBundle(doc_id="walkthrough", dim=dim,
                             token_lists=token_lists, matrices=matrices)

    protos = np.zeros((3, dim), dtype=np.float64)
    for i, sim in enumerate(FIXTURE_SIMILARITIES):
        protos[i, 2 * i] = sim
        protos[i, 2 * i + 1] = np.sqrt(1.0 - sim * sim)
    prototypes = PrototypeSet(
        vectors=protos.astype(np.float32),
        trainable=False,
        associations=[
            PrototypeAssociation("exemplar", k, 1.0, f"exemplar sentence {k}")
            for k in range(3)
        ],
    )
    head = LinearHead(weights=np.array(
        [FIXTURE_NEG_WEIGHTS, FIXTURE_POS_WEIGHTS], dtype=np.float32
    ))
    attention = AttentionParams(
        w_query=np.zeros((dim, dim), dtype=np.float32),
        w_key=np.zeros((dim, dim), dtype=np.float32),
        w_value=np.eye(dim, dtype=np.float32),
    )
    model = SurrogateModel(
        attention=attention, prototypes=prototypes, head=head,
        use_attributions=False,
    )
    return document, bundle, model


@pytest.fixture
def walkthrough():
    return build_walkthrough()
