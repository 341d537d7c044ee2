"""The surrogate as a texts -> probabilities predictor."""

import numpy as np
import pytest

from synthetic_task import featurize_document, generate_corpus, rule_attributions
from protosurrogate.errors import MissingBundle
from protosurrogate.faithfulness import remove_sentences
from protosurrogate.surrogate import SurrogateTextPredictor
from protosurrogate.training import TrainConfig, train


@pytest.fixture(scope="module")
def small_model():
    documents, bundles, attributions, _ = generate_corpus(48, seed=21)
    config = TrainConfig(epochs=2, batch_size=16, num_prototypes=6, seed=4)
    model, _ = train(documents, bundles, config, attributions=attributions)
    return model, documents, bundles, attributions


class TestSurrogateTextPredictor:
    def test_full_text_matches_predict_bundle(self, small_model):
        model, documents, bundles, attributions = small_model
        predictor = SurrogateTextPredictor(model)
        doc = documents[0]
        predictor.register_document(doc, bundles[doc.id], attributions[doc.id])
        probs = predictor([doc.text])[0]
        breakdown = model.predict_bundle(bundles[doc.id], attributions[doc.id])
        assert int(np.argmax(probs)) == breakdown.predicted_class
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_serves_sentence_removals(self, small_model):
        model, documents, bundles, attributions = small_model
        predictor = SurrogateTextPredictor(model)
        doc = next(d for d in documents if len(d.sentences) >= 3)
        predictor.register_document(doc, bundles[doc.id], attributions[doc.id])
        perturbed = remove_sentences(doc, {1})
        probs = predictor([perturbed])[0]
        assert probs.shape == (model.num_classes,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_empty_text_is_uniform(self, small_model):
        model, _, _, _ = small_model
        predictor = SurrogateTextPredictor(model)
        np.testing.assert_allclose(
            predictor([""])[0], np.full(model.num_classes, 1.0 / model.num_classes)
        )

    def test_unknown_sentence_raises(self, small_model):
        model, _, _, _ = small_model
        predictor = SurrogateTextPredictor(model)
        with pytest.raises(MissingBundle):
            predictor(["Never registered sentence."])

    def test_deterministic(self, small_model):
        model, documents, bundles, attributions = small_model
        predictor = SurrogateTextPredictor(model)
        doc = documents[3]
        predictor.register_document(doc, bundles[doc.id], attributions[doc.id])
        np.testing.assert_array_equal(predictor([doc.text]), predictor([doc.text]))
