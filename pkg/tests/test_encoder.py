"""Attribution-guided attention: forward pieces and the analytic backward."""

import math

import numpy as np
import pytest

from gradcheck import central_difference_grads, max_relative_error
from protosurrogate.encoder import (
    AttentionParams,
    attend,
    encode_sentence,
    encode_sentence_with_grads,
    init_attention_params,
    normalize_attributions,
    pool,
    token_importance,
)
from protosurrogate.errors import ShapeMismatch


def random_params(rng, dim, dtype=np.float64):
    return AttentionParams(
        w_query=rng.standard_normal((dim, dim)).astype(dtype),
        w_key=rng.standard_normal((dim, dim)).astype(dtype),
        w_value=rng.standard_normal((dim, dim)).astype(dtype),
    )


class TestNormalizeAttributions:
    def test_proportional_shares(self):
        out = normalize_attributions(np.array([1.0, 1.0, 2.0]))
        np.testing.assert_allclose(out, [0.25, 0.25, 0.5], atol=1e-9)

    def test_all_zero_stays_zero(self):
        np.testing.assert_array_equal(
            normalize_attributions(np.zeros(3)), np.zeros(3)
        )

    def test_negative_scores_clamped_before_normalizing(self):
        out = normalize_attributions(np.array([-1.0, 1.0]))
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-8)

    def test_outputs_in_unit_interval_and_sum_below_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            scores = rng.standard_normal(rng.integers(1, 10))
            out = normalize_attributions(scores)
            assert np.all(out >= 0.0) and np.all(out <= 1.0)
            assert out.sum() <= 1.0 + 1e-12


class TestAttend:
    def test_single_token_attention_is_one(self):
        rng = np.random.default_rng(1)
        params = random_params(rng, 5)
        e = rng.standard_normal((1, 5))
        attention, contextual = attend(e, None, params)
        np.testing.assert_array_equal(attention, [[1.0]])
        np.testing.assert_allclose(contextual[0], e[0] @ params.w_value, rtol=1e-12)

    def test_zero_projections_give_uniform_rows(self):
        params = AttentionParams(
            w_query=np.zeros((4, 4)), w_key=np.zeros((4, 4)), w_value=np.eye(4)
        )
        e = np.random.default_rng(2).standard_normal((3, 4))
        attention, _ = attend(e, np.zeros(3), params)
        np.testing.assert_allclose(attention, np.full((3, 3), 1 / 3), atol=1e-12)

    def test_log2_bias_doubles_first_column(self):
        # softmax([ln 2, 0, 0]) = [0.5, 0.25, 0.25] in every row
        params = AttentionParams(
            w_query=np.zeros((4, 4)), w_key=np.zeros((4, 4)), w_value=np.eye(4)
        )
        e = np.random.default_rng(3).standard_normal((3, 4))
        attention, _ = attend(e, np.array([math.log(2.0), 0.0, 0.0]), params)
        np.testing.assert_allclose(
            attention, np.tile([0.5, 0.25, 0.25], (3, 1)), atol=1e-12
        )

    def test_rows_sum_to_one_for_random_inputs(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            dim = int(rng.integers(1, 8))
            length = int(rng.integers(1, 7))
            params = random_params(rng, dim)
            scores = rng.standard_normal(length)
            attention, _ = attend(rng.standard_normal((length, dim)),
                                  normalize_attributions(scores), params)
            np.testing.assert_allclose(attention.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_bias_equals_no_bias_exactly(self):
        rng = np.random.default_rng(5)
        params = random_params(rng, 6)
        e = rng.standard_normal((4, 6))
        a_none, c_none = attend(e, None, params)
        a_zero, c_zero = attend(e, np.zeros(4), params)
        assert np.array_equal(a_none, a_zero)
        assert np.array_equal(c_none, c_zero)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(6)
        params = random_params(rng, 4)
        with pytest.raises(ShapeMismatch):
            attend(rng.standard_normal((3, 5)), None, params)
        with pytest.raises(ShapeMismatch):
            attend(rng.standard_normal((3, 4)), np.zeros(2), params)


class TestTokenImportance:
    def test_uniform_attention_gives_uniform_weights(self):
        alpha = token_importance(np.full((4, 4), 0.25))
        np.testing.assert_allclose(alpha, [0.25] * 4, atol=1e-12)

    def test_single_token(self):
        np.testing.assert_array_equal(token_importance(np.array([[1.0]])), [1.0])

    def test_matches_hand_softmax_of_column_means(self):
        # Column means (0.5, 0.3, 0.2); expected values evaluated with math.exp.
        attention = np.array([
            [0.6, 0.3, 0.1],
            [0.4, 0.3, 0.3],
        ])
        exps = [math.exp(0.5), math.exp(0.3), math.exp(0.2)]
        expected = [v / sum(exps) for v in exps]
        np.testing.assert_allclose(token_importance(attention), expected, atol=1e-12)
        np.testing.assert_allclose(
            expected, [0.390694, 0.319873, 0.289433], atol=5e-7
        )


class TestPool:
    def test_single_weight_returns_row(self):
        v = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(pool(np.array([1.0]), v), v[0])

    def test_equal_weights_average(self):
        c = np.array([[2.0, 0.0], [0.0, 4.0]])
        np.testing.assert_allclose(pool(np.array([0.5, 0.5]), c), [1.0, 2.0])

    def test_result_lies_in_convex_hull_per_coordinate(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            length = int(rng.integers(1, 8))
            weights = rng.dirichlet(np.ones(length))
            c = rng.standard_normal((length, int(rng.integers(1, 6))))
            h = pool(weights, c)
            assert np.all(h >= c.min(axis=0) - 1e-12)
            assert np.all(h <= c.max(axis=0) + 1e-12)


class TestEncodeSentenceGrads:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(8)
        params = random_params(rng, 5)
        _, gq, gk, gv = encode_sentence_with_grads(
            rng.standard_normal((3, 5)), None, params, np.zeros(5)
        )
        assert not gq.any() and not gk.any() and not gv.any()

    def test_single_token_query_key_grads_vanish(self):
        rng = np.random.default_rng(9)
        params = random_params(rng, 4)
        e = rng.standard_normal((1, 4))
        upstream = rng.standard_normal(4)
        _, gq, gk, gv = encode_sentence_with_grads(e, None, params, upstream)
        assert not gq.any() and not gk.any()
        # h = e W_v exactly, so dL/dW_v is the outer product e^T upstream.
        np.testing.assert_allclose(gv, np.outer(e[0], upstream), rtol=1e-12)

    @pytest.mark.parametrize("use_bias", [False, True])
    def test_matches_finite_differences(self, use_bias):
        rng = np.random.default_rng(10)
        for _ in range(20):
            dim = int(rng.integers(2, 9))
            length = int(rng.integers(1, 7))
            params = random_params(rng, dim)
            e = rng.standard_normal((length, dim))
            bias = normalize_attributions(rng.standard_normal(length)) if use_bias else None
            upstream = rng.standard_normal(dim)

            _, gq, gk, gv = encode_sentence_with_grads(e, bias, params, upstream)
            tracked = {"w_query": params.w_query, "w_key": params.w_key,
                       "w_value": params.w_value}
            numeric = central_difference_grads(
                lambda: float(upstream @ encode_sentence(e, bias, params).embedding),
                tracked,
            )
            for analytic, name in ((gq, "w_query"), (gk, "w_key"), (gv, "w_value")):
                assert max_relative_error(analytic, numeric[name]) < 1e-4


class TestEncodeSentence:
    def test_token_weights_sum_to_one(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            dim = int(rng.integers(1, 8))
            length = int(rng.integers(1, 7))
            enc = encode_sentence(
                rng.standard_normal((length, dim)), None, random_params(rng, dim)
            )
            np.testing.assert_allclose(enc.token_weights.sum(), 1.0, atol=1e-6)

    def test_embedding_within_contextual_hull(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            dim = int(rng.integers(1, 8))
            length = int(rng.integers(1, 7))
            enc = encode_sentence(
                rng.standard_normal((length, dim)), None, random_params(rng, dim)
            )
            assert np.all(enc.embedding >= enc.contextual.min(axis=0) - 1e-12)
            assert np.all(enc.embedding <= enc.contextual.max(axis=0) + 1e-12)

    def test_init_scale_bound(self):
        rng = np.random.default_rng(13)
        params = init_attention_params(8, rng)
        bound = np.sqrt(6.0 / 16.0)
        for m in (params.w_query, params.w_key, params.w_value):
            assert m.dtype == np.float32
            assert np.all(np.abs(m) <= bound)
