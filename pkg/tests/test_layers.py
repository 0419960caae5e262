"""Layer semantics: affine, layer norm, attention, pre-LN blocks."""

import numpy as np
import pytest

from venom import nn_core as nn
from venom.errors import ContractError, DimensionError
from venom.nn_core import autograd as T


def tensor2(rows):
    return T.tensor(np.array(rows, dtype=np.float64))


class TestAffine:
    def test_identity_weights(self):
        out = nn.affine(tensor2([[1.0, 2.0]]), tensor2([[1.0, 0.0], [0.0, 1.0]]),
                        T.tensor(np.zeros(2)))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_zero_weights_pass_bias(self):
        out = nn.affine(tensor2([[1.0, 1.0]]), tensor2([[0.0, 0.0], [0.0, 0.0]]),
                        T.tensor(np.array([3.0, 4.0])))
        np.testing.assert_array_equal(out.data, [[3.0, 4.0]])

    def test_hand_matrix_multiply(self):
        out = nn.affine(tensor2([[1.0, 2.0], [3.0, 4.0]]), tensor2([[1.0], [1.0]]),
                        T.tensor(np.array([1.0])))
        np.testing.assert_array_equal(out.data, [[4.0], [8.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as excinfo:
            nn.affine(tensor2([[1.0, 2.0]]), tensor2([[1.0]]), T.tensor(np.zeros(1)))
        assert "(1, 2)" in str(excinfo.value) and "(1, 1)" in str(excinfo.value)


class TestLayerNorm:
    def test_constant_row_normalizes_to_zero(self):
        out = nn.layer_norm(tensor2([[5.0, 5.0, 5.0]]), T.tensor(np.ones(3)),
                            T.tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, [[0.0, 0.0, 0.0]], atol=1e-12)

    def test_unit_variance_row_is_fixed_point(self):
        # direct formula oracle: mean 0, variance 1 row maps to itself as eps -> 0
        x = np.array([[1.0, -1.0]])
        out = nn.layer_norm(T.tensor(x), T.tensor(np.ones(2)), T.tensor(np.zeros(2)),
                            eps=1e-14)
        expected = (x - x.mean()) / np.sqrt(x.var() + 1e-14)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_offset_pass_through(self):
        out = nn.layer_norm(tensor2([[0.0, 0.0]]), T.tensor(np.ones(2)),
                            T.tensor(np.array([2.0, 3.0])))
        np.testing.assert_allclose(out.data, [[2.0, 3.0]], atol=1e-12)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ContractError):
            nn.layer_norm(tensor2([[1.0, 2.0]]), T.tensor(np.ones(2)),
                          T.tensor(np.zeros(2)), eps=0.0)


def naive_attention(x, params, heads, prefix="attn"):
    """Loop-based oracle independent of the tensor engine."""
    q = x @ params[f"{prefix}.wq"].data + params[f"{prefix}.bq"].data
    k = x @ params[f"{prefix}.wk"].data
    v = x @ params[f"{prefix}.wv"].data + params[f"{prefix}.bv"].data
    d_head = x.shape[1] // heads
    merged = np.zeros_like(x)
    for h in range(heads):
        sl = slice(h * d_head, (h + 1) * d_head)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        out_h = np.zeros_like(qh)
        for i in range(x.shape[0]):
            logits = np.array([qh[i] @ kh[j] / np.sqrt(d_head) for j in range(x.shape[0])])
            weights = np.exp(logits - logits.max())
            weights /= weights.sum()
            out_h[i] = sum(weights[j] * vh[j] for j in range(x.shape[0]))
        merged[:, sl] = out_h
    return merged @ params[f"{prefix}.wo"].data + params[f"{prefix}.bo"].data


class TestAttention:
    def make(self, d, seed=0):
        params = nn.ParamSet(seed)
        nn.declare_attention(params, "attn", d)
        return params

    def test_single_token_is_value_then_output_projection(self):
        d = 4
        params = self.make(d)
        x = np.random.default_rng(0).normal(size=(1, d))
        out = nn.multi_head_self_attention(T.tensor(x), params, heads=2)
        v = x @ params["attn.wv"].data + params["attn.bv"].data
        expected = v @ params["attn.wo"].data + params["attn.bo"].data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_identical_rows_give_identical_outputs(self):
        d = 6
        params = self.make(d, seed=3)
        row = np.random.default_rng(1).normal(size=d)
        x = np.tile(row, (4, 1))
        out = nn.multi_head_self_attention(T.tensor(x), params, heads=3).data
        for i in range(1, 4):
            np.testing.assert_allclose(out[i], out[0], atol=1e-12)

    def test_matches_naive_oracle(self):
        d = 4
        params = self.make(d, seed=5)
        x = np.random.default_rng(2).normal(size=(3, d))
        out = nn.multi_head_self_attention(T.tensor(x), params, heads=2).data
        np.testing.assert_allclose(out, naive_attention(x, params, heads=2), atol=1e-12)

    def test_attention_rows_sum_to_one_per_head(self):
        d = 8
        params = self.make(d, seed=7)
        x = np.random.default_rng(3).normal(size=(5, d))
        _, weights = nn.multi_head_self_attention(T.tensor(x), params, heads=4,
                                                  return_weights=True)
        assert len(weights) == 4
        for w in weights:
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_width_not_divisible_by_heads(self):
        params = self.make(4)
        with pytest.raises(ContractError):
            nn.multi_head_self_attention(T.tensor(np.zeros((2, 4))), params, heads=3)

    def test_gradients_match_finite_differences(self):
        d = 4
        params = self.make(d, seed=11)
        x = np.random.default_rng(4).normal(size=(3, d))
        err = nn.gradient_check(
            lambda p: T.sum_all(T.square(
                nn.multi_head_self_attention(T.tensor(x), p, heads=2))),
            params,
        )
        assert err <= 1e-4


class TestPreLnBlock:
    def make(self, d, seed=0):
        params = nn.ParamSet(seed)
        nn.declare_block(params, "block", d)
        return params

    def test_zeroed_output_projections_make_identity(self):
        d = 4
        params = self.make(d, seed=1)
        params["block.attn.wo"].data[...] = 0.0
        params["block.attn.bo"].data[...] = 0.0
        params["block.ffn.w2"].data[...] = 0.0
        params["block.ffn.b2"].data[...] = 0.0
        x = np.random.default_rng(5).normal(size=(3, d))
        out = nn.pre_ln_block(T.tensor(x), params, heads=2, prefix="block").data
        np.testing.assert_array_equal(out, x)

    @pytest.mark.parametrize("m", [1, 2, 7])
    def test_output_shape_equals_input_shape(self, m):
        d = 8
        params = self.make(d, seed=2)
        x = np.random.default_rng(m).normal(size=(m, d))
        out = nn.pre_ln_block(T.tensor(x), params, heads=2, prefix="block")
        assert out.data.shape == (m, d)

    def test_composition_from_tested_sublayers(self):
        d = 4
        params = self.make(d, seed=3)
        x = np.random.default_rng(6).normal(size=(2, d))
        out = nn.pre_ln_block(T.tensor(x), params, heads=2, prefix="block").data

        normed = nn.layer_norm(T.tensor(x), params["block.ln1.gain"],
                               params["block.ln1.offset"]).data
        y = x + naive_attention(normed, params, heads=2, prefix="block.attn")
        normed2 = nn.layer_norm(T.tensor(y), params["block.ln2.gain"],
                                params["block.ln2.offset"]).data
        hidden = normed2 @ params["block.ffn.w1"].data + params["block.ffn.b1"].data
        hidden = T.gelu(T.tensor(hidden)).data
        expected = y + hidden @ params["block.ffn.w2"].data + params["block.ffn.b2"].data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        d = 4
        params = self.make(d, seed=4)
        x = np.random.default_rng(7).normal(size=(2, d))
        err = nn.gradient_check(
            lambda p: T.mean_all(T.square(nn.pre_ln_block(T.tensor(x), p, 2, "block"))),
            params,
        )
        assert err <= 1e-4
