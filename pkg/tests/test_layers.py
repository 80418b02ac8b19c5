"""Layer-level behavior: attention contract, GRU, network assembly, embeddings."""

import math

import numpy as np
import pytest

from promo.errors import ShapeError
from promo.nn import (
    BiGRU,
    Embedding,
    MultiHeadAttention,
    Sequential,
    Tensor,
    build_network,
    sinusoidal_embedding,
)
from promo.seeding import rng_from


def _identity_mha(dim, rng):
    mha = MultiHeadAttention(dim, 1, rng)
    mha.wq.weight.data = np.eye(dim, dtype=np.float32)
    mha.wq.bias.data = np.zeros(dim, dtype=np.float32)
    mha.wk.weight.data = np.eye(dim, dtype=np.float32)
    mha.wv.weight.data = np.eye(dim, dtype=np.float32)
    mha.wv.bias.data = np.zeros(dim, dtype=np.float32)
    mha.wo.weight.data = np.eye(dim, dtype=np.float32)
    mha.wo.bias.data = np.zeros(dim, dtype=np.float32)
    return mha


class TestAttention:
    def test_single_key_value_returns_value(self):
        rng = rng_from(0)
        mha = _identity_mha(4, rng)
        q = rng.standard_normal((1, 2, 4)).astype(np.float32)
        kv = rng.standard_normal((1, 1, 4)).astype(np.float32)
        out = mha(Tensor(q), kv=Tensor(kv))
        np.testing.assert_allclose(out.data[0, 0], kv[0, 0], atol=1e-6)
        np.testing.assert_allclose(out.data[0, 1], kv[0, 0], atol=1e-6)

    def test_two_query_three_key_matches_hand_softmax(self):
        # oracle: softmax(Q K^T / sqrt(d)) V computed with plain loops
        rng = rng_from(1)
        d = 3
        mha = MultiHeadAttention(d, 1, rng)
        for lin in (mha.wq, mha.wk, mha.wv, mha.wo):
            lin.weight.data = np.eye(d, dtype=np.float32)
            if lin.bias is not None:
                lin.bias.data = np.zeros(d, dtype=np.float32)
        q = rng.standard_normal((1, 2, d)).astype(np.float32)
        kv = rng.standard_normal((1, 3, d)).astype(np.float32)

        expected = np.zeros((2, d))
        for i in range(2):
            logits = [float(q[0, i] @ kv[0, j]) / math.sqrt(d) for j in range(3)]
            m = max(logits)
            w = [math.exp(v - m) for v in logits]
            z = sum(w)
            for j in range(3):
                expected[i] += (w[j] / z) * kv[0, j]

        out = mha(Tensor(q), kv=Tensor(kv))
        np.testing.assert_allclose(out.data[0], expected, atol=1e-5)

    def test_masked_positions_get_zero_weight(self):
        rng = rng_from(2)
        mha = _identity_mha(4, rng)
        q = rng.standard_normal((1, 1, 4)).astype(np.float32)
        kv = rng.standard_normal((1, 3, 4)).astype(np.float32)
        # mask all but key 1: output must equal value 1 exactly
        mask = np.array([[True, False, True]])
        out = mha(Tensor(q), kv=Tensor(kv), pad_mask=mask)
        np.testing.assert_allclose(out.data[0, 0], kv[0, 1], atol=1e-6)

    def test_dim_not_divisible_by_heads(self):
        with pytest.raises(ShapeError):
            MultiHeadAttention(10, 3, rng_from(3))


class TestBiGRU:
    def test_output_shape_concatenates_directions(self):
        rng = rng_from(4)
        gru = BiGRU(5, 7, rng)
        x = rng.standard_normal((3, 6, 5)).astype(np.float32)
        out = gru(Tensor(x))
        assert out.shape == (3, 6, 14)

    def test_reversing_input_swaps_directions(self):
        rng = rng_from(5)
        gru = BiGRU(4, 3, rng)
        # tie the two directions so reversal symmetry is exact
        gru.wi_b.data = gru.wi_f.data.copy()
        gru.wh_b.data = gru.wh_f.data.copy()
        gru.bi_b.data = gru.bi_f.data.copy()
        gru.bh_b.data = gru.bh_f.data.copy()
        x = rng.standard_normal((1, 5, 4)).astype(np.float32)
        out = gru(Tensor(x)).data
        out_rev = gru(Tensor(x[:, ::-1].copy())).data
        np.testing.assert_allclose(out[:, :, :3], out_rev[:, ::-1, 3:], atol=1e-6)


class TestSinusoidalEmbedding:
    def test_t_zero_is_zeros_and_ones(self):
        e = sinusoidal_embedding(0, 16)
        np.testing.assert_allclose(e[0::2], np.zeros(8), atol=0)
        np.testing.assert_allclose(e[1::2], np.ones(8), atol=0)

    @pytest.mark.parametrize("t", [1, 17, 999, 100000])
    def test_bounded(self, t):
        e = sinusoidal_embedding(t, 64)
        assert np.all(e >= -1.0) and np.all(e <= 1.0)

    def test_adjacent_timesteps_differ(self):
        # oracle: evaluate the frequency formula directly
        dim = 64
        half = dim // 2
        freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)

        def direct(t):
            out = np.empty(dim)
            out[0::2] = np.sin(t * freqs)
            out[1::2] = np.cos(t * freqs)
            return out

        e3, e4 = sinusoidal_embedding(3, dim), sinusoidal_embedding(4, dim)
        np.testing.assert_allclose(e3, direct(3), atol=1e-6)
        np.testing.assert_allclose(e4, direct(4), atol=1e-6)
        assert np.linalg.norm(e3 - e4) > 0.5

    def test_odd_dim_rejected(self):
        with pytest.raises(ShapeError):
            sinusoidal_embedding(1, 7)


class TestBuildNetwork:
    def test_dimension_mismatch_rejected(self):
        spec = [("linear", {"in_dim": 4, "out_dim": 6}), ("linear", {"in_dim": 5, "out_dim": 2})]
        with pytest.raises(ShapeError):
            build_network(spec, rng_from(6))

    def test_assembled_network_runs(self):
        spec = [
            ("embedding", {"vocab_size": 12, "dim": 8}),
            ("bigru", {"in_dim": 8, "hidden": 4}),
            ("linear", {"in_dim": 8, "out_dim": 8}),
            ("layer_norm", {"dim": 8}),
            ("gelu", {}),
            ("residual", {"layers": [("linear", {"in_dim": 8, "out_dim": 8})]}),
            ("dropout", {"p": 0.1}),
            ("linear", {"in_dim": 8, "out_dim": 2}),
        ]
        net = build_network(spec, rng_from(7))
        ids = rng_from(8).integers(0, 12, size=(2, 5))
        out = net(ids)
        assert out.shape == (2, 5, 2)


class TestEmbedding:
    def test_out_of_range_id_rejected(self):
        emb = Embedding(4, 3, rng_from(9))
        with pytest.raises(ShapeError):
            emb(np.array([[0, 4]]))

    def test_lookup_matches_table(self):
        emb = Embedding(6, 3, rng_from(10))
        out = emb(np.array([2, 5]))
        np.testing.assert_array_equal(out.data, emb.table.data[[2, 5]])
