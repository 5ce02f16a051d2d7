"""Tests for axial attention and the band-aware blocks.

The key oracle is `positional_attention_oracle`: a three-loop, pure-numpy
transcription of per-head position-sensitive attention

    logit(p, c) = (q_p . k_c  +  q_p . rQ_{c-p}  +  k_c . rK_{c-p}) / scale
    out_p       = sum_c softmax_c(logit)(p, c) * (v_c + rV_{c-p})

against which the vectorised module is compared, with and without
positional tables, spans and batching.
"""

import math

import numpy as np
import pytest

from uformer.attention import (
    AxialAttention,
    FATAttentionBlock,
    RelPosTable,
    SharedPosTable,
    TFAttentionBlock,
    band_join,
    band_split,
    effective_heads,
    multi_head_freq,
    multi_head_time,
    scaled_dot_product,
)
from uformer.tensor import Tensor, backward, mul, no_grad, tsum

from oracles import positional_attention_oracle, sdp_oracle


def make_att(d_layer, heads, length, seed, **kw):
    att = AxialAttention(d_layer, heads, length, np.random.default_rng(seed),
                         dtype=np.float64, **kw)
    return att


def randomize_tables(att, seed, amp=0.5):
    rng = np.random.default_rng(seed)
    for _, p in att.table.named_parameters():
        p.data = rng.standard_normal(p.shape) * amp


class TestEffectiveHeads:
    @pytest.mark.parametrize("d,h,want", [
        (16, 4, 4),    # divides: kept
        (16, 5, 2),    # 5 -> 2 by halving until it divides
        (2, 4, 2),     # clamp to the layer width first
        (3, 2, 1),     # odd width falls back to a single head
        (64, 16, 16),
    ])
    def test_halving_rule(self, d, h, want):
        assert effective_heads(d, h) == want

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            effective_heads(0, 2)
        with pytest.raises(ValueError):
            effective_heads(8, 0)


class TestScaledDotProduct:
    def test_matches_oracle_with_length_scaling(self):
        rng = np.random.default_rng(0)
        q, k, v = (rng.standard_normal((6, 3)) for _ in range(3))
        got = scaled_dot_product(Tensor(q), Tensor(k), Tensor(v)).data
        np.testing.assert_allclose(got, sdp_oracle(q, k, v, 1 / math.sqrt(6)),
                                   atol=1e-12)

    def test_scale_len_override(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.standard_normal((5, 4)) for _ in range(3))
        got = scaled_dot_product(Tensor(q), Tensor(k), Tensor(v), scale_len=4).data
        np.testing.assert_allclose(got, sdp_oracle(q, k, v, 0.5), atol=1e-12)

    def test_length_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError, match="lengths disagree"):
            scaled_dot_product(Tensor(rng.standard_normal((4, 3))),
                               Tensor(rng.standard_normal((5, 3))),
                               Tensor(rng.standard_normal((5, 3))))


class TestPositionalTables:
    def test_role_specific_table_shapes(self):
        t = RelPosTable(heads=3, length=5, d_k=4)
        rq, rk, rv = t.roles()
        for r in (rq, rk, rv):
            assert r.shape == (3, 9, 4)
            assert np.all(r.data == 0.0)
        assert rq is not rk and rk is not rv
        assert sorted(n for n, _ in t.named_parameters()) == ["rk", "rq", "rv"]

    def test_shared_table_is_one_tensor(self):
        t = SharedPosTable(heads=2, length=4, d_k=3)
        rq, rk, rv = t.roles()
        assert rq is rk is rv
        assert [n for n, _ in t.named_parameters()] == ["table"]


class TestAxialAttention:
    def test_zero_tables_reduce_to_content_attention(self):
        """Fresh tables are zero, so the module must equal plain scaled
        dot-product attention applied per head."""
        att = make_att(8, 2, 6, seed=3)
        x = np.random.default_rng(4).standard_normal((6, 8))
        got = att(Tensor(x)).data
        # brute force per head with the same projections
        h, dk, n = att.heads, att.d_k, 6
        q = (x @ att.wq.data).reshape(n, h, dk)
        k = (x @ att.wk.data).reshape(n, h, dk)
        v = (x @ att.wv.data).reshape(n, h, dk)
        outs = [sdp_oracle(q[:, i], k[:, i], v[:, i], 1 / math.sqrt(n))
                for i in range(h)]
        want = np.stack(outs, axis=1).reshape(n, h * dk) @ att.wo.data
        np.testing.assert_allclose(got, want, atol=1e-10)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_three_loop_oracle(self, seed):
        att = make_att(6, 3, 5, seed=seed + 10)
        randomize_tables(att, seed + 50)
        x = np.random.default_rng(seed + 90).standard_normal((5, 6))
        np.testing.assert_allclose(att(Tensor(x)).data,
                                   positional_attention_oracle(x, att),
                                   atol=1e-10)

    def test_scale_by_dk_matches_oracle(self):
        att = make_att(8, 4, 5, seed=20, scale_by_dk=True)
        randomize_tables(att, 21)
        x = np.random.default_rng(22).standard_normal((5, 8))
        np.testing.assert_allclose(att(Tensor(x)).data,
                                   positional_attention_oracle(x, att),
                                   atol=1e-10)

    def test_span_matches_masked_oracle(self):
        att = make_att(4, 2, 7, seed=23, span=3)
        randomize_tables(att, 24)
        x = np.random.default_rng(25).standard_normal((7, 4))
        np.testing.assert_allclose(att(Tensor(x)).data,
                                   positional_attention_oracle(x, att, span=3),
                                   atol=1e-10)

    def test_span_one_attends_only_to_self(self):
        # span 1 leaves a single unmasked logit per row, so with zero tables
        # every output position is v_p pushed through the output projection
        att = make_att(6, 2, 5, seed=26, span=1)
        x = np.random.default_rng(27).standard_normal((5, 6))
        want = x @ att.wv.data @ att.wo.data
        np.testing.assert_allclose(att(Tensor(x)).data, want, atol=1e-10)

    def test_even_span_rejected(self):
        with pytest.raises(ValueError, match="span"):
            make_att(4, 2, 5, seed=28, span=2)

    def test_batched_slices_equal_independent_calls(self):
        att = make_att(6, 2, 4, seed=29)
        randomize_tables(att, 30)
        x = np.random.default_rng(31).standard_normal((3, 4, 6))
        batched = att(Tensor(x)).data
        for b in range(3):
            np.testing.assert_allclose(batched[b], att(Tensor(x[b])).data,
                                       atol=1e-10)

    def test_wrong_axis_length_rejected(self):
        att = make_att(6, 2, 4, seed=32)
        with pytest.raises(ValueError, match="axis length"):
            att(Tensor(np.zeros((5, 6))))

    def test_wrong_width_rejected(self):
        att = make_att(6, 2, 4, seed=33)
        with pytest.raises(ValueError, match="feature width"):
            att(Tensor(np.zeros((4, 7))))

    def test_gradients_against_finite_differences(self):
        att = make_att(4, 2, 3, seed=34)
        randomize_tables(att, 35, amp=0.3)
        x0 = np.random.default_rng(36).standard_normal((3, 4))
        proj = np.random.default_rng(37).standard_normal((3, 4))
        x = Tensor(x0, requires_grad=True)
        backward(tsum(mul(att(x), Tensor(proj))))

        def scalar():
            with no_grad():
                return float(np.sum(att(Tensor(x0)).data * proj))

        eps = 1e-6
        fd_x = np.zeros_like(x0)
        for i in np.ndindex(x0.shape):
            orig = x0[i]
            x0[i] = orig + eps
            hi = scalar()
            x0[i] = orig - eps
            lo = scalar()
            x0[i] = orig
            fd_x[i] = (hi - lo) / (2 * eps)
        np.testing.assert_allclose(x.grad, fd_x, atol=1e-6)

        for name, p in att.named_parameters():
            flat = p.data.reshape(-1)
            for j in (0, flat.size // 2, flat.size - 1):
                orig = flat[j]
                flat[j] = orig + eps
                hi = scalar()
                flat[j] = orig - eps
                lo = scalar()
                flat[j] = orig
                want = (hi - lo) / (2 * eps)
                assert p.grad.reshape(-1)[j] == pytest.approx(want, abs=1e-6), name


class TestAxisHelpers:
    def test_time_attention_runs_along_frames(self):
        att = make_att(6, 2, 4, seed=38)
        randomize_tables(att, 39)
        x = np.random.default_rng(40).standard_normal((4, 3, 6))  # [T, F, d]
        out = multi_head_time(Tensor(x), att).data
        assert out.shape == x.shape
        for f in range(3):
            np.testing.assert_allclose(out[:, f], att(Tensor(x[:, f])).data,
                                       atol=1e-10)

    def test_freq_attention_runs_along_bins(self):
        att = make_att(6, 2, 3, seed=41)
        randomize_tables(att, 42)
        x = np.random.default_rng(43).standard_normal((4, 3, 6))
        out = multi_head_freq(Tensor(x), att).data
        for t in range(4):
            np.testing.assert_allclose(out[t], att(Tensor(x[t])).data,
                                       atol=1e-10)


class TestBandPartition:
    def test_split_join_roundtrip_is_bit_exact(self):
        x = np.random.default_rng(44).standard_normal((5, 8, 3)).astype(np.float32)
        low, high = band_split(Tensor(x))
        assert low.shape == (5, 4, 3) and high.shape == (5, 4, 3)
        np.testing.assert_array_equal(band_join(low, high).data, x)

    def test_halves_cover_without_overlap(self):
        x = np.arange(24, dtype=np.float64).reshape(1, 6, 4)
        low, high = band_split(Tensor(x))
        np.testing.assert_array_equal(low.data, x[:, :3])
        np.testing.assert_array_equal(high.data, x[:, 3:])

    def test_odd_axis_rejected(self):
        with pytest.raises(ValueError, match="even"):
            band_split(Tensor(np.zeros((2, 5, 3))))

    def test_mismatched_halves_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            band_join(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 3, 4))))

    def test_gradient_routes_through_partition(self):
        x = Tensor(np.random.default_rng(45).standard_normal((2, 4, 3)),
                   requires_grad=True)
        low, high = band_split(x)
        backward(tsum(mul(band_join(low, high), 2.0)))
        np.testing.assert_allclose(x.grad, np.full((2, 4, 3), 2.0))


class TestAttentionBlocks:
    def test_tf_block_is_sum_of_axis_branches(self):
        blk = TFAttentionBlock(6, frames=4, freq_bins=4, heads_time=2,
                               rng=np.random.default_rng(46), dtype=np.float64)
        randomize_tables(blk.time_att, 47)
        randomize_tables(blk.freq_att, 48)
        x = Tensor(np.random.default_rng(49).standard_normal((4, 4, 6)))
        want = (multi_head_time(x, blk.time_att).data
                + multi_head_freq(x, blk.freq_att).data)
        np.testing.assert_allclose(blk(x).data, want, atol=1e-12)

    def test_fat_block_routes_bands_to_their_attentions(self):
        blk = FATAttentionBlock(4, frames=3, freq_bins=8, heads_time=2,
                                heads_high=1, heads_low=2,
                                rng=np.random.default_rng(50), dtype=np.float64)
        for att, s in ((blk.time_att, 51), (blk.low_att, 52), (blk.high_att, 53)):
            randomize_tables(att, s)
        x = Tensor(np.random.default_rng(54).standard_normal((3, 8, 4)))
        low, high = band_split(x)
        want = (multi_head_time(x, blk.time_att).data
                + band_join(multi_head_freq(low, blk.low_att),
                            multi_head_freq(high, blk.high_att)).data)
        np.testing.assert_allclose(blk(x).data, want, atol=1e-12)

    def test_fat_block_preserves_shape(self):
        blk = FATAttentionBlock(4, frames=5, freq_bins=6, heads_time=2,
                                heads_high=1, heads_low=2,
                                rng=np.random.default_rng(55))
        x = Tensor(np.random.default_rng(56).standard_normal((5, 6, 4))
                   .astype(np.float32))
        assert blk(x).shape == x.shape

    def test_fat_block_odd_bins_rejected(self):
        with pytest.raises(ValueError, match="even"):
            FATAttentionBlock(4, frames=3, freq_bins=7, heads_time=2,
                              heads_high=1, heads_low=2,
                              rng=np.random.default_rng(57))

    def test_low_band_carries_more_positional_parameters(self):
        """The low band gets role-specific tables and more heads; the high
        band shares one table across roles, so its positional budget is a
        third of the low band's at equal head width."""
        blk = FATAttentionBlock(32, frames=4, freq_bins=16, heads_time=8,
                                heads_high=2, heads_low=16,
                                rng=np.random.default_rng(58))

        def table_params(att):
            return sum(p.size for n, p in att.named_parameters()
                       if n.startswith("table."))

        assert table_params(blk.low_att) > table_params(blk.high_att)
        low_total = sum(p.size for _, p in blk.low_att.named_parameters())
        high_total = sum(p.size for _, p in blk.high_att.named_parameters())
        assert low_total > high_total
