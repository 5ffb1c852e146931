"""GMF projection/fusion wiring, motion encoding, positional attention."""

import numpy as np
import pytest
import torch

from msflow.attention import PositionalAttention, aggregate_position
from msflow.gmf import GmfProjection, MotionEncoder, TemporalFusion

from conftest import autograd_grad, fd_grad


def _zero_biases(module: torch.nn.Module) -> None:
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, torch.nn.Conv2d) and m.bias is not None:
                m.bias.zero_()


class TestGmfProjection:
    def test_zero_hidden_zero_bias(self):
        torch.manual_seed(0)
        proj = GmfProjection(hidden_channels=8, gmf_channels=6)
        _zero_biases(proj)
        out = proj(torch.zeros(1, 8, 4, 4, dtype=torch.float64))
        assert torch.equal(out, torch.zeros_like(out))

    def test_deterministic(self):
        torch.manual_seed(0)
        proj = GmfProjection(hidden_channels=8, gmf_channels=6)
        h = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        assert torch.equal(proj(h), proj(h.clone()))

    def test_channel_contract(self):
        torch.manual_seed(0)
        proj = GmfProjection(hidden_channels=8, gmf_channels=11)
        out = proj(torch.randn(2, 8, 3, 5, dtype=torch.float64))
        assert out.shape == (2, 11, 3, 5)


class TestTemporalFusion:
    def _recorded(self, fusion, a, b):
        log = []
        fusion.input_hook = lambda direction, x: log.append((direction, x))
        fusion(a, b, "forward")
        fusion(a, b, "backward")
        fusion.input_hook = None
        return dict(log)

    def test_wiring_exact(self):
        torch.manual_seed(0)
        fusion = TemporalFusion(gmf_channels=5)
        a = torch.randn(1, 5, 3, 4, dtype=torch.float64)
        b = torch.randn(1, 5, 3, 4, dtype=torch.float64)
        rec = self._recorded(fusion, a, b)
        assert torch.equal(rec["forward"], torch.cat([a, -b], dim=1))
        assert torch.equal(rec["backward"], torch.cat([b, -a], dim=1))

    def test_bidirectional_matches_per_direction(self):
        torch.manual_seed(0)
        fusion = TemporalFusion(gmf_channels=5)
        a = torch.randn(1, 5, 3, 4, dtype=torch.float64)
        b = torch.randn(1, 5, 3, 4, dtype=torch.float64)
        fused_f, fused_b = fusion.fuse_bidirectional(a, b)
        assert torch.allclose(fused_f, fusion(a, b, "forward"), atol=1e-14)
        assert torch.allclose(fused_b, fusion(a, b, "backward"), atol=1e-14)

    def test_antisymmetric_wiring_property(self):
        # the backward input is exactly the channel-swapped, sign-flipped
        # forward input on the same GMF pair
        torch.manual_seed(1)
        fusion = TemporalFusion(gmf_channels=4)
        a = torch.randn(1, 4, 2, 2, dtype=torch.float64)
        b = torch.randn(1, 4, 2, 2, dtype=torch.float64)
        rec = self._recorded(fusion, a, b)
        fwd, bwd = rec["forward"], rec["backward"]
        assert torch.equal(bwd[:, :4], -fwd[:, 4:])
        assert torch.equal(bwd[:, 4:], -fwd[:, :4])

    def test_zero_inputs_zero_bias(self):
        torch.manual_seed(0)
        fusion = TemporalFusion(gmf_channels=5)
        _zero_biases(fusion)
        z = torch.zeros(1, 5, 3, 4, dtype=torch.float64)
        assert torch.equal(fusion(z, z, "forward"), torch.zeros(1, 5, 3, 4, dtype=torch.float64))

    def test_negation_gradient(self):
        # d(out)/d(gmf_bwd) equals the negated gradient w.r.t. an un-negated
        # copy, checked with finite differences through both wirings
        torch.manual_seed(2)
        fusion = TemporalFusion(gmf_channels=3)
        a = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        b0 = torch.randn(1, 3, 2, 2, dtype=torch.float64)

        def through_negated(b):
            return fusion(a, b, "forward").sum()

        def through_plain(b):
            return fusion.conv2(torch.relu(fusion.conv1(torch.cat([a, b], dim=1)))).sum()

        g_neg = fd_grad(through_negated, b0.clone())
        g_plain = fd_grad(through_plain, (-b0).clone())
        assert torch.allclose(g_neg, -g_plain, atol=1e-8)

    def test_shape_mismatch(self):
        torch.manual_seed(0)
        fusion = TemporalFusion(gmf_channels=4)
        with pytest.raises(ValueError):
            fusion(torch.zeros(1, 4, 2, 2), torch.zeros(1, 4, 2, 3), "forward")

    def test_unknown_direction(self):
        torch.manual_seed(0)
        fusion = TemporalFusion(gmf_channels=4)
        z = torch.zeros(1, 4, 2, 2)
        with pytest.raises(ValueError, match="direction"):
            fusion(z, z, "sideways")


class TestMotionEncoder:
    def _inputs(self, rng, h=3, w=4, corr_ch=36, gmf_ch=6):
        t = lambda *shape: torch.tensor(rng.normal(size=shape))
        return (
            t(1, 3, h, w), t(1, 2, h, w), t(1, 1, h, w), t(1, corr_ch, h, w), t(1, gmf_ch, h, w),
        )

    def test_zero_inputs_zero_bias(self):
        torch.manual_seed(0)
        enc = MotionEncoder(corr_channels=36, gmf_channels=6, motion_channels=10)
        _zero_biases(enc)
        zeros = [torch.zeros_like(x) for x in self._inputs(np.random.default_rng(0))]
        out = enc(*zeros)
        assert torch.equal(out, torch.zeros_like(out))

    def test_shape_contract(self):
        torch.manual_seed(0)
        enc = MotionEncoder(corr_channels=36, gmf_channels=6, motion_channels=10)
        out = enc(*self._inputs(np.random.default_rng(1)))
        assert out.shape == (1, 10, 3, 4)

    def test_gmf_jacobian_nonzero(self):
        torch.manual_seed(0)
        enc = MotionEncoder(corr_channels=36, gmf_channels=6, motion_channels=10)
        inputs = self._inputs(np.random.default_rng(2))

        def fn(gmf):
            return enc(*inputs[:4], gmf).sum()

        fd = fd_grad(fn, inputs[4].clone(), eps=1e-6)
        assert fd.abs().max().item() > 1e-6

    def test_spatial_mismatch(self):
        torch.manual_seed(0)
        enc = MotionEncoder(corr_channels=36, gmf_channels=6, motion_channels=10)
        inputs = list(self._inputs(np.random.default_rng(3)))
        inputs[2] = torch.zeros(1, 1, 5, 5, dtype=torch.float64)
        with pytest.raises(ValueError, match="f_d"):
            enc(*inputs)


class TestPositionalAttention:
    def _module(self, h=2, w=2, cg=4, cm=3, d=5, seed=0):
        torch.manual_seed(seed)
        return PositionalAttention(
            context_channels=cg, motion_channels=cm, embed_dim=d, base_shape=(h, w)
        )

    def test_zero_query_uniform_rows(self):
        attn = self._module()
        with torch.no_grad():
            attn.q_proj.weight.zero_()
            attn.q_proj.bias.zero_()
        g = torch.randn(1, 4, 2, 2, dtype=torch.float64)
        A = attn.attention_map(g)
        assert torch.allclose(A, torch.full((1, 4, 4), 0.25, dtype=torch.float64), atol=1e-12)

    def test_rows_sum_to_one(self):
        attn = self._module(h=6, w=8)
        g = torch.randn(2, 4, 6, 8, dtype=torch.float64) * 5
        A = attn.attention_map(g)
        assert (A.sum(dim=-1) - 1).abs().max().item() < 1e-6
        assert bool((A > 0).all()) and bool((A < 1).all())

    def test_hand_computed_2x2(self):
        # S = 4: assemble scores by hand from the tables and a fixed query
        attn = self._module(h=2, w=2, d=2)
        g = torch.randn(1, 4, 2, 2, dtype=torch.float64)
        A = attn.attention_map(g)[0]
        q = attn.q_proj(g)[0].permute(1, 2, 0).reshape(4, 2)  # (S, D)
        P = attn.assemble_table(2, 2)  # (S, S, D)
        scores = torch.einsum("sd,std->st", q, P) / np.sqrt(2)
        expected = torch.softmax(scores, dim=-1)
        assert torch.allclose(A, expected, atol=1e-12)

    def test_offset_only_dependence(self):
        attn = self._module(h=6, w=8)
        P = attn.assemble_table(6, 8)
        S = 6 * 8

        def pos(i, j):
            return i * 8 + j

        # all pairs with equal offsets carry exactly equal embeddings
        rng = np.random.default_rng(4)
        for _ in range(200):
            i, i2 = rng.integers(0, 6, size=2)
            j, j2 = rng.integers(0, 8, size=2)
            di, dj = i2 - i, j2 - j
            base = P[pos(i, j), pos(i2, j2)]
            for io in range(6):
                for jo in range(8):
                    if 0 <= io + di < 6 and 0 <= jo + dj < 8:
                        other = P[pos(io, jo), pos(io + di, jo + dj)]
                        assert torch.equal(base, other)

    def test_diagonal_rows_identical(self):
        attn = self._module(h=3, w=4)
        P = attn.assemble_table(3, 4)
        S = 12
        diag = torch.stack([P[s, s] for s in range(S)])
        assert torch.equal(diag, diag[0].expand_as(diag))

    def test_resolution_transfer_resamples(self):
        attn = self._module(h=4, w=4)
        ph, pw = attn.offset_tables(8, 8)
        assert ph.shape == (15, attn.embed_dim)
        # endpoints map to endpoints under align_corners resampling
        assert torch.allclose(ph[0], attn.p_h[0])
        assert torch.allclose(ph[-1], attn.p_h[-1])


class TestAggregatePosition:
    def test_alpha_zero_identity(self):
        rng = np.random.default_rng(5)
        M = torch.tensor(rng.normal(size=(3, 2, 2)))
        A = torch.tensor(rng.uniform(0, 1, size=(4, 4)))
        out = aggregate_position(M, A, alpha=0.0)
        assert torch.equal(out, M)

    def test_uniform_attention_is_mean(self):
        rng = np.random.default_rng(6)
        M = torch.tensor(rng.normal(size=(3, 2, 2)))
        A = torch.full((4, 4), 0.25, dtype=torch.float64)
        out = aggregate_position(M, A, alpha=1.0)
        mean = M.reshape(3, -1).mean(dim=1).reshape(3, 1, 1)
        assert torch.allclose(out, M + mean, atol=1e-12)

    def test_permutation_attention(self):
        rng = np.random.default_rng(7)
        M = torch.tensor(rng.normal(size=(2, 2, 2)))
        perm = torch.tensor([2, 0, 3, 1])
        A = torch.zeros(4, 4, dtype=torch.float64)
        A[torch.arange(4), perm] = 1.0
        out = aggregate_position(M, A, alpha=1.0)
        flat = M.reshape(2, 4)
        expected = M + flat[:, perm].reshape(2, 2, 2)
        assert torch.equal(out, expected)

    def test_module_aggregate_alpha_init_zero(self):
        torch.manual_seed(0)
        attn = PositionalAttention(context_channels=4, motion_channels=3, embed_dim=5, base_shape=(2, 2))
        assert float(attn.alpha.detach()) == 0.0
        M = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        A = torch.softmax(torch.randn(1, 4, 4, dtype=torch.float64), dim=-1)
        assert torch.equal(attn.aggregate(M, A), M)

    def test_gradcheck_small_grid(self):
        torch.manual_seed(1)
        attn = PositionalAttention(context_channels=3, motion_channels=2, embed_dim=4, base_shape=(2, 3))
        g0 = torch.randn(1, 3, 2, 3, dtype=torch.float64)
        M = torch.randn(1, 2, 2, 3, dtype=torch.float64)
        with torch.no_grad():
            attn.alpha.fill_(0.7)
        weights = torch.randn(1, 2, 2, 3, dtype=torch.float64)

        def fn(g):
            A = attn.attention_map(g)
            return (attn.aggregate(M, A) * weights).sum()

        auto = autograd_grad(fn, g0)
        fd = fd_grad(fn, g0.clone())
        scale = fd.abs().max().clamp_min(1e-8)
        assert ((auto - fd).abs().max() / scale).item() < 1e-3
