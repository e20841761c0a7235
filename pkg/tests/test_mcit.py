"""Class-token transformer: shapes, presence head, instrument awareness."""

import pytest
import torch

import tripletdet as td
from tripletdet.backbone import SceneFeatures
from tripletdet.mcit import ClassTokenTransformer


def make_mcit(d=32, heads=4, t_l=2, n_tokens=4, norm_first=False):
    cfg = td.ModelConfig(image_height=64, image_width=112, d=d, b_l=1,
                         t_l=t_l, heads=heads, backbone="toy",
                         norm_first=norm_first)
    torch.manual_seed(0)
    m = ClassTokenTransformer(cfg, n_tokens).eval()
    # zero-init tokens never move in a fresh module; give them content so
    # shape/sensitivity tests see distinct token rows
    with torch.no_grad():
        m.tokens.add_(torch.randn_like(m.tokens) * 0.1)
    return m


def scene(b=1, hw=28, d=32, seed=1):
    g = torch.Generator().manual_seed(seed)
    return SceneFeatures(grid=torch.randn(b, hw, d, generator=g), h=4, w=7)


class TestShapes:
    @pytest.mark.parametrize("o", [0, 1, 5])
    def test_sequence_length_is_grid_plus_tokens(self, o):
        m = make_mcit()
        out = m(scene(), [torch.randn(o, 32)])
        assert out.sequence.shape == (1, 28 + 4, 32)
        assert out.output_tokens.shape == (1, 4, 32)
        assert out.target_logits.shape == (1, 4)

    def test_full_scale_token_count(self):
        m = make_mcit(n_tokens=15, t_l=4)
        out = m(scene(), [torch.randn(2, 32)])
        assert out.sequence.shape[1] == 28 + 15
        assert out.sequence.shape == (1, 43, 32)

    def test_mixed_instrument_counts_in_one_batch(self):
        m = make_mcit()
        out = m(scene(b=3), [torch.randn(2, 32), torch.zeros(0, 32),
                             torch.randn(1, 32)])
        assert out.sequence.shape == (3, 32, 32)

    def test_frame_count_mismatch_raises(self):
        m = make_mcit()
        with pytest.raises(ValueError):
            m(scene(b=2), [torch.randn(1, 32)])


class TestTokens:
    def test_tokens_start_at_zero(self):
        cfg = td.ModelConfig(image_height=64, image_width=112, d=32, b_l=1,
                             t_l=2, heads=4, backbone="toy")
        m = ClassTokenTransformer(cfg, 4)
        assert torch.equal(m.tokens, torch.zeros(4, 32))

    def test_presence_logits_are_head_of_token_mean(self):
        """Logits equal the linear head applied to the mean output token."""
        m = make_mcit()
        out = m(scene(b=2), [torch.randn(2, 32), torch.zeros(0, 32)])
        expected = m.presence_head(out.output_tokens.mean(dim=1))
        torch.testing.assert_close(out.target_logits, expected,
                                   rtol=0, atol=1e-6)

    def test_identity_head_on_identical_rows(self):
        """Mean of identical token rows u maps to exactly head(u)."""
        m = make_mcit(d=32, n_tokens=32)
        with torch.no_grad():
            m.presence_head.weight.copy_(torch.eye(32))
            m.presence_head.bias.zero_()
        u = torch.randn(32)
        rows = u.expand(32, 32)  # every "output token" equals u
        logits = m.presence_head(rows.mean(dim=0))
        torch.testing.assert_close(logits, u, rtol=0, atol=1e-6)


class TestInstrumentAwareness:
    def test_instruments_change_output_tokens(self):
        m = make_mcit()
        sc = scene()
        a = m(sc, [torch.randn(2, 32)])
        b = m(sc, [torch.randn(2, 32) + 1.0])
        assert not torch.allclose(a.output_tokens, b.output_tokens)

    def test_instrument_free_forward_matches_singleton_batch(self):
        """A zero-instrument frame inside a mixed batch equals the same frame
        run alone: padding never leaks into attention."""
        m = make_mcit()
        sc = scene(b=2)
        mixed = m(sc, [torch.randn(3, 32), torch.zeros(0, 32)])
        alone = m(SceneFeatures(grid=sc.grid[1:2], h=4, w=7), [torch.zeros(0, 32)])
        torch.testing.assert_close(mixed.sequence[1], alone.sequence[0],
                                   rtol=0, atol=1e-6)

    def test_instrument_gradient_reaches_tokens(self):
        m = make_mcit()
        feats = torch.randn(2, 32, requires_grad=True)
        out = m(scene(), [feats])
        out.output_tokens.sum().backward()
        assert feats.grad is not None
        assert feats.grad.abs().sum() > 0

    def test_pre_norm_variant_runs(self):
        m = make_mcit(norm_first=True)
        out = m(scene(), [torch.randn(1, 32)])
        assert torch.isfinite(out.sequence).all()
