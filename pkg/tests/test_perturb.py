import numpy as np
import pytest
import torch

from c3gan.core import make_rng
from c3gan.perturb import AffineParams, policy_for, sample_affine, warp

from .util import finite_difference_check


def params(scale=1.0, rot=0.0, tx=0.0, ty=0.0, b=1):
    return AffineParams(
        torch.full((b,), float(scale)), torch.full((b,), float(rot)), torch.tensor([[tx, ty]] * b, dtype=torch.float32)
    )


class TestPolicies:
    def test_weak(self):
        p = policy_for("weak")
        assert p.scale_range == (0.9, 1.1)
        assert p.rotation_range == (-2.0, 2.0)
        assert p.translate_range == (-0.08, 0.08)

    def test_strong(self):
        p = policy_for("strong")
        assert p.scale_range == (0.8, 1.5)
        assert p.rotation_range == (-15.0, 15.0)
        assert p.translate_range == (-0.15, 0.15)

    def test_unknown(self):
        with pytest.raises(ValueError):
            policy_for("medium")


class TestSampleAffine:
    def test_weak_scale_mean(self):
        p = sample_affine(policy_for("weak"), 100_000, make_rng(0))
        assert abs(p.scale.double().mean().item() - 1.0) < 0.01

    @pytest.mark.parametrize("name", ["weak", "strong"])
    def test_within_intervals(self, name):
        pol = policy_for(name)
        p = sample_affine(pol, 100_000, make_rng(1))
        assert p.scale.min() >= pol.scale_range[0] and p.scale.max() <= pol.scale_range[1]
        assert p.rotation_deg.min() >= pol.rotation_range[0] and p.rotation_deg.max() <= pol.rotation_range[1]
        assert p.translate.min() >= pol.translate_range[0] and p.translate.max() <= pol.translate_range[1]

    def test_deterministic(self):
        a = sample_affine(policy_for("strong"), 10, make_rng(4))
        b = sample_affine(policy_for("strong"), 10, make_rng(4))
        assert torch.equal(a.scale, b.scale) and torch.equal(a.translate, b.translate)

    def test_independent_per_element(self):
        p = sample_affine(policy_for("weak"), 1000, make_rng(2))
        corr = np.corrcoef(p.scale.numpy(), p.rotation_deg.numpy())[0, 1]
        assert abs(corr) < 0.1


class TestWarp:
    def test_identity(self):
        g = torch.Generator().manual_seed(0)
        mask = torch.rand(3, 1, 32, 32, generator=g)
        tex = torch.rand(3, 3, 32, 32, generator=g) * 2 - 1
        wm, wt = warp(mask, tex, params(b=3))
        assert (wm - mask).abs().max() < 1e-6
        assert (wt - tex).abs().max() < 1e-6

    def test_translation_moves_mass_right(self):
        size = 16
        mask = torch.zeros(1, 1, size, size)
        mask[0, 0, 5, 3] = 1.0  # a delta in the left half
        tex = mask.repeat(1, 3, 1, 1)
        wm, wt = warp(mask, tex, params(tx=0.5))
        expected = torch.zeros_like(mask)
        expected[0, 0, 5, 3 + size // 2] = 1.0
        assert torch.allclose(wm, expected, atol=1e-6)
        assert torch.allclose(wt, expected.repeat(1, 3, 1, 1), atol=1e-6)
        assert wm[..., : size // 2].abs().max() == 0

    def test_left_half_mask_shifted(self):
        size = 32
        mask = torch.zeros(1, 1, size, size)
        mask[..., : size // 2] = 1.0
        wm, _ = warp(mask, torch.zeros(1, 3, size, size), params(tx=0.5))
        assert torch.all(wm[..., : size // 2] == 0)
        assert torch.allclose(wm[..., size // 2:], torch.ones(1, 1, size, size // 2), atol=1e-6)

    def test_rotation_quarter_turn(self):
        size = 8
        g = torch.Generator().manual_seed(3)
        mask = torch.rand(1, 1, size, size, generator=g)
        wm, _ = warp(mask, torch.zeros(1, 3, size, size), params(rot=90.0))
        turned = torch.rot90(mask, k=1, dims=(2, 3))
        other = torch.rot90(mask, k=-1, dims=(2, 3))
        assert min((wm - turned).abs().max(), (wm - other).abs().max()) < 1e-5

    def test_same_transform_for_mask_and_texture(self):
        g = torch.Generator().manual_seed(2)
        mask = torch.rand(4, 1, 16, 16, generator=g)
        p = sample_affine(policy_for("strong"), 4, make_rng(0))
        wm, wt = warp(mask, mask.repeat(1, 3, 1, 1), p)
        assert torch.allclose(wt, wm.expand_as(wt), atol=1e-6)

    def test_mask_stays_in_unit_interval(self):
        g = torch.Generator().manual_seed(1)
        mask = torch.rand(64, 1, 16, 16, generator=g)
        p = sample_affine(policy_for("strong"), 64, make_rng(1))
        wm, _ = warp(mask, torch.zeros(64, 3, 16, 16), p)
        assert wm.min() >= 0 and wm.max() <= 1

    def test_alignment_on_smooth_inputs(self):
        size = 32
        yy, xx = torch.meshgrid(torch.linspace(-1, 1, size), torch.linspace(-1, 1, size), indexing="ij")
        mask = torch.sigmoid(3 * (0.6 - (xx**2 + yy**2).sqrt()))[None, None]
        tex = torch.stack([torch.sin(2 * xx), torch.cos(2 * yy), xx * yy])[None]
        p = sample_affine(policy_for("strong"), 1, make_rng(7))
        wm, wt = warp(mask, tex, p)
        _, w_prod = warp(mask, tex * mask, p)
        assert (w_prod - wm * wt).abs().mean() < 1e-2

    def test_out_of_frame_is_zero(self):
        mask = torch.ones(1, 1, 16, 16)
        wm, wt = warp(mask, torch.ones(1, 3, 16, 16), params(scale=0.5))
        assert wm[0, 0, 0, 0] == 0 and wt[0, 0, 0, 0] == 0
        assert wm[0, 0, 8, 8] == 1

    def test_gradient_matches_finite_differences(self):
        g = torch.Generator().manual_seed(0)
        mask = (0.2 + 0.6 * torch.rand(2, 1, 12, 12, generator=g)).double()
        tex = (torch.rand(2, 3, 12, 12, generator=g) * 2 - 1).double()
        p = sample_affine(policy_for("strong"), 2, make_rng(3))
        weights = torch.randn(2, 4, 12, 12, generator=g).double()

        def f(m, t):
            wm, wt = warp(m, t, p)
            return (torch.cat([wm, wt], 1) * weights).sum()

        finite_difference_check(f, [mask, tex], n_coords=50, seed=1)

    def test_batch_mismatch(self):
        with pytest.raises(ValueError):
            warp(torch.zeros(2, 1, 8, 8), torch.zeros(2, 3, 8, 8), params(b=3))
