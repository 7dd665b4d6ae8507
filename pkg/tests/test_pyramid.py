import numpy as np
import pytest
import torch

from nextact.backbone import (
    Backbone2D,
    Backbone3D,
    extract_fast_features,
    extract_still_features,
)
from nextact.pyramid import (
    CombinedPyramid,
    FeaturePyramidNetwork,
    FuseLevel,
    fuse_level,
    lift_3d_to_2d,
)

TOY2D = (8, 16, 32, 64)
TOY3D = (4, 8, 16, 24)


def zero_conv(conv):
    torch.nn.init.zeros_(conv.weight)
    torch.nn.init.zeros_(conv.bias)


def identity_conv(conv):
    """3x3 conv acting as the identity (center tap only)."""
    zero_conv(conv)
    with torch.no_grad():
        for c in range(conv.in_channels):
            conv.weight[c, c, 1, 1] = 1.0


class TestStillBranch:
    def test_reference_shapes(self):
        bb = Backbone2D()
        levels = bb(torch.zeros(1, 3, 800, 1280))
        shapes = [tuple(l.shape[1:]) for l in levels]
        assert shapes == [
            (256, 200, 320),
            (512, 100, 160),
            (1024, 50, 80),
            (2048, 25, 40),
        ]

    def test_minimum_input(self):
        bb = Backbone2D()
        levels = bb(torch.zeros(1, 3, 64, 64))
        assert tuple(levels[-1].shape[1:]) == (2048, 2, 2)

    def test_toy_channel_plan(self):
        bb = Backbone2D(TOY2D)
        levels = extract_still_features(torch.zeros(1, 3, 96, 96), bb)
        assert [l.shape[1] for l in levels] == list(TOY2D)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="smaller"):
            Backbone2D(TOY2D)(torch.zeros(1, 3, 32, 32))


class TestFastBranch:
    def test_reference_level0_shape(self):
        bb = Backbone3D()
        levels = bb(torch.zeros(1, 3, 16, 256, 410))
        assert tuple(levels[0].shape[1:]) == (24, 16, 64, 103)

    def test_zero_input_zero_features_when_bias_free(self):
        bb = Backbone3D(TOY3D)
        for m in bb.modules():
            if isinstance(m, torch.nn.Conv3d):
                torch.nn.init.zeros_(m.bias)
        levels = extract_fast_features(torch.zeros(1, 3, 16, 64, 64), bb)
        for l in levels:
            assert torch.all(l == 0)

    def test_wrong_clip_length(self):
        bb = Backbone3D(TOY3D, clip_len=16)
        with pytest.raises(ValueError, match="clip length"):
            bb(torch.zeros(1, 3, 8, 64, 64))


class TestLift:
    def test_constant_in_constant_out(self):
        x = torch.full((1, 4, 5, 3, 3), 2.5)
        out = lift_3d_to_2d(x, (9, 9))
        assert out.shape == (1, 4, 9, 9)
        assert torch.all(out == 2.5)

    def test_time_constant_equals_single_slice_upsample(self):
        rng = torch.Generator().manual_seed(0)
        frame = torch.rand(1, 3, 4, 5, generator=rng)
        x = frame.unsqueeze(2).repeat(1, 1, 6, 1, 1)
        out = lift_3d_to_2d(x, (8, 10))
        single = torch.nn.functional.interpolate(frame, size=(8, 10), mode="nearest")
        # Mean of T identical floats is not bit-identical to the value.
        assert torch.allclose(out, single, atol=1e-7)

    def test_2x2_to_4x4_replication(self):
        x = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 1, 2, 2)
        out = lift_3d_to_2d(x, (4, 4))[0, 0]
        expected = torch.tensor(
            [
                [1.0, 1.0, 2.0, 2.0],
                [1.0, 1.0, 2.0, 2.0],
                [3.0, 3.0, 4.0, 4.0],
                [3.0, 3.0, 4.0, 4.0],
            ]
        )
        assert torch.equal(out, expected)

    def test_matches_indexwise_oracle(self):
        rng = torch.Generator().manual_seed(1)
        x = torch.rand(1, 2, 3, 4, 5, generator=rng)
        th, tw = 7, 9
        out = lift_3d_to_2d(x, (th, tw))
        mean = x.mean(dim=2)
        for y in range(th):
            for xx in range(tw):
                sy = int(np.floor(y * 4 / th))
                sx = int(np.floor(xx * 5 / tw))
                assert torch.equal(out[0, :, y, xx], mean[0, :, sy, sx])


class TestFuseLevel:
    def test_zero_pre_identity_post_passthrough(self):
        fuse = FuseLevel(4, 8)
        zero_conv(fuse.conv_pre)
        identity_conv(fuse.conv_post)
        feat2d = torch.rand(1, 8, 6, 6)
        lifted = torch.rand(1, 4, 6, 6)
        out = fuse(feat2d, lifted)
        assert torch.allclose(out, feat2d, atol=1e-6)

    def test_reference_channel_plan(self):
        fuse = FuseLevel(24, 256)
        assert fuse.conv_pre.in_channels == 24
        assert fuse.conv_pre.out_channels == 256
        assert fuse.conv_post.in_channels == 256
        assert fuse.conv_post.out_channels == 256

    def test_functional_matches_module(self):
        fuse = FuseLevel(4, 8)
        feat2d = torch.rand(2, 8, 5, 5)
        lifted = torch.rand(2, 4, 5, 5)
        assert torch.equal(
            fuse(feat2d, lifted),
            fuse_level(feat2d, lifted, fuse.conv_pre, fuse.conv_post),
        )

    def test_channel_mismatch(self):
        fuse = FuseLevel(4, 8)
        with pytest.raises(RuntimeError):
            fuse(torch.rand(1, 8, 5, 5), torch.rand(1, 6, 5, 5))


class TestFPN:
    def test_level_count_and_channels(self):
        fpn = FeaturePyramidNetwork(TOY2D, out_channels=32)
        fused = [
            torch.rand(1, c, 24 // (2 ** i), 24 // (2 ** i))
            for i, c in enumerate(TOY2D)
        ]
        out = fpn(fused)
        assert len(out) == 5
        assert all(l.shape[1] == 32 for l in out)

    def test_zero_in_zero_out_with_zero_bias(self):
        fpn = FeaturePyramidNetwork(TOY2D, out_channels=16)
        for m in fpn.modules():
            if isinstance(m, torch.nn.Conv2d):
                torch.nn.init.zeros_(m.bias)
        fused = [torch.zeros(1, c, 16 // (2 ** i), 16 // (2 ** i)) for i, c in enumerate(TOY2D)]
        out = fpn(fused)
        for l in out:
            assert torch.all(l == 0)

    def test_spatial_halving(self):
        fpn = FeaturePyramidNetwork(TOY2D, out_channels=16)
        sizes = [25, 13, 7, 4]
        fused = [torch.rand(1, c, s, s) for c, s in zip(TOY2D, sizes)]
        out = fpn(fused)
        got = [l.shape[-1] for l in out]
        for a, b in zip(got, got[1:]):
            assert abs(a - 2 * b) <= 2  # halving within rounding


class TestCombined:
    def _model(self, **kw):
        return CombinedPyramid(Backbone2D(TOY2D), Backbone3D(TOY3D), out_channels=16, **kw)

    def test_composition_is_deterministic(self):
        torch.manual_seed(0)
        m = self._model()
        still = torch.rand(1, 3, 96, 96)
        video = torch.rand(1, 3, 16, 32, 32)
        a = m(still, video)
        b = m(still, video)
        for x, y in zip(a, b):
            assert torch.equal(x, y)

    def test_no_3d_matches_still_only_path(self):
        torch.manual_seed(0)
        m = self._model()
        m_no3d = self._model(use_3d=False)
        m_no3d.load_state_dict(m.state_dict())
        still = torch.rand(1, 3, 96, 96)
        a = m_no3d(still, torch.rand(1, 3, 16, 32, 32))
        b = m_no3d(still, None)
        for x, y in zip(a, b):
            assert torch.equal(x, y)

    def test_zero_pre_identity_post_equals_still_only(self):
        torch.manual_seed(0)
        m = self._model()
        for f in m.fuse:
            zero_conv(f.conv_pre)
            identity_conv(f.conv_post)
        still = torch.rand(1, 3, 96, 96)
        video = torch.rand(1, 3, 16, 32, 32)
        with_video = m(still, video)
        still_only = m(still, None)
        for x, y in zip(with_video, still_only):
            assert torch.allclose(x, y, atol=1e-5)

    def test_post_pyramid_fusion_shapes(self):
        m = self._model(post_pyramid_fusion=True)
        out = m(torch.rand(1, 3, 96, 96), torch.rand(1, 3, 16, 32, 32))
        assert len(out) == 5
        assert all(l.shape[1] == 16 for l in out)

    def test_no_conv_post_sum_changes_output(self):
        torch.manual_seed(0)
        m1 = self._model()
        m2 = self._model(conv_post_sum=False)
        m2.load_state_dict(m1.state_dict())
        still = torch.rand(1, 3, 96, 96)
        video = torch.rand(1, 3, 16, 32, 32)
        a = m1(still, video)
        b = m2(still, video)
        assert not all(torch.equal(x, y) for x, y in zip(a, b))
