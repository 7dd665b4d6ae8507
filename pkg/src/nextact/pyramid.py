"""Combined feature pyramid: lift 3D features into 2D, fuse with the
still branch, and build a standard multi-scale pyramid.

Per level, the 3D map is spatially upsampled with nearest-neighbor
interpolation to the 2D level's size and averaged over time, passed
through a 3x3 pre-sum convolution mapping it to the 2D channel count,
summed with the 2D map, and smoothed by a 3x3 post-sum convolution. The
fused maps feed a top-down feature pyramid with 1x1 lateral projections
to a fixed channel width, plus one extra stride-2-pooled coarsest level
used only for proposal generation.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import Backbone2D, Backbone3D, extract_fast_features, extract_still_features

PYRAMID_CHANNELS = 256


def lift_3d_to_2d(level3d: torch.Tensor, target_hw: Tuple[int, int]) -> torch.Tensor:
    """Temporal mean + nearest-neighbor spatial upsample of one 3D level.

    ``level3d`` is [B, C', T', H', W']; output is [B, C', H_i, W_i] where
    every output pixel equals exactly one input pixel's temporal mean (no
    blending). The output size is forced to ``target_hw``, never
    recomputed from scale factors.
    """
    if level3d.dim() != 5:
        raise ValueError(f"expected [B, C, T, H, W], got {tuple(level3d.shape)}")
    # Averaging over time commutes with nearest-neighbor index gathering.
    pooled = level3d.mean(dim=2)
    return F.interpolate(pooled, size=tuple(target_hw), mode="nearest")


class FuseLevel(nn.Module):
    """Pre-sum and post-sum 3x3 convolutions for one pyramid level."""

    def __init__(self, channels3d: int, channels2d: int):
        super().__init__()
        self.conv_pre = nn.Conv2d(channels3d, channels2d, kernel_size=3, padding=1)
        self.conv_post = nn.Conv2d(channels2d, channels2d, kernel_size=3, padding=1)

    def forward(
        self,
        feat2d: torch.Tensor,
        lifted3d: Optional[torch.Tensor],
        skip_post: bool = False,
    ) -> torch.Tensor:
        if lifted3d is None:
            summed = feat2d
        else:
            if lifted3d.shape[-2:] != feat2d.shape[-2:]:
                raise ValueError(
                    f"spatial mismatch {tuple(lifted3d.shape[-2:])} vs {tuple(feat2d.shape[-2:])}"
                )
            summed = feat2d + self.conv_pre(lifted3d)
        return summed if skip_post else self.conv_post(summed)


def fuse_level(
    feat2d: torch.Tensor,
    lifted3d: torch.Tensor,
    conv_pre: nn.Conv2d,
    conv_post: nn.Conv2d,
) -> torch.Tensor:
    """Functional form: conv_post(feat2d + conv_pre(lifted3d))."""
    if conv_pre.in_channels != lifted3d.shape[1]:
        raise ValueError("conv_pre channel mismatch")
    if conv_post.in_channels != feat2d.shape[1]:
        raise ValueError("conv_post channel mismatch")
    return conv_post(feat2d + conv_pre(lifted3d))


class FeaturePyramidNetwork(nn.Module):
    """Top-down pyramid over 4 input levels, all output levels at a fixed
    channel width, plus one extra stride-2 max-pooled coarsest level."""

    def __init__(self, in_channels: Sequence[int], out_channels: int = PYRAMID_CHANNELS):
        super().__init__()
        self.out_channels = out_channels
        self.lateral = nn.ModuleList(
            nn.Conv2d(c, out_channels, kernel_size=1) for c in in_channels
        )
        self.smooth = nn.ModuleList(
            nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1)
            for _ in in_channels
        )

    def forward(self, fused: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        if len(fused) != len(self.lateral):
            raise ValueError(f"expected {len(self.lateral)} fused levels")
        laterals = [lat(x) for lat, x in zip(self.lateral, fused)]
        # Top-down pathway, coarse to fine, upsampled to the exact finer size.
        for i in range(len(laterals) - 2, -1, -1):
            upsampled = F.interpolate(
                laterals[i + 1], size=laterals[i].shape[-2:], mode="nearest"
            )
            laterals[i] = laterals[i] + upsampled
        outputs = [sm(x) for sm, x in zip(self.smooth, laterals)]
        outputs.append(F.max_pool2d(outputs[-1], kernel_size=1, stride=2))
        return outputs


def build_pyramid(fused: Sequence[torch.Tensor], fpn: FeaturePyramidNetwork) -> List[torch.Tensor]:
    """Functional form of the pyramid layer (4 fused maps in, 5 levels out)."""
    return fpn(fused)


class CombinedPyramid(nn.Module):
    """Full two-branch backbone: still branch, fast branch, per-level
    fusion and the final feature pyramid.

    Ablation switches:
      use_3d=False        drop the fast branch; each level is
                          conv_post(feat2d) only.
      conv_post_sum=False skip the post-sum smoothing convolution.
      post_pyramid_fusion build independent 2D and 3D pyramids first,
                          then fuse them per level.
    """

    def __init__(
        self,
        backbone2d: Backbone2D,
        backbone3d: Backbone3D,
        out_channels: int = PYRAMID_CHANNELS,
        use_3d: bool = True,
        conv_post_sum: bool = True,
        post_pyramid_fusion: bool = False,
    ):
        super().__init__()
        self.backbone2d = backbone2d
        self.backbone3d = backbone3d
        self.use_3d = use_3d
        self.conv_post_sum = conv_post_sum
        self.post_pyramid_fusion = post_pyramid_fusion
        self.out_channels = out_channels
        self.fuse = nn.ModuleList(
            FuseLevel(c3, c2)
            for c3, c2 in zip(backbone3d.channels, backbone2d.channels)
        )
        self.fpn = FeaturePyramidNetwork(backbone2d.channels, out_channels)
        if post_pyramid_fusion:
            self.fpn3d = FeaturePyramidNetwork(backbone3d.channels, out_channels)
            self.fuse_post = nn.ModuleList(
                FuseLevel(out_channels, out_channels) for _ in range(4)
            )

    def forward(self, still: torch.Tensor, video: Optional[torch.Tensor]) -> List[torch.Tensor]:
        feats2d = extract_still_features(still, self.backbone2d)
        if not self.use_3d or video is None:
            fused = [f(x, None) for f, x in zip(self.fuse, feats2d)]
            return self.fpn(fused)

        feats3d = extract_fast_features(video, self.backbone3d)
        lifted = [
            lift_3d_to_2d(f3, f2.shape[-2:]) for f3, f2 in zip(feats3d, feats2d)
        ]
        if self.post_pyramid_fusion:
            p2d = self.fpn(feats2d)
            p3d = self.fpn3d(lifted)
            out = [f(a, b) for f, a, b in zip(self.fuse_post, p2d[:4], p3d[:4])]
            out.append(F.max_pool2d(out[-1], kernel_size=1, stride=2))
            return out
        fused = [
            f(x2, x3, skip_post=not self.conv_post_sum)
            for f, x2, x3 in zip(self.fuse, feats2d, lifted)
        ]
        return self.fpn(fused)


def forward_backbone(
    still: torch.Tensor, video: Optional[torch.Tensor], model: CombinedPyramid
) -> List[torch.Tensor]:
    """End-to-end composition: extract, lift, fuse, build."""
    return model(still, video)
