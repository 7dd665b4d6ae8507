"""Pluggable 2D and 3D backbones.

Any 2D backbone emitting 4 feature levels at strides [4, 8, 16, 32] and
any 3D backbone emitting 4 spatiotemporally strided levels satisfies the
contract; only the level/channel plan is normative, not the layer graph.
The toy backbones below are small strided CNNs meant for desk-scale
training and tests. Reference channel plans default to [256, 512, 1024,
2048] (2D) and [24, 48, 96, 192] (3D).
"""

from __future__ import annotations

from typing import List, Sequence

import torch
from torch import nn

STRIDES = (4, 8, 16, 32)
REFERENCE_CHANNELS_2D = (256, 512, 1024, 2048)
REFERENCE_CHANNELS_3D = (24, 48, 96, 192)


class Backbone2D(nn.Module):
    """Strided CNN producing a 4-level feature stack from a still frame.

    Input [B, 3, H, W] with H, W >= 64; output levels at strides
    [4, 8, 16, 32], ordered fine to coarse.
    """

    def __init__(self, channels: Sequence[int] = REFERENCE_CHANNELS_2D):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("2D backbone needs exactly 4 channel counts")
        self.channels = tuple(channels)
        self.strides = STRIDES
        self.stem = nn.Conv2d(3, channels[0], kernel_size=7, stride=4, padding=3)
        self.stages = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], kernel_size=3, stride=2, padding=1)
            for i in range(3)
        )
        self.act = nn.ReLU(inplace=False)

    def forward(self, still: torch.Tensor) -> List[torch.Tensor]:
        if still.dim() != 4 or still.shape[1] != 3:
            raise ValueError(f"expected [B, 3, H, W] still input, got {tuple(still.shape)}")
        if still.shape[-2] < 64 or still.shape[-1] < 64:
            raise ValueError(
                f"still input {tuple(still.shape[-2:])} smaller than minimum 64x64"
            )
        x = self.act(self.stem(still))
        levels = [x]
        for stage in self.stages:
            x = self.act(stage(x))
            levels.append(x)
        return levels


class Backbone3D(nn.Module):
    """Strided 3D CNN producing a 4-level feature stack from a clip.

    Input [B, 3, T, h, w]; spatial strides align level-for-level with the
    2D stack relative to the video input; the temporal dimension is
    preserved.
    """

    def __init__(
        self,
        channels: Sequence[int] = REFERENCE_CHANNELS_3D,
        clip_len: int = 16,
    ):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("3D backbone needs exactly 4 channel counts")
        self.channels = tuple(channels)
        self.strides = STRIDES
        self.clip_len = clip_len
        self.stem = nn.Conv3d(
            3, channels[0], kernel_size=(3, 7, 7), stride=(1, 4, 4), padding=(1, 3, 3)
        )
        # Each stage is two 3D convs with a rectification between them.
        # The second, purely temporal conv matters: the pyramid lift takes
        # a temporal mean, and only features that rectify frame-to-frame
        # differences (conv -> ReLU -> temporal conv) survive that mean as
        # a motion signal rather than averaging out.
        self.stages = nn.ModuleList(
            nn.Sequential(
                nn.Conv3d(
                    channels[i],
                    channels[i + 1],
                    kernel_size=(3, 3, 3),
                    stride=(1, 2, 2),
                    padding=(1, 1, 1),
                ),
                nn.ReLU(inplace=False),
                nn.Conv3d(
                    channels[i + 1],
                    channels[i + 1],
                    kernel_size=(3, 1, 1),
                    stride=1,
                    padding=(1, 0, 0),
                ),
            )
            for i in range(3)
        )
        self.act = nn.ReLU(inplace=False)

    def forward(self, video: torch.Tensor) -> List[torch.Tensor]:
        if video.dim() != 5 or video.shape[1] != 3:
            raise ValueError(f"expected [B, 3, T, h, w] video input, got {tuple(video.shape)}")
        if video.shape[2] != self.clip_len:
            raise ValueError(
                f"wrong clip length {video.shape[2]}, configured {self.clip_len}"
            )
        x = self.act(self.stem(video))
        levels = [x]
        for stage in self.stages:
            x = self.act(stage(x))
            levels.append(x)
        return levels


def extract_still_features(still: torch.Tensor, backbone2d: Backbone2D) -> List[torch.Tensor]:
    """Run the still branch; validates the level/stride contract."""
    levels = backbone2d(still)
    if len(levels) != 4:
        raise ValueError(f"2D backbone emitted {len(levels)} levels, expected 4")
    return levels


def extract_fast_features(video: torch.Tensor, backbone3d: Backbone3D) -> List[torch.Tensor]:
    """Run the fast branch; validates the level contract."""
    levels = backbone3d(video)
    if len(levels) != 4:
        raise ValueError(f"3D backbone emitted {len(levels)} levels, expected 4")
    return levels
