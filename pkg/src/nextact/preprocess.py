"""Input preprocessing: multi-scale resizing, normalization and clip
sampling.

At training time the still frame's short side is drawn from a fixed set
with the long side capped; at eval time the height is fixed. The video
is rescaled with linear interpolation so its height is alpha times the
still height (alpha = 0.32 reproduces the reference recipe: H = 800
gives h = 256). Annotation boxes are rescaled with the same similarity
transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .types import ObservedClip

STILL_MEAN = (0.485, 0.456, 0.406)
STILL_STD = (0.229, 0.224, 0.225)
VIDEO_MEAN = (0.45, 0.45, 0.45)
VIDEO_STD = (0.225, 0.225, 0.225)


@dataclass
class PreprocessConfig:
    train_short_sides: Tuple[int, ...] = (640, 672, 704, 736, 768, 800)
    flip_prob: float = 0.5
    max_long_side: int = 1333
    test_height: int = 800
    alpha: float = 0.32
    clip_len: int = 16
    clip_stride: int = 1
    frame_rate: float = 8.0
    still_mean: Tuple[float, ...] = STILL_MEAN
    still_std: Tuple[float, ...] = STILL_STD
    video_mean: Tuple[float, ...] = VIDEO_MEAN
    video_std: Tuple[float, ...] = VIDEO_STD

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha {self.alpha} outside (0, 1)")
        if self.clip_len < 1:
            raise ValueError("clip_len must be >= 1")


def sample_clip(t: int, clip_len: int, stride: int = 1) -> List[int]:
    """Frame indices of the observed clip ending at ``t``.

    [t - stride*(clip_len-1), ..., t], clamped at 0 with left-edge
    repetition; the last index is always t.
    """
    if t < 0:
        raise ValueError("frame index must be >= 0")
    return [max(0, t - stride * k) for k in range(clip_len - 1, -1, -1)]


def round_even(x: float) -> int:
    """Nearest even integer, at least 2."""
    return max(2, 2 * int(round(x / 2)))


def _normalize(t: torch.Tensor, mean: Sequence[float], std: Sequence[float]) -> torch.Tensor:
    shape = [3] + [1] * (t.dim() - 1)
    m = torch.tensor(mean, dtype=t.dtype).reshape(shape)
    s = torch.tensor(std, dtype=t.dtype).reshape(shape)
    return (t - m) / s


def still_scale(
    height: int, width: int, config: PreprocessConfig, mode: str, rng: Optional[np.random.Generator]
) -> float:
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an RNG for scale sampling")
        short = int(rng.choice(config.train_short_sides))
        scale = short / min(height, width)
    elif mode == "eval":
        scale = config.test_height / height
    else:
        raise ValueError(f"unknown mode '{mode}'")
    if scale * max(height, width) > config.max_long_side:
        scale = config.max_long_side / max(height, width)
    return scale


def preprocess(
    frames: np.ndarray,
    config: PreprocessConfig,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    boxes: Optional[np.ndarray] = None,
    timestamp_t: float = 0.0,
) -> Tuple[ObservedClip, Optional[np.ndarray], float]:
    """Build an ObservedClip from raw frames ending at t.

    ``frames`` is [T, H0, W0, 3] uint8 (the already-sampled clip, last
    frame = the still frame). Returns (clip, rescaled boxes, scale);
    boxes get the same similarity transform as the still frame, and
    dividing output coordinates by ``scale`` maps back to the input
    frame space.
    """
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"expected [T, H, W, 3] frames, got {frames.shape}")
    if frames.shape[0] < 1:
        raise ValueError("too few frames")
    t_len, h0, w0, _ = frames.shape
    if min(h0, w0) < 2:
        raise ValueError("degenerate aspect ratio")
    if mode == "train" and rng is not None and rng.random() < config.flip_prob:
        frames = frames[:, :, ::-1]
        if boxes is not None:
            boxes = np.asarray(boxes, dtype=np.float64).copy()
            boxes[:, [0, 2]] = w0 - boxes[:, [2, 0]]
    scale = still_scale(h0, w0, config, mode, rng)
    H = max(1, int(round(h0 * scale)))
    W = max(1, int(round(w0 * scale)))

    stack = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2).float() / 255.0
    still = stack[-1:]
    if (H, W) != (h0, w0):
        still = F.interpolate(still, size=(H, W), mode="bilinear", align_corners=False)
    still = _normalize(still[0], config.still_mean, config.still_std)

    h = round_even(config.alpha * H)
    w = round_even(config.alpha * W)
    video = F.interpolate(stack, size=(h, w), mode="bilinear", align_corners=False)
    video = _normalize(video.permute(1, 0, 2, 3), config.video_mean, config.video_std)

    out_boxes = None
    if boxes is not None:
        out_boxes = np.asarray(boxes, dtype=np.float64) * scale
        out_boxes[:, 0::2] = np.clip(out_boxes[:, 0::2], 0, W)
        out_boxes[:, 1::2] = np.clip(out_boxes[:, 1::2], 0, H)
    clip = ObservedClip(
        still=still,
        video=video,
        timestamp_t=timestamp_t,
        frame_rate=config.frame_rate,
    )
    return clip, out_boxes, scale
