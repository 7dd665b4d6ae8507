"""Tensor box utilities: IoU, NMS, delta encoding and clipping.

Boxes are [N, 4] corner-format tensors. Delta parameterization is the
standard (dx, dy, dw, dh) with weights (10, 10, 5, 5). NMS is
implemented here (instead of an external kernel) so its tie-break rule
is explicit: candidates are visited in score order with ties broken by
index, which keeps proposal selection deterministic.
"""

from __future__ import annotations

from typing import Tuple

import torch

DELTA_WEIGHTS = (10.0, 10.0, 5.0, 5.0)


def box_area(boxes: torch.Tensor) -> torch.Tensor:
    return (boxes[:, 2] - boxes[:, 0]).clamp(min=0) * (boxes[:, 3] - boxes[:, 1]).clamp(min=0)


def box_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Pairwise IoU matrix [len(a), len(b)]."""
    lt = torch.max(a[:, None, :2], b[None, :, :2])
    rb = torch.min(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[..., 0] * wh[..., 1]
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    return torch.where(union > 0, inter / union, torch.zeros_like(inter))


def nms(
    boxes: torch.Tensor,
    scores: torch.Tensor,
    iou_threshold: float,
    max_keep: int = None,
) -> torch.Tensor:
    """Greedy NMS; returns kept indices in descending score order.

    Equal scores are visited in index order (stable sort), so results
    are reproducible regardless of input permutation of distinct boxes.
    Stops early once ``max_keep`` boxes survive.
    """
    if boxes.numel() == 0:
        return torch.empty(0, dtype=torch.long)
    order = torch.argsort(scores, descending=True, stable=True)
    sorted_boxes = boxes[order]
    alive = torch.ones(len(order), dtype=torch.bool)
    keep = []
    cursor = 0
    while cursor < len(order):
        if not alive[cursor]:
            cursor += 1
            continue
        keep.append(int(order[cursor]))
        if max_keep is not None and len(keep) >= max_keep:
            break
        ious = box_iou(sorted_boxes[cursor : cursor + 1], sorted_boxes).squeeze(0)
        alive &= ious <= iou_threshold
        cursor += 1
    return torch.tensor(keep, dtype=torch.long)


def encode_deltas(boxes: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Regression targets that would transform ``boxes`` into ``targets``."""
    wx, wy, ww, wh = DELTA_WEIGHTS
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + 0.5 * bw
    by = boxes[:, 1] + 0.5 * bh
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tx = targets[:, 0] + 0.5 * tw
    ty = targets[:, 1] + 0.5 * th
    return torch.stack(
        [
            wx * (tx - bx) / bw,
            wy * (ty - by) / bh,
            ww * torch.log(tw / bw),
            wh * torch.log(th / bh),
        ],
        dim=1,
    )


def decode_deltas(boxes: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    """Apply predicted deltas to reference boxes."""
    wx, wy, ww, wh = DELTA_WEIGHTS
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + 0.5 * bw
    by = boxes[:, 1] + 0.5 * bh
    dx = deltas[:, 0] / wx
    dy = deltas[:, 1] / wy
    # Clamp exp arguments so degenerate predictions stay finite.
    dw = (deltas[:, 2] / ww).clamp(max=4.0)
    dh = (deltas[:, 3] / wh).clamp(max=4.0)
    cx = bx + dx * bw
    cy = by + dy * bh
    w = bw * torch.exp(dw)
    h = bh * torch.exp(dh)
    return torch.stack(
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=1
    )


def clip_boxes(boxes: torch.Tensor, image_hw: Tuple[int, int]) -> torch.Tensor:
    h, w = image_hw
    return torch.stack(
        [
            boxes[:, 0].clamp(0, w),
            boxes[:, 1].clamp(0, h),
            boxes[:, 2].clamp(0, w),
            boxes[:, 3].clamp(0, h),
        ],
        dim=1,
    )


def remove_degenerate(boxes: torch.Tensor, min_size: float = 1.0) -> torch.Tensor:
    """Mask of boxes with both sides at least ``min_size``."""
    return ((boxes[:, 2] - boxes[:, 0]) >= min_size) & (
        (boxes[:, 3] - boxes[:, 1]) >= min_size
    )
