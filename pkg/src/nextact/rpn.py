"""Region proposal generation over the feature pyramid.

Two modes: a learned anchor-based proposal network, and an oracle mode
that jitters ground-truth boxes for fast desk-scale experiments. The
learned path scores anchors per level, decodes deltas, clips to the
image, and keeps the top proposals after NMS. With all-zero objectness
the kept set is still deterministic: sorting is stable, so ties fall
back to anchor index order.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from . import boxes as B

ANCHOR_RATIOS = (0.5, 1.0, 2.0)


def generate_anchors(
    feature_hw: Tuple[int, int],
    stride: int,
    size: float,
    ratios: Sequence[float] = ANCHOR_RATIOS,
) -> torch.Tensor:
    """Anchor boxes for one level, centered on feature cells. [H*W*A, 4]."""
    h, w = feature_hw
    shifts_x = (torch.arange(w, dtype=torch.float32) + 0.5) * stride
    shifts_y = (torch.arange(h, dtype=torch.float32) + 0.5) * stride
    cy, cx = torch.meshgrid(shifts_y, shifts_x, indexing="ij")
    centers = torch.stack([cx.reshape(-1), cy.reshape(-1)], dim=1)
    bases = []
    for r in ratios:
        aw = size * (r ** -0.5)
        ah = size * (r ** 0.5)
        bases.append([-aw / 2, -ah / 2, aw / 2, ah / 2])
    base = torch.tensor(bases, dtype=torch.float32)
    anchors = centers[:, None, :].repeat(1, len(ratios), 2) + base[None, :, :]
    return anchors.reshape(-1, 4)


class RPNHead(nn.Module):
    """Shared 3x3 conv followed by objectness and delta predictors."""

    def __init__(self, in_channels: int, num_anchors: int = len(ANCHOR_RATIOS)):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, in_channels, kernel_size=3, padding=1)
        self.objectness = nn.Conv2d(in_channels, num_anchors, kernel_size=1)
        self.deltas = nn.Conv2d(in_channels, num_anchors * 4, kernel_size=1)

    def forward(self, level: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x = F.relu(self.conv(level))
        b = level.shape[0]
        obj = self.objectness(x).permute(0, 2, 3, 1).reshape(b, -1)
        dlt = self.deltas(x).permute(0, 2, 3, 1).reshape(b, -1, 4)
        return obj, dlt


class RegionProposalNetwork(nn.Module):
    def __init__(
        self,
        in_channels: int,
        anchor_sizes: Sequence[float] = (32, 64, 128, 256, 512),
        strides: Sequence[int] = (4, 8, 16, 32, 64),
        pre_nms_top_n: int = 1000,
        post_nms_top_n: int = 100,
        nms_threshold: float = 0.7,
        fg_iou: float = 0.7,
        bg_iou: float = 0.3,
        batch_per_image: int = 256,
        fg_fraction: float = 0.5,
    ):
        super().__init__()
        self.head = RPNHead(in_channels)
        self.anchor_sizes = tuple(anchor_sizes)
        self.strides = tuple(strides)
        self.pre_nms_top_n = pre_nms_top_n
        self.post_nms_top_n = post_nms_top_n
        self.nms_threshold = nms_threshold
        self.fg_iou = fg_iou
        self.bg_iou = bg_iou
        self.batch_per_image = batch_per_image
        self.fg_fraction = fg_fraction

    def anchors_for(self, pyramid: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        if len(pyramid) != len(self.anchor_sizes):
            raise ValueError(
                f"pyramid has {len(pyramid)} levels, expected {len(self.anchor_sizes)}"
            )
        return [
            generate_anchors(level.shape[-2:], stride, size)
            for level, stride, size in zip(pyramid, self.strides, self.anchor_sizes)
        ]

    def forward(
        self, pyramid: Sequence[torch.Tensor], image_hw: Tuple[int, int]
    ) -> Tuple[List[torch.Tensor], dict]:
        """Per-image proposal boxes plus raw outputs for loss computation.

        Returns (proposals: list over batch of [N, 4], aux dict with
        concatenated anchors / objectness / deltas).
        """
        anchors = self.anchors_for(pyramid)
        batch = pyramid[0].shape[0]
        obj_all, dlt_all = [], []
        for level in pyramid:
            obj, dlt = self.head(level)
            obj_all.append(obj)
            dlt_all.append(dlt)
        proposals = []
        for b in range(batch):
            level_boxes, level_scores = [], []
            for anc, obj, dlt in zip(anchors, obj_all, dlt_all):
                scores = obj[b]
                k = min(self.pre_nms_top_n, scores.numel())
                idx = torch.argsort(scores, descending=True, stable=True)[:k]
                decoded = B.decode_deltas(anc[idx], dlt[b][idx])
                level_boxes.append(decoded)
                level_scores.append(scores[idx])
            cat_boxes = B.clip_boxes(torch.cat(level_boxes), image_hw)
            cat_scores = torch.cat(level_scores)
            valid = B.remove_degenerate(cat_boxes)
            cat_boxes, cat_scores = cat_boxes[valid], cat_scores[valid]
            if cat_boxes.numel() == 0:
                raise RuntimeError("no valid anchors fit the image")
            keep = B.nms(
                cat_boxes.detach(),
                cat_scores.detach(),
                self.nms_threshold,
                max_keep=self.post_nms_top_n,
            )
            proposals.append(cat_boxes[keep].detach())
        aux = {
            "anchors": torch.cat(anchors),
            "objectness": torch.cat(obj_all, dim=1),
            "deltas": torch.cat(dlt_all, dim=1),
        }
        return proposals, aux

    def losses(
        self,
        aux: dict,
        gt_boxes: Sequence[torch.Tensor],
        rng: torch.Generator,
    ) -> Dict[str, torch.Tensor]:
        """Sampled binary objectness and box regression losses."""
        anchors = aux["anchors"]
        obj_loss_sum = torch.zeros(())
        box_loss_sum = torch.zeros(())
        n_images = len(gt_boxes)
        for b in range(n_images):
            gts = gt_boxes[b]
            labels = torch.zeros(len(anchors))  # 1 fg, 0 bg, -1 ignore
            matched = torch.zeros(len(anchors), dtype=torch.long)
            if len(gts):
                ious = B.box_iou(anchors, gts)
                best_iou, best_gt = ious.max(dim=1)
                labels = torch.where(best_iou >= self.fg_iou, 1.0, labels)
                labels = torch.where(
                    (best_iou > self.bg_iou) & (best_iou < self.fg_iou), -1.0, labels
                )
                # The best anchor for each GT is always foreground.
                best_anchor = ious.max(dim=0).indices
                labels[best_anchor] = 1.0
                matched = best_gt
                matched[best_anchor] = torch.arange(len(gts))
            else:
                labels = torch.zeros(len(anchors))
            fg_idx = torch.nonzero(labels == 1.0).squeeze(1)
            bg_idx = torch.nonzero(labels == 0.0).squeeze(1)
            n_fg = min(len(fg_idx), int(self.batch_per_image * self.fg_fraction))
            n_bg = min(len(bg_idx), self.batch_per_image - n_fg)
            fg_sel = fg_idx[torch.randperm(len(fg_idx), generator=rng)[:n_fg]]
            bg_sel = bg_idx[torch.randperm(len(bg_idx), generator=rng)[:n_bg]]
            sel = torch.cat([fg_sel, bg_sel])
            target = labels[sel]
            obj_loss_sum = obj_loss_sum + F.binary_cross_entropy_with_logits(
                aux["objectness"][b][sel], target, reduction="sum"
            ) / max(len(sel), 1)
            if n_fg and len(gts):
                # Normalize by the foreground count: with few positive
                # anchors, dividing by the full sample would starve the
                # localization gradient.
                deltas_t = B.encode_deltas(anchors[fg_sel], gts[matched[fg_sel]])
                box_loss_sum = box_loss_sum + F.smooth_l1_loss(
                    aux["deltas"][b][fg_sel], deltas_t, reduction="sum"
                ) / max(n_fg, 1)
        return {
            "rpn_objectness": obj_loss_sum / n_images,
            "rpn_box": box_loss_sum / n_images,
        }


def oracle_proposals(
    gt_boxes: torch.Tensor,
    image_hw: Tuple[int, int],
    jitter: float,
    rng: torch.Generator,
    extra: int = 0,
) -> torch.Tensor:
    """Ground-truth boxes with bounded uniform corner jitter.

    ``jitter`` is the maximum offset as a fraction of the box side.
    ``extra`` adds that many jittered duplicates per box for variety.
    """
    if len(gt_boxes) == 0:
        raise ValueError("oracle proposal mode requires ground truth")
    reps = 1 + extra
    out = []
    for _ in range(reps):
        w = (gt_boxes[:, 2] - gt_boxes[:, 0]).unsqueeze(1)
        h = (gt_boxes[:, 3] - gt_boxes[:, 1]).unsqueeze(1)
        scale = torch.cat([w, h, w, h], dim=1) * jitter
        noise = (torch.rand(gt_boxes.shape, generator=rng) * 2 - 1) * scale
        out.append(B.clip_boxes(gt_boxes + noise, image_hw))
    return torch.cat(out)
