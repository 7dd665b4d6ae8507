"""Prediction head: RoI features, global-local fusion, noun/verb/box/ttc
predictors, scoring and the multi-task loss.

Local features are pooled from the pyramid with RoIAlign and flattened
through a two-layer box head. A globally average-pooled scene vector
(taken from the coarsest non-pooled pyramid level) is concatenated to
each local feature, passed through a two-layer fusion network and added
back residually, so global context modulates local features rather than
replacing them. Nouns, class-specific box offsets, verbs and time to
contact are predicted with linear layers; ttc goes through a softplus so
it is strictly positive. The emission score for a noun n is
s = p(n) * max over non-background verbs of p(v), and only predictions
with s >= 0.05 are kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn
from torchvision.ops import roi_align

from . import boxes as B
from .types import BoundingBox, STAPrediction, SCORE_THRESHOLD


@dataclass
class HeadConfig:
    representation_dim: int = 1024
    roi_resolution: int = 7
    batch_per_image: int = 512
    fg_fraction: float = 0.25
    fg_iou: float = 0.5
    nms_threshold: float = 0.5
    max_detections: int = 100
    score_threshold: float = SCORE_THRESHOLD
    lambda_verb: float = 0.1
    lambda_ttc: float = 0.5
    # Ablation switches (Tables 2-3 rows).
    nouns_only: bool = False
    standard_head: bool = False
    sum_fusion: bool = False
    no_global: bool = False
    no_residual: bool = False
    no_verb_noun_product: bool = False


@dataclass
class HeadOutput:
    """Per-proposal head outputs (probabilities, offsets, ttc)."""

    p_noun: torch.Tensor  # [N, num_nouns], rows sum to 1
    p_verb: torch.Tensor  # [N, num_verbs]
    box_deltas: torch.Tensor  # [N, num_nouns - 1, 4]
    ttc: torch.Tensor  # [N], strictly positive


def assign_levels(proposals: torch.Tensor, num_levels: int = 4) -> torch.Tensor:
    """Map each box to a pyramid level by scale (canonical 224 at level 2)."""
    areas = B.box_area(proposals).clamp(min=1e-6)
    k = torch.floor(2 + torch.log2(torch.sqrt(areas) / 224.0))
    return k.clamp(0, num_levels - 1).long()


def extract_roi_features(
    pyramid: Sequence[torch.Tensor],
    proposals: torch.Tensor,
    batch_index: int,
    resolution: int,
    strides: Sequence[int] = (4, 8, 16, 32),
) -> torch.Tensor:
    """RoIAlign-pooled features [N, C, r, r], level chosen by box scale.

    Only the 4 non-pooled pyramid levels are sampled; the extra pooled
    level exists for proposal generation alone.
    """
    n = len(proposals)
    if n == 0:
        c = pyramid[0].shape[1]
        return torch.zeros(0, c, resolution, resolution)
    levels = assign_levels(proposals, num_levels=4)
    out = torch.zeros(n, pyramid[0].shape[1], resolution, resolution)
    for lvl in range(4):
        mask = levels == lvl
        if not mask.any():
            continue
        rois = torch.cat(
            [
                torch.full((int(mask.sum()), 1), float(batch_index)),
                proposals[mask],
            ],
            dim=1,
        )
        pooled = roi_align(
            pyramid[lvl],
            rois,
            output_size=resolution,
            spatial_scale=1.0 / strides[lvl],
            sampling_ratio=2,
            aligned=True,
        )
        out = out.index_put((torch.nonzero(mask).squeeze(1),), pooled)
    return out


def global_context(pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
    """Spatial mean of the coarsest non-pooled pyramid level. [B, C]."""
    return pyramid[3].mean(dim=(-2, -1))


class BoxHead(nn.Module):
    """Two fully connected layers flattening pooled RoI features."""

    def __init__(self, in_channels: int, resolution: int, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_channels * resolution * resolution, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.fc1(pooled.flatten(1)))
        return F.relu(self.fc2(x))


class GlobalLocalFusion(nn.Module):
    """Two-layer fusion over concat(global, local) with a residual add.

    With the reference plan this maps 256+1024 -> 1024 -> 1024. The
    sum-fusion variant replaces the whole block with a linear projection
    of the global vector added to the local features.
    """

    def __init__(self, global_dim: int, local_dim: int, config: HeadConfig):
        super().__init__()
        self.config = config
        if config.sum_fusion:
            self.proj = nn.Linear(global_dim, local_dim)
        else:
            self.fc1 = nn.Linear(global_dim + local_dim, local_dim)
            self.fc2 = nn.Linear(local_dim, local_dim)

    def forward(self, local: torch.Tensor, global_ctx: torch.Tensor) -> torch.Tensor:
        if self.config.no_global:
            return local
        if global_ctx.dim() == 1:
            global_ctx = global_ctx.unsqueeze(0)
        g = global_ctx.expand(local.shape[0], -1)
        if self.config.sum_fusion:
            return local + self.proj(g)
        modulation = self.fc2(F.relu(self.fc1(torch.cat([g, local], dim=1))))
        if self.config.no_residual:
            return modulation
        return local + modulation


def fuse_global_local(
    local: torch.Tensor, global_ctx: torch.Tensor, fusion: GlobalLocalFusion
) -> torch.Tensor:
    """Functional form: local + MLP(concat(global_ctx, local))."""
    return fusion(local, global_ctx)


class PredictionHead(nn.Module):
    def __init__(
        self,
        pyramid_channels: int,
        num_nouns: int,
        num_verbs: int,
        config: HeadConfig = None,
    ):
        super().__init__()
        self.config = config or HeadConfig()
        self.num_nouns = num_nouns
        self.num_verbs = num_verbs
        dim = self.config.representation_dim
        self.box_head = BoxHead(pyramid_channels, self.config.roi_resolution, dim)
        self.fusion = GlobalLocalFusion(pyramid_channels, dim, self.config)
        self.noun_predictor = nn.Linear(dim, num_nouns)
        self.box_predictor = nn.Linear(dim, 4 * (num_nouns - 1))
        self.verb_predictor = nn.Linear(dim, num_verbs)
        self.ttc_predictor = nn.Linear(dim, 1)

    def local_features(
        self, pyramid: Sequence[torch.Tensor], proposals: torch.Tensor, batch_index: int
    ) -> torch.Tensor:
        pooled = extract_roi_features(
            pyramid, proposals, batch_index, self.config.roi_resolution
        )
        return self.box_head(pooled)

    def predict_heads(
        self, local: torch.Tensor, global_ctx: Optional[torch.Tensor]
    ) -> HeadOutput:
        cfg = self.config
        if cfg.standard_head or cfg.nouns_only or global_ctx is None:
            fused = local
        else:
            fused = self.fusion(local, global_ctx)
        noun_logits = self.noun_predictor(fused)
        box_deltas = self.box_predictor(fused).reshape(-1, self.num_nouns - 1, 4)
        # Standard head predicts verb/ttc from plain local features.
        vt_input = local if cfg.standard_head else fused
        verb_logits = self.verb_predictor(vt_input)
        ttc = F.softplus(self.ttc_predictor(vt_input)).squeeze(-1)
        return HeadOutput(
            p_noun=F.softmax(noun_logits, dim=-1),
            p_verb=F.softmax(verb_logits, dim=-1),
            box_deltas=box_deltas,
            ttc=ttc,
        )

    def logits(
        self, local: torch.Tensor, global_ctx: Optional[torch.Tensor]
    ) -> Dict[str, torch.Tensor]:
        """Raw logits for loss computation (softmax-free)."""
        cfg = self.config
        if cfg.standard_head or cfg.nouns_only or global_ctx is None:
            fused = local
        else:
            fused = self.fusion(local, global_ctx)
        vt_input = local if cfg.standard_head else fused
        return {
            "noun": self.noun_predictor(fused),
            "box": self.box_predictor(fused).reshape(-1, self.num_nouns - 1, 4),
            "verb": self.verb_predictor(vt_input),
            "ttc": F.softplus(self.ttc_predictor(vt_input)).squeeze(-1),
        }


def score_and_emit(
    head_out: HeadOutput,
    proposals: torch.Tensor,
    image_hw: Tuple[int, int],
    config: HeadConfig,
) -> List[STAPrediction]:
    """Turn head outputs for one image into thresholded predictions.

    For each proposal and non-background noun n:
    s = p(n) * max over non-background verbs of p(v) (or p(n) alone when
    the verb-noun product is ablated). Candidates with s >= threshold go
    through per-class NMS and a max-detections cap.
    """
    n_props = proposals.shape[0]
    if n_props == 0:
        return []
    use_product = not (
        config.no_verb_noun_product or config.standard_head or config.nouns_only
    )
    if config.nouns_only:
        verb_ids = torch.ones(n_props, dtype=torch.long)
        verb_conf = torch.ones(n_props)
        ttc = torch.ones(n_props)
    else:
        nonbg_verbs = head_out.p_verb[:, 1:]
        verb_conf, verb_arg = nonbg_verbs.max(dim=1)
        verb_ids = verb_arg + 1
        ttc = head_out.ttc
    cand_boxes, cand_scores, cand_nouns, cand_verbs, cand_ttc = [], [], [], [], []
    for noun in range(1, head_out.p_noun.shape[1]):
        p_n = head_out.p_noun[:, noun]
        scores = p_n * verb_conf if use_product else p_n
        keep = scores >= config.score_threshold
        if not keep.any():
            continue
        decoded = B.decode_deltas(
            proposals[keep], head_out.box_deltas[keep, noun - 1]
        )
        decoded = B.clip_boxes(decoded, image_hw)
        valid = B.remove_degenerate(decoded, min_size=1e-3)
        cand_boxes.append(decoded[valid])
        cand_scores.append(scores[keep][valid])
        cand_nouns.append(torch.full((int(valid.sum()),), noun, dtype=torch.long))
        cand_verbs.append(verb_ids[keep][valid])
        cand_ttc.append(ttc[keep][valid])
    if not cand_boxes:
        return []
    all_boxes = torch.cat(cand_boxes)
    all_scores = torch.cat(cand_scores)
    all_nouns = torch.cat(cand_nouns)
    all_verbs = torch.cat(cand_verbs)
    all_ttc = torch.cat(cand_ttc)
    kept: List[int] = []
    for noun in all_nouns.unique().tolist():
        idx = torch.nonzero(all_nouns == noun).squeeze(1)
        keep = B.nms(all_boxes[idx], all_scores[idx], config.nms_threshold)
        kept.extend(idx[keep].tolist())
    kept_t = torch.tensor(kept, dtype=torch.long)
    order = torch.argsort(all_scores[kept_t], descending=True, stable=True)
    kept_t = kept_t[order][: config.max_detections]
    preds = []
    for i in kept_t.tolist():
        x1, y1, x2, y2 = all_boxes[i].tolist()
        preds.append(
            STAPrediction(
                box=BoundingBox(x1, y1, x2, y2),
                noun_id=int(all_nouns[i]),
                verb_id=int(all_verbs[i]),
                ttc=max(float(all_ttc[i]), 1e-6),
                score=min(float(all_scores[i]), 1.0),
            )
        )
    return preds


def match_and_sample(
    proposals: torch.Tensor,
    gt_boxes: torch.Tensor,
    config: HeadConfig,
    rng: torch.Generator,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Sample a training minibatch of proposals for one image.

    Returns (sampled indices, matched gt index per sampled proposal,
    foreground mask). Proposals with IoU >= fg_iou to some GT are
    foreground; the minibatch targets config.fg_fraction foreground.
    """
    n = len(proposals)
    if len(gt_boxes):
        ious = B.box_iou(proposals, gt_boxes)
        best_iou, best_gt = ious.max(dim=1)
        fg_mask = best_iou >= config.fg_iou
    else:
        best_gt = torch.zeros(n, dtype=torch.long)
        fg_mask = torch.zeros(n, dtype=torch.bool)
    fg_idx = torch.nonzero(fg_mask).squeeze(1)
    bg_idx = torch.nonzero(~fg_mask).squeeze(1)
    n_fg = min(len(fg_idx), int(config.batch_per_image * config.fg_fraction))
    n_bg = min(len(bg_idx), config.batch_per_image - n_fg)
    fg_sel = fg_idx[torch.randperm(len(fg_idx), generator=rng)[:n_fg]]
    bg_sel = bg_idx[torch.randperm(len(bg_idx), generator=rng)[:n_bg]]
    sel = torch.cat([fg_sel, bg_sel])
    return sel, best_gt[sel], fg_mask[sel]


def head_losses(
    logits: Dict[str, torch.Tensor],
    proposals: torch.Tensor,
    matched_gt: torch.Tensor,
    fg_mask: torch.Tensor,
    gt_boxes: torch.Tensor,
    gt_nouns: torch.Tensor,
    gt_verbs: torch.Tensor,
    gt_ttc: torch.Tensor,
    config: HeadConfig,
) -> Dict[str, torch.Tensor]:
    """Noun CE, class-specific box smooth-L1, verb CE and ttc smooth-L1.

    Background proposals get noun label 0 and the background verb label;
    ttc is supervised on foreground proposals only, contributing zero
    when the batch has no foreground.
    """
    n = len(proposals)
    noun_targets = torch.zeros(n, dtype=torch.long)
    verb_targets = torch.zeros(n, dtype=torch.long)
    if fg_mask.any():
        noun_targets[fg_mask] = gt_nouns[matched_gt[fg_mask]]
        verb_targets[fg_mask] = gt_verbs[matched_gt[fg_mask]]
    loss_noun = F.cross_entropy(logits["noun"], noun_targets)
    if fg_mask.any():
        fg = torch.nonzero(fg_mask).squeeze(1)
        cls = noun_targets[fg] - 1
        delta_targets = B.encode_deltas(proposals[fg], gt_boxes[matched_gt[fg]])
        pred_deltas = logits["box"][fg, cls]
        loss_box = F.smooth_l1_loss(pred_deltas, delta_targets, reduction="sum") / n
    else:
        loss_box = logits["box"].sum() * 0.0
    if config.nouns_only:
        loss_verb = torch.zeros(())
        loss_ttc = torch.zeros(())
    else:
        loss_verb = F.cross_entropy(logits["verb"], verb_targets)
        if fg_mask.any():
            fg = torch.nonzero(fg_mask).squeeze(1)
            loss_ttc = F.smooth_l1_loss(
                logits["ttc"][fg], gt_ttc[matched_gt[fg]], reduction="mean"
            )
        else:
            loss_ttc = logits["ttc"].sum() * 0.0
    return {
        "noun": loss_noun,
        "box": loss_box,
        "verb": loss_verb,
        "ttc": loss_ttc,
    }


def total_loss(parts: Dict[str, torch.Tensor], config: HeadConfig) -> torch.Tensor:
    """Weighted multi-task total over RPN and head terms."""
    total = (
        parts.get("rpn_objectness", 0.0)
        + parts.get("rpn_box", 0.0)
        + parts["noun"]
        + parts["box"]
        + config.lambda_verb * parts["verb"]
        + config.lambda_ttc * parts["ttc"]
    )
    if isinstance(total, torch.Tensor) and not torch.isfinite(total):
        raise FloatingPointError("non-finite total loss")
    return total
