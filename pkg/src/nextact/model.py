"""Full anticipation model: two-branch backbone, proposal network and
prediction head, with training-loss and inference entry points."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from . import head as H
from . import rpn as R
from .backbone import Backbone2D, Backbone3D
from .pyramid import CombinedPyramid
from .types import STAPrediction, Taxonomy


@dataclass
class ModelConfig:
    channels_2d: Tuple[int, ...] = (256, 512, 1024, 2048)
    channels_3d: Tuple[int, ...] = (24, 48, 96, 192)
    pyramid_channels: int = 256
    clip_len: int = 16
    anchor_sizes: Tuple[float, ...] = (32, 64, 128, 256, 512)
    rpn_pre_nms: int = 1000
    rpn_post_nms: int = 100
    proposal_mode: str = "learned_rpn"  # or "oracle_jitter"
    oracle_jitter: float = 0.1
    # Backbone ablations (Table 4 rows).
    use_3d: bool = True
    conv_post_sum: bool = True
    post_pyramid_fusion: bool = False
    head: H.HeadConfig = field(default_factory=H.HeadConfig)


class AnticipationModel(nn.Module):
    def __init__(self, taxonomy: Taxonomy, config: ModelConfig = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.taxonomy = taxonomy
        cfg = self.config
        self.backbone = CombinedPyramid(
            Backbone2D(cfg.channels_2d),
            Backbone3D(cfg.channels_3d, clip_len=cfg.clip_len),
            out_channels=cfg.pyramid_channels,
            use_3d=cfg.use_3d,
            conv_post_sum=cfg.conv_post_sum,
            post_pyramid_fusion=cfg.post_pyramid_fusion,
        )
        self.rpn = R.RegionProposalNetwork(
            cfg.pyramid_channels,
            anchor_sizes=cfg.anchor_sizes,
            pre_nms_top_n=cfg.rpn_pre_nms,
            post_nms_top_n=cfg.rpn_post_nms,
        )
        self.head = H.PredictionHead(
            cfg.pyramid_channels,
            taxonomy.num_nouns,
            taxonomy.num_verbs,
            cfg.head,
        )

    def propose(
        self,
        pyramid: Sequence[torch.Tensor],
        image_hw: Tuple[int, int],
        gt_boxes: Optional[Sequence[torch.Tensor]] = None,
        rng: Optional[torch.Generator] = None,
    ) -> Tuple[List[torch.Tensor], Optional[dict]]:
        if self.config.proposal_mode == "oracle_jitter":
            if gt_boxes is None:
                raise ValueError("oracle proposal mode requires ground truth")
            props = [
                R.oracle_proposals(
                    g, image_hw, self.config.oracle_jitter, rng, extra=3
                )
                for g in gt_boxes
            ]
            return props, None
        return self.rpn(pyramid, image_hw)

    def compute_losses(
        self,
        stills: torch.Tensor,
        videos: Optional[torch.Tensor],
        targets: Sequence[Dict[str, torch.Tensor]],
        rng: torch.Generator,
    ) -> Dict[str, torch.Tensor]:
        """Named loss dict plus weighted total for one minibatch.

        ``targets`` holds per-image dicts with keys boxes [G, 4],
        nouns [G], verbs [G], ttc [G].
        """
        image_hw = stills.shape[-2:]
        pyramid = self.backbone(stills, videos)
        gt_boxes = [t["boxes"] for t in targets]
        proposals, aux = self.propose(pyramid, image_hw, gt_boxes, rng)
        parts: Dict[str, torch.Tensor] = {}
        if aux is not None:
            parts.update(self.rpn.losses(aux, gt_boxes, rng))
        g_ctx = H.global_context(pyramid)
        accum: Dict[str, torch.Tensor] = {}
        for b, target in enumerate(targets):
            props = proposals[b]
            if len(target["boxes"]):
                # Ground-truth boxes and jittered copies join the proposal
                # pool during training so the head sees foreground examples
                # (including imperfect ones) before the RPN localizes well.
                jittered = R.oracle_proposals(
                    target["boxes"], image_hw, 0.15, rng, extra=3
                )
                props = torch.cat([props, target["boxes"], jittered])
            sel, matched, fg = H.match_and_sample(
                props, target["boxes"], self.config.head, rng
            )
            local = self.head.local_features(pyramid, props[sel], b)
            logits = self.head.logits(local, g_ctx[b])
            losses = H.head_losses(
                logits,
                props[sel],
                matched,
                fg,
                target["boxes"],
                target["nouns"],
                target["verbs"],
                target["ttc"],
                self.config.head,
            )
            for k, v in losses.items():
                accum[k] = accum.get(k, 0.0) + v
        for k, v in accum.items():
            parts[k] = v / len(targets)
        parts["total"] = H.total_loss(parts, self.config.head)
        return parts

    @torch.no_grad()
    def predict(
        self,
        stills: torch.Tensor,
        videos: Optional[torch.Tensor],
        gt_boxes: Optional[Sequence[torch.Tensor]] = None,
        rng: Optional[torch.Generator] = None,
    ) -> List[List[STAPrediction]]:
        """Per-image thresholded predictions; deterministic in eval mode."""
        self.eval()
        image_hw = stills.shape[-2:]
        pyramid = self.backbone(stills, videos)
        proposals, _ = self.propose(pyramid, image_hw, gt_boxes, rng)
        g_ctx = H.global_context(pyramid)
        out = []
        for b in range(stills.shape[0]):
            local = self.head.local_features(pyramid, proposals[b], b)
            head_out = self.head.predict_heads(local, g_ctx[b])
            out.append(
                H.score_and_emit(
                    head_out, proposals[b], image_hw, self.config.head
                )
            )
        return out
