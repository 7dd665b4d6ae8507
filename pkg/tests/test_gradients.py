"""Finite-difference checks of analytic gradients.

Central differences with step 1e-5 in float64 against autograd, relative
tolerance 1e-4 (absolute 1e-6 near zero). These are the independent
oracle for every learned component's backward pass.
"""

import pytest
import torch
import torch.nn.functional as F

from nextact.head import (
    BoxHead,
    GlobalLocalFusion,
    HeadConfig,
    PredictionHead,
    head_losses,
    total_loss,
)
from nextact.pyramid import FuseLevel


@pytest.fixture(autouse=True)
def float64_default():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def numeric_grad(fn, params, eps=1e-5):
    """Central finite differences of a scalar fn w.r.t. a list of tensors."""
    grads = []
    for p in params:
        g = torch.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def check_grads(fn, params, rtol=1e-4, atol=1e-6):
    for p in params:
        p.requires_grad_(True)
        if p.grad is not None:
            p.grad = None
    loss = fn()
    loss.backward()
    analytic = [p.grad.clone() for p in params]
    with torch.no_grad():
        numeric = numeric_grad(fn, params)
    for a, n in zip(analytic, numeric):
        assert torch.allclose(a, n, rtol=rtol, atol=atol), (
            f"max abs diff {(a - n).abs().max().item():.3e}"
        )


class TestFuseLevelGradients:
    def test_conv_pre_post(self):
        torch.manual_seed(0)
        fuse = FuseLevel(channels3d=3, channels2d=4)
        feat2d = torch.randn(1, 4, 5, 5)
        lifted = torch.randn(1, 3, 5, 5)
        target = torch.randn(1, 4, 5, 5)

        def fn():
            return ((fuse(feat2d, lifted) - target) ** 2).mean()

        params = list(fuse.parameters())[:2]  # conv_pre weight+bias
        check_grads(fn, params)

    def test_input_gradient(self):
        torch.manual_seed(1)
        fuse = FuseLevel(channels3d=3, channels2d=4)
        lifted = torch.randn(1, 3, 5, 5)
        feat2d = torch.randn(1, 4, 5, 5)

        def fn():
            return fuse(feat2d, lifted).sum() + (fuse(feat2d, lifted) ** 2).mean()

        check_grads(fn, [feat2d, lifted])


class TestFusionGradients:
    def test_concat_mlp_residual(self):
        torch.manual_seed(2)
        fusion = GlobalLocalFusion(3, 6, HeadConfig())
        local = torch.randn(4, 6)
        g = torch.randn(3)
        target = torch.randn(4, 6)

        def fn():
            return ((fusion(local, g) - target) ** 2).mean()

        check_grads(fn, list(fusion.parameters()) + [local, g])

    def test_sum_fusion(self):
        torch.manual_seed(3)
        fusion = GlobalLocalFusion(3, 6, HeadConfig(sum_fusion=True))
        local = torch.randn(4, 6)
        g = torch.randn(3)

        def fn():
            return (fusion(local, g) ** 2).sum()

        check_grads(fn, list(fusion.parameters()) + [local])


class TestHeadGradients:
    def test_box_head(self):
        torch.manual_seed(4)
        head = BoxHead(in_channels=2, resolution=3, dim=5)
        pooled = torch.randn(3, 2, 3, 3)
        target = torch.randn(3, 5)

        def fn():
            return ((head(pooled) - target) ** 2).mean()

        check_grads(fn, list(head.parameters()) + [pooled])

    def test_prediction_linears_through_loss(self):
        torch.manual_seed(5)
        head = PredictionHead(2, num_nouns=3, num_verbs=3,
                              config=HeadConfig(representation_dim=6))
        local = torch.randn(4, 6)
        g = torch.randn(2)
        proposals = torch.tensor(
            [[10.0, 10, 30, 30], [12.0, 8, 32, 28],
             [60.0, 60, 80, 80], [5.0, 50, 20, 70]]
        )
        gt_boxes = torch.tensor([[11.0, 9, 31, 29]])
        matched = torch.zeros(4, dtype=torch.long)
        fg = torch.tensor([True, True, False, False])
        gt_nouns = torch.tensor([2])
        gt_verbs = torch.tensor([1])
        gt_ttc = torch.tensor([0.8])
        cfg = HeadConfig(representation_dim=6)

        def fn():
            logits = head.logits(local, g)
            parts = head_losses(
                logits, proposals, matched, fg,
                gt_boxes, gt_nouns, gt_verbs, gt_ttc, cfg,
            )
            return total_loss(parts, cfg)

        params = [
            head.noun_predictor.weight, head.noun_predictor.bias,
            head.box_predictor.weight, head.verb_predictor.weight,
            head.ttc_predictor.weight, head.ttc_predictor.bias,
            local,
        ]
        check_grads(fn, params)

    def test_softplus_ttc_path(self):
        torch.manual_seed(6)
        w = torch.randn(1, 6)
        b = torch.randn(1)
        x = torch.randn(3, 6)
        target = torch.tensor([0.5, 1.0, 2.0])

        def fn():
            ttc = F.softplus(x @ w.t() + b).squeeze(-1)
            return F.smooth_l1_loss(ttc, target)

        check_grads(fn, [w, b, x])


class TestEndToEndToyGradient:
    def test_total_loss_backward_through_conv_stack(self):
        """Gradient of the multi-task total w.r.t. an upstream conv weight:
        relu kinks avoided by the random draw; rtol 1e-3 allows the longer
        chain."""
        torch.manual_seed(7)
        conv = torch.nn.Conv2d(2, 2, 3, padding=1)
        head = PredictionHead(2, num_nouns=3, num_verbs=3,
                              config=HeadConfig(representation_dim=4, roi_resolution=2))
        fmap = torch.randn(1, 2, 8, 8)
        proposals = torch.tensor([[4.0, 4, 24, 24], [2.0, 2, 28, 28]])
        gt_boxes = torch.tensor([[4.0, 4, 24, 24]])
        matched = torch.zeros(2, dtype=torch.long)
        fg = torch.tensor([True, False])
        cfg = HeadConfig(representation_dim=4, roi_resolution=2)

        def fn():
            feat = F.relu(conv(fmap))
            pyramid = [feat, feat[:, :, ::2, ::2], feat[:, :, ::4, ::4],
                       feat[:, :, ::8, ::8]]
            local = head.local_features(pyramid, proposals, 0)
            g = pyramid[3].mean(dim=(-2, -1))[0]
            logits = head.logits(local, g)
            parts = head_losses(
                logits, proposals, matched, fg, gt_boxes,
                torch.tensor([1]), torch.tensor([2]), torch.tensor([1.2]), cfg,
            )
            return total_loss(parts, cfg)

        check_grads(fn, [conv.weight, conv.bias], rtol=1e-3, atol=1e-5)
