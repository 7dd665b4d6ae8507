"""Randomized prediction/GT fixture generation for metric tests."""

from __future__ import annotations

import numpy as np

from nextact.types import BoundingBox, InteractionAnnotation, STAPrediction


def random_box(rng: np.random.Generator, span: float = 100.0) -> BoundingBox:
    # Quantized coordinates so exact IoU ties and overlaps actually occur.
    x1, y1 = rng.integers(0, span - 10, size=2)
    w, h = rng.integers(4, 30, size=2)
    return BoundingBox(float(x1), float(y1), float(x1 + w), float(y1 + h))


def random_score(rng: np.random.Generator) -> float:
    # Half the time draw from a coarse grid to exercise tie-breaking.
    if rng.random() < 0.5:
        return float(rng.integers(1, 11)) / 10.0
    return float(np.round(rng.uniform(0.05, 1.0), 4))


def random_fixture(
    rng: np.random.Generator,
    max_samples: int = 5,
    max_preds: int = 6,
    num_nouns: int = 3,
    num_verbs: int = 3,
):
    """(predictions, ground truth) dicts keyed by uid."""
    preds, gts = {}, {}
    n_samples = int(rng.integers(1, max_samples + 1))
    for s in range(n_samples):
        uid = f"s{s}"
        n_gt = int(rng.integers(0, 3))
        gt_list = []
        for _ in range(n_gt):
            gt_list.append(
                InteractionAnnotation(
                    box=random_box(rng),
                    noun_id=int(rng.integers(1, num_nouns + 1)),
                    verb_id=int(rng.integers(1, num_verbs + 1)),
                    ttc=float(np.round(rng.uniform(0.1, 2.0), 2)),
                )
            )
        n_pred = int(rng.integers(0, max_preds + 1))
        pred_list = []
        for _ in range(n_pred):
            if gt_list and rng.random() < 0.6:
                # Perturb a GT record so plausible matches exist.
                g = gt_list[int(rng.integers(len(gt_list)))]
                dx, dy = rng.integers(-6, 7, size=2)
                box = BoundingBox(
                    max(0.0, g.box.x1 + dx),
                    max(0.0, g.box.y1 + dy),
                    max(0.0, g.box.x1 + dx) + (g.box.x2 - g.box.x1),
                    max(0.0, g.box.y1 + dy) + (g.box.y2 - g.box.y1),
                )
                noun = g.noun_id if rng.random() < 0.8 else int(rng.integers(1, num_nouns + 1))
                verb = g.verb_id if rng.random() < 0.7 else int(rng.integers(1, num_verbs + 1))
                ttc = g.ttc + float(rng.choice([-0.5, -0.2, 0.0, 0.2, 0.5]))
            else:
                box = random_box(rng)
                noun = int(rng.integers(1, num_nouns + 1))
                verb = int(rng.integers(1, num_verbs + 1))
                ttc = float(np.round(rng.uniform(0.1, 2.0), 2))
            pred_list.append(
                STAPrediction(
                    box=box,
                    noun_id=noun,
                    verb_id=verb,
                    ttc=max(0.01, ttc),
                    score=random_score(rng),
                )
            )
        preds[uid] = pred_list
        gts[uid] = gt_list
    return preds, gts


def gt_as_predictions(gts):
    """Perfect predictions: the GT itself at score 1.0."""
    return {
        uid: [
            STAPrediction(g.box, g.noun_id, g.verb_id, g.ttc, 1.0) for g in gt_list
        ]
        for uid, gt_list in gts.items()
    }
