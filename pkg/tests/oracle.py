"""Independent brute-force evaluator used to cross-check the metrics
module. Deliberately naive: plain-float geometry, max-scans instead of
sorts, and a double loop for the interpolated AP."""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

from nextact.metrics import MatchCriteria
from nextact.types import InteractionAnnotation, STAPrediction


def iou(a, b) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    return inter / (area_a + area_b - inter)


def _ok(p: STAPrediction, g: InteractionAnnotation, c: MatchCriteria) -> bool:
    if p.noun_id != g.noun_id:
        return False
    if c.require_verb and p.verb_id != g.verb_id:
        return False
    if c.require_ttc and abs(p.ttc - g.ttc) > c.ttc_tolerance:
        return False
    return iou(p.box, g.box) >= c.iou_threshold


def _priority(i: int, p: STAPrediction):
    area = (p.box.x2 - p.box.x1) * (p.box.y2 - p.box.y1)
    return (-p.score, -area, i)


def match_sample_oracle(preds, gts, criteria: MatchCriteria):
    """Labels per prediction (input order) plus matched flags per GT."""
    remaining = set(range(len(preds)))
    labels = {}
    gt_taken = [False] * len(gts)
    unmatched_seen = 0
    while remaining:
        best = min(remaining, key=lambda i: _priority(i, preds[i]))
        remaining.discard(best)
        p = preds[best]
        candidates = [
            (j, iou(p.box, g.box))
            for j, g in enumerate(gts)
            if not gt_taken[j] and _ok(p, g, criteria)
        ]
        if candidates:
            top = max(candidates, key=lambda e: (e[1], -e[0]))
            gt_taken[top[0]] = True
            labels[best] = "TP"
        else:
            labels[best] = "IGNORED" if unmatched_seen < criteria.K - 1 else "FP"
            unmatched_seen += 1
    return [labels[i] for i in range(len(preds))], gt_taken


def ap_oracle(entries: Sequence[Tuple[float, str]], num_gt: int) -> float:
    """All-point interpolated AP by direct double loop."""
    kept = [e for e in entries if e[1] != "IGNORED"]
    kept.sort(key=lambda e: (-e[0], 0 if e[1] == "TP" else 1))
    precisions = []
    tp = 0
    for rank, (_, label) in enumerate(kept, start=1):
        if label == "TP":
            tp += 1
        precisions.append(tp / rank)
    ap = 0.0
    tp = 0
    for k, (_, label) in enumerate(kept):
        if label == "TP":
            tp += 1
            ap += max(precisions[k:]) / num_gt
    return ap


def evaluate_oracle(
    predictions: Dict[str, Sequence[STAPrediction]],
    ground_truth: Dict[str, Sequence[InteractionAnnotation]],
    criteria: MatchCriteria,
) -> Dict[str, float]:
    """All four mAPs, brute force."""
    out = {}
    settings = {
        "noun": (False, False),
        "noun_verb": (True, False),
        "noun_ttc": (False, True),
        "overall": (True, True),
    }
    for name, (rv, rt) in settings.items():
        crit = MatchCriteria(
            criteria.iou_threshold, rv, rt, criteria.ttc_tolerance, criteria.K
        )
        per_class: Dict[int, list] = {}
        gt_count: Dict[int, int] = {}
        for uid in ground_truth:
            preds = list(predictions.get(uid, ()))
            gts = list(ground_truth[uid])
            labels, _ = match_sample_oracle(preds, gts, crit)
            for p, label in zip(preds, labels):
                per_class.setdefault(p.noun_id, []).append((p.score, label))
            for g in gts:
                gt_count[g.noun_id] = gt_count.get(g.noun_id, 0) + 1
        # Sorted class order so the summation order (and therefore the
        # floating-point result) is pinned down for exact comparison.
        aps = [
            ap_oracle(per_class.get(cls, []), n)
            for cls, n in sorted(gt_count.items())
        ]
        out[name] = 100.0 * sum(aps) / len(aps) if aps else 0.0
    return out
