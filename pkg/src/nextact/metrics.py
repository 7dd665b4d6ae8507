"""Top-K mean Average Precision for anticipated object interactions.

Four granularities are reported: Noun, Noun+Verb, Noun+TTC and Overall
(Noun+Verb+TTC). A prediction matches a ground-truth record when the
noun agrees, box IoU reaches the threshold and, depending on the
criteria, the verb agrees and/or the predicted time to contact falls
within the tolerance. Per sample, the top K-1 highest-scored unmatched
predictions are ignored rather than counted as false positives; only one
future interaction is annotated among several plausible ones, so extra
confident predictions are not penalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from .types import InteractionAnnotation, STAPrediction, Taxonomy

TP, FP, IGNORED = "TP", "FP", "IGNORED"


@dataclass(frozen=True)
class MatchCriteria:
    iou_threshold: float = 0.5
    require_verb: bool = False
    require_ttc: bool = False
    ttc_tolerance: float = 0.25
    K: int = 5

    def __post_init__(self):
        if not 0 < self.iou_threshold < 1:
            raise ValueError(f"iou_threshold {self.iou_threshold} outside (0, 1)")
        if self.ttc_tolerance <= 0:
            raise ValueError("ttc_tolerance must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class EvalReport:
    map_noun: float
    map_noun_verb: float
    map_noun_ttc: float
    map_overall: float
    per_class_ap: Dict[str, Dict[int, float]] = field(default_factory=dict)
    num_samples: int = 0
    num_gt: int = 0
    num_predictions: int = 0

    def as_dict(self) -> dict:
        return {
            "map_noun": self.map_noun,
            "map_noun_verb": self.map_noun_verb,
            "map_noun_ttc": self.map_noun_ttc,
            "map_overall": self.map_overall,
            "per_class_ap": {k: dict(v) for k, v in self.per_class_ap.items()},
            "num_samples": self.num_samples,
            "num_gt": self.num_gt,
            "num_predictions": self.num_predictions,
        }


def _pred_sort_key(indexed_pred: Tuple[int, STAPrediction]):
    i, p = indexed_pred
    # Score descending, then larger boxes first, then input order.
    return (-p.score, -p.box.area, i)


def _pair_matches(
    p: STAPrediction, g: InteractionAnnotation, criteria: MatchCriteria
) -> bool:
    if p.noun_id != g.noun_id:
        return False
    if criteria.require_verb and p.verb_id != g.verb_id:
        return False
    if criteria.require_ttc and abs(p.ttc - g.ttc) > criteria.ttc_tolerance:
        return False
    return p.box.iou(g.box) >= criteria.iou_threshold


def match_sample(
    preds: Sequence[STAPrediction],
    gts: Sequence[InteractionAnnotation],
    criteria: MatchCriteria,
) -> Tuple[List[str], List[bool]]:
    """Label each prediction TP / FP / IGNORED against one sample's GT.

    Greedy matching in score order: each prediction takes the
    highest-IoU still-unmatched ground truth that satisfies the
    criteria. Among the unmatched predictions, the K-1 highest-scored
    are IGNORED; the rest are FP. Returns (per-prediction labels in
    input order, per-GT matched flags).
    """
    order = sorted(enumerate(preds), key=_pred_sort_key)
    labels = [FP] * len(preds)
    gt_matched = [False] * len(gts)
    unmatched_rank = 0
    for i, p in order:
        best_gt, best_iou = -1, -1.0
        for j, g in enumerate(gts):
            if gt_matched[j] or not _pair_matches(p, g, criteria):
                continue
            iou = p.box.iou(g.box)
            if iou > best_iou:
                best_gt, best_iou = j, iou
        if best_gt >= 0:
            gt_matched[best_gt] = True
            labels[i] = TP
        else:
            labels[i] = IGNORED if unmatched_rank < criteria.K - 1 else FP
            unmatched_rank += 1
    return labels, gt_matched


def average_precision(
    labeled: Sequence[Tuple[float, str]], num_gt: int
) -> float:
    """AP for one noun class from (score, label) pairs across the dataset.

    IGNORED entries count in neither TP nor FP. Area under the PR curve
    with all-point interpolation. Equal scores are ordered TP before FP
    so the result is independent of sample order.
    """
    if num_gt == 0:
        raise ValueError("AP undefined for a class with zero ground truth")
    ranked = sorted(
        (e for e in labeled if e[1] != IGNORED),
        key=lambda e: (-e[0], 0 if e[1] == TP else 1),
    )
    if not ranked:
        return 0.0
    tp = fp = 0
    precisions = []
    for score, label in ranked:
        if label == TP:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
    # Precision envelope: best precision achievable at or beyond each point.
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    # Recall increases by exactly 1/num_gt at each TP, so the area under
    # the interpolated curve is the sum of envelope precisions at TPs.
    ap = 0.0
    for (score, label), p in zip(ranked, precisions):
        if label == TP:
            ap += p / num_gt
    return ap


def _map_for_criteria(
    samples: Sequence[Tuple[Sequence[STAPrediction], Sequence[InteractionAnnotation]]],
    criteria: MatchCriteria,
) -> Tuple[float, Dict[int, float]]:
    per_class: Dict[int, List[Tuple[float, str]]] = {}
    gt_counts: Dict[int, int] = {}
    for preds, gts in samples:
        labels, _ = match_sample(preds, gts, criteria)
        for p, label in zip(preds, labels):
            per_class.setdefault(p.noun_id, []).append((p.score, label))
        for g in gts:
            gt_counts[g.noun_id] = gt_counts.get(g.noun_id, 0) + 1
    # Only classes with at least one GT instance enter the mean.
    aps = {
        cls: average_precision(per_class.get(cls, []), n)
        for cls, n in sorted(gt_counts.items())
    }
    if not aps:
        return 0.0, {}
    return 100.0 * sum(aps.values()) / len(aps), aps


def evaluate_records(
    predictions: Dict[str, Sequence[STAPrediction]],
    ground_truth: Dict[str, Sequence[InteractionAnnotation]],
    criteria: MatchCriteria = MatchCriteria(),
) -> EvalReport:
    """Evaluate in-memory prediction/GT maps keyed by sample uid."""
    unknown = set(predictions) - set(ground_truth)
    if unknown:
        raise ValueError(f"prediction uids not in annotations: {sorted(unknown)[:5]}")
    pairs = [
        (tuple(predictions.get(uid, ())), tuple(ground_truth[uid]))
        for uid in sorted(ground_truth)
    ]
    variants = {
        "noun": MatchCriteria(criteria.iou_threshold, False, False,
                              criteria.ttc_tolerance, criteria.K),
        "noun_verb": MatchCriteria(criteria.iou_threshold, True, False,
                                   criteria.ttc_tolerance, criteria.K),
        "noun_ttc": MatchCriteria(criteria.iou_threshold, False, True,
                                  criteria.ttc_tolerance, criteria.K),
        "overall": MatchCriteria(criteria.iou_threshold, True, True,
                                 criteria.ttc_tolerance, criteria.K),
    }
    maps, tables = {}, {}
    for name, crit in variants.items():
        maps[name], tables[name] = _map_for_criteria(pairs, crit)
    return EvalReport(
        map_noun=maps["noun"],
        map_noun_verb=maps["noun_verb"],
        map_noun_ttc=maps["noun_ttc"],
        map_overall=maps["overall"],
        per_class_ap=tables,
        num_samples=len(pairs),
        num_gt=sum(len(g) for _, g in pairs),
        num_predictions=sum(len(p) for p, _ in pairs),
    )


def evaluate(pred_path, ann_path, criteria: MatchCriteria = MatchCriteria()) -> EvalReport:
    """Evaluate a prediction file against an annotation file."""
    import json

    from . import io

    doc = json.loads(open(ann_path).read())
    taxonomy = io.load_taxonomy(doc)
    samples = io.parse_annotations(doc, taxonomy)
    predictions = io.load_predictions(pred_path)
    for uid, plist in predictions.items():
        for p in plist:
            try:
                taxonomy.check_noun_id(p.noun_id)
                taxonomy.check_verb_id(p.verb_id)
            except ValueError as exc:
                raise io.SchemaError(f"sample '{uid}': taxonomy mismatch: {exc}") from exc
    gt = {s.uid: s.objects for s in samples}
    return evaluate_records(predictions, gt, criteria)


def format_report(report: EvalReport, K: int = 5) -> str:
    lines = [
        f"Top-{K} mAP (%)",
        f"  Noun          {report.map_noun:10.4f}",
        f"  Noun+Verb     {report.map_noun_verb:10.4f}",
        f"  Noun+TTC      {report.map_noun_ttc:10.4f}",
        f"  Overall       {report.map_overall:10.4f}",
        f"  samples={report.num_samples} gt={report.num_gt} "
        f"predictions={report.num_predictions}",
    ]
    return "\n".join(lines)
