"""Canonical on-disk annotation and prediction schemas.

Annotation file (one per split)::

    {"taxonomy": {"nouns": [...], "verbs": [...]},
     "samples": [{"uid", "video", "frame",
                  "objects": [{"box": [x1,y1,x2,y2], "noun_id", "verb_id", "ttc"}]}]}

Prediction file::

    {"samples": [{"uid", "predictions":
                  [{"box", "noun_id", "verb_id", "ttc", "score"}]}]}

Floats are written with 6-decimal precision; files round-trip without
value change at that precision.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Sequence

from .types import (
    BoundingBox,
    InteractionAnnotation,
    STAPrediction,
    SampleMeta,
    Taxonomy,
)

PRECISION = 6


class SchemaError(ValueError):
    """Raised when a file violates the canonical schema."""


def _round(x: float) -> float:
    return round(float(x), PRECISION)


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise SchemaError(f"{where}: missing field '{key}'")
    return record[key]


def _parse_box(raw, where: str) -> BoundingBox:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise SchemaError(f"{where}: field 'box' must be [x1, y1, x2, y2]")
    try:
        return BoundingBox(*(float(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: field 'box': {exc}") from exc


def load_taxonomy(doc: dict) -> Taxonomy:
    tax = _require(doc, "taxonomy", "annotation file")
    try:
        return Taxonomy(
            nouns=_require(tax, "nouns", "taxonomy"),
            verbs=_require(tax, "verbs", "taxonomy"),
        )
    except ValueError as exc:
        raise SchemaError(f"taxonomy: {exc}") from exc


def parse_annotations(doc: dict, taxonomy: Taxonomy = None) -> List[SampleMeta]:
    """Validate a parsed annotation document against the schema.

    Returns per-sample records in file order. ``taxonomy`` defaults to the
    one embedded in the document.
    """
    if taxonomy is None:
        taxonomy = load_taxonomy(doc)
    samples = []
    seen = set()
    for i, rec in enumerate(_require(doc, "samples", "annotation file")):
        uid = str(_require(rec, "uid", f"sample #{i}"))
        where = f"sample '{uid}'"
        if uid in seen:
            raise SchemaError(f"{where}: duplicate uid")
        seen.add(uid)
        objects = []
        for j, obj in enumerate(_require(rec, "objects", where)):
            owhere = f"{where} object #{j}"
            box = _parse_box(_require(obj, "box", owhere), owhere)
            noun_id = int(_require(obj, "noun_id", owhere))
            verb_id = int(_require(obj, "verb_id", owhere))
            ttc = float(_require(obj, "ttc", owhere))
            if noun_id == 0 or verb_id == 0:
                raise SchemaError(f"{owhere}: background not annotatable")
            try:
                taxonomy.check_noun_id(noun_id)
                taxonomy.check_verb_id(verb_id)
            except ValueError as exc:
                raise SchemaError(f"{owhere}: unknown class id: {exc}") from exc
            if ttc <= 0:
                raise SchemaError(f"{owhere}: non-positive ttc {ttc}")
            objects.append(InteractionAnnotation(box, noun_id, verb_id, ttc))
        samples.append(
            SampleMeta(
                uid=uid,
                video=str(_require(rec, "video", where)),
                frame=int(_require(rec, "frame", where)),
                objects=tuple(objects),
            )
        )
    return samples


def validate_annotation_file(path, taxonomy: Taxonomy = None) -> List[SampleMeta]:
    """Parse and validate an annotation file, checking every invariant."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    return parse_annotations(doc, taxonomy)


def write_annotation_file(path, taxonomy: Taxonomy, samples: Sequence[SampleMeta]):
    doc = {
        "taxonomy": {"nouns": list(taxonomy.nouns), "verbs": list(taxonomy.verbs)},
        "samples": [
            {
                "uid": s.uid,
                "video": s.video,
                "frame": s.frame,
                "objects": [
                    {
                        "box": [_round(v) for v in a.box.as_list()],
                        "noun_id": a.noun_id,
                        "verb_id": a.verb_id,
                        "ttc": _round(a.ttc),
                    }
                    for a in s.objects
                ],
            }
            for s in samples
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def serialize_predictions(preds: Dict[str, Sequence[STAPrediction]], path):
    """Write per-sample prediction lists to the canonical prediction file.

    Every prediction is re-validated before the file is written; a single
    invariant violation aborts the whole write.
    """
    samples = []
    for uid, plist in preds.items():
        records = []
        for p in plist:
            if not isinstance(p, STAPrediction):
                # Reconstructing re-runs all invariant checks.
                p = STAPrediction(p.box, p.noun_id, p.verb_id, p.ttc, p.score)
            records.append(
                {
                    "box": [_round(v) for v in p.box.as_list()],
                    "noun_id": p.noun_id,
                    "verb_id": p.verb_id,
                    "ttc": _round(p.ttc),
                    "score": _round(p.score),
                }
            )
        samples.append({"uid": uid, "predictions": records})
    Path(path).write_text(json.dumps({"samples": samples}, indent=1))


def load_predictions(path) -> Dict[str, List[STAPrediction]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    out: Dict[str, List[STAPrediction]] = {}
    for i, rec in enumerate(_require(doc, "samples", "prediction file")):
        uid = str(_require(rec, "uid", f"sample #{i}"))
        if uid in out:
            raise SchemaError(f"sample '{uid}': duplicate uid")
        plist = []
        for j, p in enumerate(_require(rec, "predictions", f"sample '{uid}'")):
            where = f"sample '{uid}' prediction #{j}"
            try:
                plist.append(
                    STAPrediction(
                        box=_parse_box(_require(p, "box", where), where),
                        noun_id=int(_require(p, "noun_id", where)),
                        verb_id=int(_require(p, "verb_id", where)),
                        ttc=float(_require(p, "ttc", where)),
                        score=float(_require(p, "score", where)),
                    )
                )
            except ValueError as exc:
                raise SchemaError(f"{where}: {exc}") from exc
        out[uid] = plist
    return out
