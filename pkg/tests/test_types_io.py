import json

import pytest

from nextact import io
from nextact.types import (
    BoundingBox,
    InteractionAnnotation,
    STAPrediction,
    SampleMeta,
    Taxonomy,
)


@pytest.fixture
def taxonomy():
    return Taxonomy(nouns=["cup", "knife"], verbs=["take", "cut"])


def make_doc(taxonomy, objects=None):
    if objects is None:
        objects = [{"box": [1, 2, 11, 12], "noun_id": 1, "verb_id": 2, "ttc": 0.75}]
    return {
        "taxonomy": {"nouns": list(taxonomy.nouns), "verbs": list(taxonomy.verbs)},
        "samples": [
            {"uid": "a", "video": "vid_a", "frame": 15, "objects": objects},
            {"uid": "b", "video": "vid_b", "frame": 31, "objects": []},
        ],
    }


class TestTypes:
    def test_taxonomy_background_reserved(self):
        t = Taxonomy(nouns=["cup"], verbs=["take"])
        assert t.noun_classes[0] == "background"
        assert t.num_nouns == 2
        with pytest.raises(ValueError):
            Taxonomy(nouns=["background"], verbs=["take"])
        with pytest.raises(ValueError):
            Taxonomy(nouns=["cup", "cup"], verbs=["take"])
        with pytest.raises(ValueError):
            Taxonomy(nouns=[], verbs=["take"])

    def test_box_invariants(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 5, 10)
        with pytest.raises(ValueError):
            BoundingBox(-1, 0, 5, 10)
        with pytest.raises(ValueError):
            BoundingBox(0, 0, float("nan"), 10)

    def test_box_iou(self):
        a = BoundingBox(0, 0, 10, 10)
        assert a.iou(a) == 1.0
        assert a.iou(BoundingBox(10, 10, 20, 20)) == 0.0
        assert a.iou(BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_annotation_rejects_background_and_bad_ttc(self):
        b = BoundingBox(0, 0, 10, 10)
        with pytest.raises(ValueError, match="background"):
            InteractionAnnotation(b, noun_id=0, verb_id=1, ttc=1.0)
        with pytest.raises(ValueError, match="ttc"):
            InteractionAnnotation(b, noun_id=1, verb_id=1, ttc=0.0)

    def test_prediction_score_floor(self):
        b = BoundingBox(0, 0, 10, 10)
        STAPrediction(b, 1, 1, 1.0, 0.05)
        with pytest.raises(ValueError, match="score"):
            STAPrediction(b, 1, 1, 1.0, 0.04)


class TestAnnotationFile:
    def test_well_formed_roundtrip(self, tmp_path, taxonomy):
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(make_doc(taxonomy)))
        samples = io.validate_annotation_file(path)
        assert [s.uid for s in samples] == ["a", "b"]
        assert samples[0].objects[0].ttc == 0.75
        out = tmp_path / "roundtrip.json"
        io.write_annotation_file(out, taxonomy, samples)
        assert io.validate_annotation_file(out) == samples

    def test_zero_ttc_rejected(self, tmp_path, taxonomy):
        doc = make_doc(
            taxonomy, [{"box": [0, 0, 5, 5], "noun_id": 1, "verb_id": 1, "ttc": 0}]
        )
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(io.SchemaError, match="non-positive ttc"):
            io.validate_annotation_file(path)

    def test_background_annotation_rejected(self, tmp_path, taxonomy):
        doc = make_doc(
            taxonomy, [{"box": [0, 0, 5, 5], "noun_id": 0, "verb_id": 1, "ttc": 1}]
        )
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(io.SchemaError, match="background not annotatable"):
            io.validate_annotation_file(path)

    def test_unknown_class_id_names_sample(self, tmp_path, taxonomy):
        doc = make_doc(
            taxonomy, [{"box": [0, 0, 5, 5], "noun_id": 9, "verb_id": 1, "ttc": 1}]
        )
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(io.SchemaError, match="sample 'a'"):
            io.validate_annotation_file(path)

    def test_missing_field_named(self, tmp_path, taxonomy):
        doc = make_doc(taxonomy)
        del doc["samples"][0]["video"]
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(io.SchemaError, match="video"):
            io.validate_annotation_file(path)


class TestPredictionFile:
    def test_empty_set_valid(self, tmp_path):
        path = tmp_path / "pred.json"
        io.serialize_predictions({"a": []}, path)
        assert io.load_predictions(path) == {"a": []}

    def test_roundtrip_identity(self, tmp_path):
        p = STAPrediction(BoundingBox(1.25, 2.5, 11.125, 22.0), 2, 1, 0.618034, 0.333333)
        path = tmp_path / "pred.json"
        io.serialize_predictions({"a": [p]}, path)
        loaded = io.load_predictions(path)
        assert loaded == {"a": [p]}
        # Second pass is bit-stable.
        path2 = tmp_path / "pred2.json"
        io.serialize_predictions(loaded, path2)
        assert path.read_text() == path2.read_text()

    def test_subthreshold_score_rejected_before_write(self, tmp_path):
        class Fake:
            box = BoundingBox(0, 0, 5, 5)
            noun_id = 1
            verb_id = 1
            ttc = 1.0
            score = 0.04

        path = tmp_path / "pred.json"
        with pytest.raises(ValueError, match="score"):
            io.serialize_predictions({"a": [Fake()]}, path)
        assert not path.exists()

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            io.serialize_predictions({}, tmp_path / "missing_dir" / "pred.json")
