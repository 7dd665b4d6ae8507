"""Core domain types shared by every stage of the pipeline.

All values are immutable after construction and safe to share across
workers. Boxes are corner-format (x1, y1, x2, y2) in still-frame pixel
coordinates, end-exclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

BACKGROUND = "background"

#: Any emitted prediction must score at least this much.
SCORE_THRESHOLD = 0.05


@dataclass(frozen=True)
class Taxonomy:
    """Noun and verb vocabularies. Index 0 is always the background class."""

    nouns: Sequence[str]
    verbs: Sequence[str]

    def __post_init__(self):
        for name, classes in (("nouns", self.nouns), ("verbs", self.verbs)):
            if len(classes) < 1:
                raise ValueError(f"{name}: need at least one non-background class")
            if len(set(classes)) != len(classes):
                raise ValueError(f"{name}: duplicate class names")
            if BACKGROUND in classes:
                raise ValueError(f"{name}: '{BACKGROUND}' is reserved for index 0")
        object.__setattr__(self, "nouns", tuple(self.nouns))
        object.__setattr__(self, "verbs", tuple(self.verbs))

    @property
    def noun_classes(self) -> tuple:
        """Full noun label space, background first."""
        return (BACKGROUND,) + tuple(self.nouns)

    @property
    def verb_classes(self) -> tuple:
        return (BACKGROUND,) + tuple(self.verbs)

    @property
    def num_nouns(self) -> int:
        return len(self.nouns) + 1

    @property
    def num_verbs(self) -> int:
        return len(self.verbs) + 1

    def check_noun_id(self, noun_id: int) -> int:
        if not 0 < noun_id < self.num_nouns:
            raise ValueError(f"noun_id {noun_id} out of range [1, {self.num_nouns - 1}]")
        return noun_id

    def check_verb_id(self, verb_id: int) -> int:
        if not 0 < verb_id < self.num_verbs:
            raise ValueError(f"verb_id {verb_id} out of range [1, {self.num_verbs - 1}]")
        return verb_id


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, corner format, end-exclusive, pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if min(coords) < 0:
            raise ValueError(f"negative box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {coords}: need x1 < x2 and y1 < y2")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def iou(self, other: "BoundingBox") -> float:
        ix = min(self.x2, other.x2) - max(self.x1, other.x1)
        iy = min(self.y2, other.y2) - max(self.y1, other.y1)
        if ix <= 0 or iy <= 0:
            return 0.0
        inter = ix * iy
        return inter / (self.area + other.area - inter)

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class InteractionAnnotation:
    """Ground-truth next-active-object record."""

    box: BoundingBox
    noun_id: int
    verb_id: int
    ttc: float

    def __post_init__(self):
        if self.noun_id <= 0:
            raise ValueError("background not annotatable: noun_id must be > 0")
        if self.verb_id <= 0:
            raise ValueError("background not annotatable: verb_id must be > 0")
        if not (math.isfinite(self.ttc) and self.ttc > 0):
            raise ValueError(f"non-positive ttc {self.ttc}")


@dataclass(frozen=True)
class STAPrediction:
    """One anticipated interaction: box, noun, verb, time to contact, score."""

    box: BoundingBox
    noun_id: int
    verb_id: int
    ttc: float
    score: float

    def __post_init__(self):
        if self.noun_id <= 0 or self.verb_id <= 0:
            raise ValueError("predictions must carry non-background noun and verb ids")
        if not (math.isfinite(self.ttc) and self.ttc > 0):
            raise ValueError(f"non-positive ttc {self.ttc}")
        if not (SCORE_THRESHOLD <= self.score <= 1.0):
            raise ValueError(
                f"score {self.score} outside [{SCORE_THRESHOLD}, 1]: "
                "sub-threshold predictions must not be emitted"
            )


@dataclass(frozen=True)
class SampleMeta:
    """Per-sample annotation record as stored on disk."""

    uid: str
    video: str
    frame: int
    objects: tuple

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"sample {self.uid}: negative frame index")
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True)
class ObservedClip:
    """Model input: a high-resolution still plus a low-resolution clip.

    ``still`` is [3, H, W]; ``video`` is [3, T, h, w] and ends at the
    still frame. ``tau_o`` (the observation time in seconds) is derived
    as T / frame_rate.
    """

    still: "object"  # torch.Tensor [3, H, W]
    video: "object"  # torch.Tensor [3, T, h, w]
    timestamp_t: float
    frame_rate: float

    @property
    def tau_o(self) -> float:
        return self.video.shape[1] / self.frame_rate


@dataclass(frozen=True)
class Sample:
    """A clip plus its (possibly empty) ground-truth annotations."""

    clip: ObservedClip
    annotations: tuple = field(default_factory=tuple)
    uid: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
