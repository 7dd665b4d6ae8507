"""Next-active-object interaction anticipation: joint detection, verb
prediction and time-to-contact regression from a high-resolution still
frame plus a low-resolution video clip, with Top-K mAP evaluation."""

from .types import (
    BoundingBox,
    InteractionAnnotation,
    ObservedClip,
    Sample,
    SampleMeta,
    STAPrediction,
    Taxonomy,
)

__all__ = [
    "BoundingBox",
    "InteractionAnnotation",
    "ObservedClip",
    "Sample",
    "SampleMeta",
    "STAPrediction",
    "Taxonomy",
]

__version__ = "0.1.0"
