"""Synthetic motion-determined scenes for desk-scale experiments.

Each sample is a short clip of drifting shapes plus a hand marker moving
with constant speed toward exactly one object. The ground truth is that
object's box in the last frame, its shape class as the noun, the hand's
speed regime as the verb, and the remaining time until the hand box
touches the object box as the time to contact. The verb also sets an
oscillation of the target object that vanishes exactly in the last
frame. Several objects may share a shape, and neither the hand's speed
nor the oscillation is visible in a single frame, so the verb cannot be
recovered from the still frame alone; the temporal branch is causally
necessary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from . import io
from .types import BoundingBox, InteractionAnnotation, SampleMeta, Taxonomy

SHAPES = ("block", "ball", "wedge")  # square, circle, triangle
SHAPE_COLORS = {
    "block": (40, 90, 220),
    "ball": (40, 200, 80),
    "wedge": (230, 200, 40),
}
HAND_COLOR = (230, 40, 40)


@dataclass(frozen=True)
class SynthSceneSpec:
    canvas: int = 96
    min_objects: int = 2
    max_objects: int = 3
    object_size: Tuple[int, int] = (14, 20)
    hand_size: int = 10
    clip_len: int = 16
    fps: float = 8.0
    # verb name -> (min, max) hand speed in px/frame
    speed_rules: Tuple[Tuple[str, Tuple[float, float]], ...] = (
        ("reach_slow", (1.0, 1.8)),
        ("reach_fast", (3.6, 5.0)),
    )
    # Per-verb (min, max) oscillation amplitude of the *target* object in
    # px.  The oscillation has zero phase in the last frame, so the still
    # frame is unaffected; only the motion history differs between verbs.
    # It puts the verb signal directly inside the target's RoI, where the
    # head actually looks, rather than only at the (possibly distant) hand.
    wobble_rules: Tuple[Tuple[float, float], ...] = ((0.0, 0.0), (6.0, 8.0))
    wobble_period: float = 4.0
    drift_max: float = 0.15
    duplicate_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.canvas < 4 * max(self.object_size):
            raise ValueError("canvas too small for the configured object size")
        if len(SHAPES) < 2 or len(self.speed_rules) < 2:
            raise ValueError("need at least 2 representable nouns and verbs")
        if len(self.wobble_rules) != len(self.speed_rules):
            raise ValueError("wobble_rules must pair with speed_rules")

    def taxonomy(self) -> Taxonomy:
        return Taxonomy(nouns=list(SHAPES), verbs=[v for v, _ in self.speed_rules])


def _draw_shape(img: np.ndarray, shape: str, cx: float, cy: float, size: int):
    h, w, _ = img.shape
    x1 = int(round(cx - size / 2))
    y1 = int(round(cy - size / 2))
    x1 = max(0, min(w - size, x1))
    y1 = max(0, min(h - size, y1))
    color = np.array(SHAPE_COLORS[shape], dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "block":
        mask = np.ones((size, size), dtype=bool)
    elif shape == "ball":
        r = size / 2
        mask = (yy - r + 0.5) ** 2 + (xx - r + 0.5) ** 2 <= r * r
    else:  # wedge: lower-left triangle
        mask = yy >= xx
    img[y1 : y1 + size, x1 : x1 + size][mask] = color
    return x1, y1, x1 + size, y1 + size


def _draw_hand(img: np.ndarray, cx: float, cy: float, size: int):
    h, w, _ = img.shape
    x1 = int(round(cx - size / 2))
    y1 = int(round(cy - size / 2))
    x1 = max(0, min(w - size, x1))
    y1 = max(0, min(h - size, y1))
    img[y1 : y1 + size, x1 : x1 + size] = HAND_COLOR
    stripe = max(1, size // 4)
    mid = y1 + size // 2
    img[mid - stripe // 2 : mid - stripe // 2 + stripe, x1 : x1 + size] = (255, 255, 255)


def _box(cx: float, cy: float, size: int, canvas: int) -> Tuple[float, float, float, float]:
    x1 = min(max(0.0, cx - size / 2), canvas - size)
    y1 = min(max(0.0, cy - size / 2), canvas - size)
    return (x1, y1, x1 + size, y1 + size)


def _intersects(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


@dataclass
class _Scene:
    frames: np.ndarray  # [T, C, C, 3] uint8
    target_box: Tuple[float, float, float, float]
    noun: str
    verb: str
    ttc: float
    target_index: int
    object_boxes: List[Tuple[float, float, float, float]]


def _simulate(
    spec: SynthSceneSpec, rng: np.random.Generator, verb_idx: int
) -> Optional[_Scene]:
    c = spec.canvas
    n_obj = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    sizes = [int(rng.integers(*spec.object_size)) for _ in range(n_obj)]
    shapes = [SHAPES[int(rng.integers(len(SHAPES)))] for _ in range(n_obj)]
    if n_obj >= 2 and rng.random() < spec.duplicate_prob:
        shapes[1] = shapes[0]
        sizes[1] = sizes[0]
    margin = max(sizes) / 2 + 2
    centers = []
    for i in range(n_obj):
        for _ in range(50):
            p = rng.uniform(margin, c - margin, size=2)
            if all(np.linalg.norm(p - q) > (sizes[i] + sizes[j]) / 2 + 6
                   for j, q in enumerate(centers)):
                centers.append(p)
                break
        else:
            return None
    drifts = [rng.uniform(-spec.drift_max, spec.drift_max, size=2) for _ in range(n_obj)]

    target = int(rng.integers(n_obj))
    verb, (v_lo, v_hi) = spec.speed_rules[verb_idx]
    speed = float(rng.uniform(v_lo, v_hi))
    # Target oscillation: sinusoidal with zero phase at the last frame, so
    # the annotated box and the still frame are untouched by the verb.
    w_lo, w_hi = spec.wobble_rules[verb_idx]
    wobble_amp = float(rng.uniform(w_lo, w_hi))
    wobble_dir = rng.uniform(0, 2 * np.pi)
    wobble_vec = np.array([np.cos(wobble_dir), np.sin(wobble_dir)])
    wobble_max = max(hi for _, hi in spec.wobble_rules)

    def wobble(k: int, amp: float) -> np.ndarray:
        t_last = spec.clip_len - 1
        return wobble_vec * amp * np.sin(
            2 * np.pi * (k - t_last) / spec.wobble_period
        )
    # Sample the remaining approach *distance* from the same distribution
    # for every verb, so the hand-to-target gap in the last frame carries
    # no information about the speed; only the motion does. The time to
    # contact is then distance / speed.
    approach_px = float(rng.uniform(8.0, 36.0))
    ttc_frames = approach_px / speed
    t_last = spec.clip_len - 1

    tgt_center_last = centers[target] + drifts[target] * t_last
    theta = rng.uniform(0, 2 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta)])
    contact_gap = (sizes[target] + spec.hand_size) / 2
    hand_last = tgt_center_last + direction * (contact_gap + approach_px)
    hand_start = hand_last + direction * speed * t_last  # moves opposite to direction
    hm = spec.hand_size / 2

    def hand_visible(p: np.ndarray) -> bool:
        return hm <= p[0] <= c - hm and hm <= p[1] <= c - hm

    # A fast hand may enter the scene partway through the clip (its earlier
    # positions fall outside the canvas and are simply not drawn).  Requiring
    # the full trajectory to fit would reject nearly every fast scene and
    # skew the verb distribution toward slow.  The hand only has to be
    # visible for the last few frames so the motion is observable.  The
    # visibility constraint is evaluated at the *maximum* configured speed
    # for every scene; otherwise fast scenes would need more clearance
    # behind the hand than slow ones, and that extra clearance in the last
    # frame would reveal the verb without looking at the motion.
    min_visible = 6
    v_max = max(hi for _, (_, hi) in spec.speed_rules)
    for back in range(min_visible):
        if not hand_visible(hand_last + direction * v_max * back):
            return None

    # The target's whole oscillation envelope must stay inside the canvas.
    # Checked at the maximum configured amplitude for every scene, so
    # target placement carries no verb information.
    tm = sizes[target] / 2
    for k in range(spec.clip_len):
        for sign in (1.0, -1.0):
            p = centers[target] + drifts[target] * k + sign * wobble_vec * wobble_max
            if not (tm <= p[0] <= c - tm and tm <= p[1] <= c - tm):
                return None

    frames = np.zeros((spec.clip_len, c, c, 3), dtype=np.uint8)
    object_boxes_last: List[Tuple[float, float, float, float]] = []
    # Background texture is sampled once per scene and held fixed across
    # frames, so temporal variation in the clip comes from motion alone.
    noise = rng.integers(0, 12, size=(c, c, 1), dtype=np.uint8)
    for k in range(spec.clip_len):
        img = np.full((c, c, 3), 210, dtype=np.uint8)
        img = (img - noise).astype(np.uint8)
        boxes_k = []
        for i in range(n_obj):
            pc = centers[i] + drifts[i] * k
            if i == target:
                pc = pc + wobble(k, wobble_amp)
            _draw_shape(img, shapes[i], pc[0], pc[1], sizes[i])
            boxes_k.append(_box(pc[0], pc[1], sizes[i], c))
        hand_pos = hand_start + (hand_last - hand_start) * (k / max(t_last, 1))
        # Contact checks use the unclamped hand extent so a partially
        # off-canvas hand still cannot overlap an object.
        hb = (hand_pos[0] - hm, hand_pos[1] - hm, hand_pos[0] + hm, hand_pos[1] + hm)
        if any(_intersects(hb, ob) for ob in boxes_k):
            return None  # contact must happen strictly after the clip
        if hand_visible(hand_pos):
            _draw_hand(img, hand_pos[0], hand_pos[1], spec.hand_size)
        frames[k] = img
        if k == t_last:
            object_boxes_last = boxes_k

    # Forward-simulate past t until the hand box meets the target box.
    hand_pos = hand_last.copy()
    tgt_center = tgt_center_last.copy()
    contact_frame = None
    for step in range(1, 200):
        hand_pos = hand_pos - direction * speed
        tgt_center = tgt_center + drifts[target]
        hb = _box(hand_pos[0], hand_pos[1], spec.hand_size, c)
        tb = _box(tgt_center[0], tgt_center[1], sizes[target], c)
        if _intersects(hb, tb):
            contact_frame = step
            break
    if contact_frame is None:
        return None
    ttc = contact_frame / spec.fps

    return _Scene(
        frames=frames,
        target_box=object_boxes_last[target],
        noun=shapes[target],
        verb=verb,
        ttc=ttc,
        target_index=target,
        object_boxes=object_boxes_last,
    )


def generate_scene(spec: SynthSceneSpec, rng: np.random.Generator) -> _Scene:
    # The verb is drawn once and held fixed across retries.  Fast scenes are
    # geometrically harder to place, so retrying with a fresh verb each
    # attempt would skew the class distribution toward slow.
    verb_idx = int(rng.integers(len(spec.speed_rules)))
    for _ in range(400):
        scene = _simulate(spec, rng, verb_idx)
        if scene is not None:
            return scene
    raise ValueError("unsatisfiable scene spec (canvas too small?)")


def generate_synthetic(spec: SynthSceneSpec, n_samples: int, out_dir) -> Path:
    """Write ``n_samples`` scenes in the canonical dataset layout.

    Layout: out_dir/{annotations.json, frames/<uid>/<%06d>.png}. A fixed
    seed makes regeneration byte-identical.
    """
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    taxonomy = spec.taxonomy()
    rng = np.random.default_rng(spec.seed)
    noun_index = {n: i + 1 for i, n in enumerate(taxonomy.nouns)}
    verb_index = {v: i + 1 for i, v in enumerate(taxonomy.verbs)}
    samples = []
    for i in range(n_samples):
        scene = generate_scene(spec, rng)
        uid = f"synth_{spec.seed:04d}_{i:05d}"
        frame_dir = out / "frames" / uid
        frame_dir.mkdir(parents=True, exist_ok=True)
        for k in range(scene.frames.shape[0]):
            Image.fromarray(scene.frames[k]).save(frame_dir / f"{k:06d}.png")
        x1, y1, x2, y2 = scene.target_box
        ann = InteractionAnnotation(
            box=BoundingBox(x1, y1, x2, y2),
            noun_id=noun_index[scene.noun],
            verb_id=verb_index[scene.verb],
            ttc=scene.ttc,
        )
        samples.append(
            SampleMeta(
                uid=uid,
                video=uid,
                frame=spec.clip_len - 1,
                objects=(ann,),
            )
        )
    io.write_annotation_file(out / "annotations.json", taxonomy, samples)
    return out
