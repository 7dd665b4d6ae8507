"""Dataset directory loading: frames on disk plus the canonical
annotation file, preprocessed into model-ready samples."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from PIL import Image

from . import io
from .preprocess import PreprocessConfig, preprocess, sample_clip
from .types import SampleMeta, Taxonomy


class InteractionDataset:
    """Samples stored as root/{annotations.json, frames/<uid>/<%06d>.png}.

    Loading and preprocessing are stateless per sample; results are
    cached when preprocessing is deterministic (eval mode, or a train
    config with a single candidate scale).
    """

    def __init__(
        self,
        root,
        config: PreprocessConfig = None,
        mode: str = "eval",
        cache: bool = True,
    ):
        self.root = Path(root)
        self.config = config or PreprocessConfig()
        self.mode = mode
        doc_path = self.root / "annotations.json"
        if not doc_path.exists():
            raise FileNotFoundError(f"no annotation file at {doc_path}")
        import json

        doc = json.loads(doc_path.read_text())
        self.taxonomy = io.load_taxonomy(doc)
        self.samples: List[SampleMeta] = io.parse_annotations(doc, self.taxonomy)
        deterministic = mode == "eval" or (
            len(set(self.config.train_short_sides)) == 1 and self.config.flip_prob == 0
        )
        self._cache: Optional[Dict[int, tuple]] = {} if (cache and deterministic) else None
        # With random augmentation the preprocessed tensors cannot be
        # reused, but the decoded frames can: skip re-reading PNGs on
        # every epoch.
        self._frames_cache: Optional[Dict[int, np.ndarray]] = (
            {} if (cache and self._cache is None) else None
        )
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        """Advance the augmentation stream; a no-op for eval datasets."""
        self.epoch = int(epoch)

    def __len__(self) -> int:
        return len(self.samples)

    def _load_frames(self, meta: SampleMeta) -> np.ndarray:
        frame_dir = self.root / "frames" / meta.video
        indices = sample_clip(meta.frame, self.config.clip_len, self.config.clip_stride)
        frames = []
        for idx in indices:
            path = frame_dir / f"{idx:06d}.png"
            if not path.exists():
                raise FileNotFoundError(f"sample '{meta.uid}': missing frame {path}")
            frames.append(np.asarray(Image.open(path).convert("RGB")))
        return np.stack(frames)

    def __getitem__(self, i: int) -> Tuple[object, Dict[str, torch.Tensor], str]:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        meta = self.samples[i]
        if self._frames_cache is not None and i in self._frames_cache:
            frames = self._frames_cache[i]
        else:
            frames = self._load_frames(meta)
            if self._frames_cache is not None:
                self._frames_cache[i] = frames
        raw_boxes = np.array(
            [a.box.as_list() for a in meta.objects], dtype=np.float64
        ).reshape(-1, 4)
        rng = None
        if self.mode == "train":
            # Seeded by (epoch, index): reproducible, but augmentation
            # varies across epochs.
            rng = np.random.default_rng((self.epoch, i))
        clip, boxes, scale = preprocess(
            frames,
            self.config,
            mode=self.mode,
            rng=rng,
            boxes=raw_boxes,
            timestamp_t=meta.frame / self.config.frame_rate,
        )
        target = {
            "boxes": torch.tensor(boxes, dtype=torch.float32).reshape(-1, 4),
            "nouns": torch.tensor([a.noun_id for a in meta.objects], dtype=torch.long),
            "verbs": torch.tensor([a.verb_id for a in meta.objects], dtype=torch.long),
            "ttc": torch.tensor([a.ttc for a in meta.objects], dtype=torch.float32),
            "scale": torch.tensor(scale, dtype=torch.float64),
        }
        item = (clip, target, meta.uid)
        if self._cache is not None:
            self._cache[i] = item
        return item

    def ground_truth(self) -> Dict[str, tuple]:
        """uid -> annotation tuple map for metric evaluation.

        Boxes are in original frame coordinates; use together with
        predictions mapped back to the same space.
        """
        return {s.uid: s.objects for s in self.samples}


def collate(items) -> Tuple[torch.Tensor, torch.Tensor, list, list]:
    """Stack same-shaped clips into batch tensors."""
    stills = torch.stack([clip.still for clip, _, _ in items])
    videos = torch.stack([clip.video for clip, _, _ in items])
    targets = [t for _, t, _ in items]
    uids = [u for _, _, u in items]
    return stills, videos, targets, uids
