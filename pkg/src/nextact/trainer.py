"""Single-stage end-to-end training loop.

Momentum SGD with a piecewise-constant learning-rate schedule (dropped
by a fixed factor at configured epochs), per-epoch validation with
Top-K mAP, per-epoch checkpointing, and best-model selection by Overall
mAP (ties broken by earliest epoch). Training aborts if the total loss
goes non-finite, reporting the offending batch.
"""

from __future__ import annotations

import hashlib
import json
import random
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import metrics
from .data import InteractionDataset, collate
from .model import AnticipationModel
from .types import BoundingBox, STAPrediction

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    base_lr: float = 0.001
    weight_decay: float = 0.0001
    momentum: float = 0.9
    lr_drop_epochs: Tuple[int, ...] = (15, 30)
    lr_drop_factor: float = 10.0
    batch_size: int = 2
    max_epochs: int = 10
    seed: int = 0
    mixed_precision: bool = False

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if list(self.lr_drop_epochs) != sorted(set(self.lr_drop_epochs)):
            raise ValueError("lr_drop_epochs must be strictly increasing")


@dataclass
class CheckpointRecord:
    epoch: int
    path: Optional[Path]
    report: metrics.EvalReport
    is_best: bool = False


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Piecewise-constant schedule: drop by the factor at each boundary."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    drops = sum(1 for e in config.lr_drop_epochs if epoch >= e)
    return config.base_lr / (config.lr_drop_factor ** drops)


def seed_everything(seed: int) -> torch.Generator:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def predict_dataset(
    model: AnticipationModel, dataset: InteractionDataset, batch_size: int = 4
) -> Dict[str, List[STAPrediction]]:
    """Deterministic full-dataset inference, boxes mapped back to the
    original frame coordinate space."""
    model.eval()
    out: Dict[str, List[STAPrediction]] = {}
    for start in range(0, len(dataset), batch_size):
        items = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
        stills, videos, targets, uids = collate(items)
        batch_preds = model.predict(stills, videos)
        for preds, target, uid in zip(batch_preds, targets, uids):
            scale = float(target["scale"])
            rescaled = []
            for p in preds:
                b = p.box
                try:
                    rescaled.append(
                        STAPrediction(
                            box=BoundingBox(
                                b.x1 / scale, b.y1 / scale, b.x2 / scale, b.y2 / scale
                            ),
                            noun_id=p.noun_id,
                            verb_id=p.verb_id,
                            ttc=p.ttc,
                            score=p.score,
                        )
                    )
                except ValueError:
                    continue  # box collapsed to a point under rescaling
            out[uid] = rescaled
    return out


def validate(
    model: AnticipationModel,
    dataset: InteractionDataset,
    criteria: metrics.MatchCriteria = metrics.MatchCriteria(),
) -> metrics.EvalReport:
    preds = predict_dataset(model, dataset)
    return metrics.evaluate_records(preds, dataset.ground_truth(), criteria)


def _save_checkpoint(
    path: Path,
    model: AnticipationModel,
    optimizer: torch.optim.Optimizer,
    epoch: int,
    config: TrainConfig,
    rng: torch.Generator,
    report: metrics.EvalReport,
    extra_meta: Optional[dict] = None,
):
    torch.save(
        {
            "version": CHECKPOINT_VERSION,
            "epoch": epoch,
            "model_state": model.state_dict(),
            "optimizer_state": optimizer.state_dict(),
            "rng": {
                "torch": torch.get_rng_state(),
                "generator": rng.get_state(),
                "numpy": np.random.get_state(),
                "python": random.getstate(),
            },
            "train_config": asdict(config),
        },
        path,
    )
    sidecar = {
        "epoch": epoch,
        "config_hash": config_hash(asdict(config)),
        "val_report": report.as_dict(),
    }
    if extra_meta:
        sidecar.update(extra_meta)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))


def load_checkpoint(path, model: AnticipationModel) -> dict:
    snapshot = torch.load(path, weights_only=False)
    if snapshot.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version {snapshot.get('version')} != {CHECKPOINT_VERSION}"
        )
    model.load_state_dict(snapshot["model_state"])
    return snapshot


def _make_optimizer(model: AnticipationModel, config: TrainConfig) -> torch.optim.SGD:
    return torch.optim.SGD(
        model.parameters(),
        lr=config.base_lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )


def train(
    train_set: InteractionDataset,
    val_set: InteractionDataset,
    config: TrainConfig,
    model: AnticipationModel,
    run_dir,
    resume_from: Optional[Path] = None,
    log_every: int = 10,
) -> CheckpointRecord:
    """Train, validating and checkpointing each epoch; returns the best
    checkpoint by Overall Top-K mAP."""
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / "train_log.jsonl"

    rng = seed_everything(config.seed)
    optimizer = _make_optimizer(model, config)
    start_epoch = 0
    if resume_from is not None:
        snapshot = load_checkpoint(resume_from, model)
        optimizer.load_state_dict(snapshot["optimizer_state"])
        start_epoch = snapshot["epoch"] + 1
        stored = snapshot.get("train_config", {})
        for key in ("base_lr", "lr_drop_epochs", "lr_drop_factor"):
            if stored.get(key) is not None and list(np.atleast_1d(stored[key])) != list(
                np.atleast_1d(getattr(config, key))
            ):
                warnings.warn(
                    f"resuming with changed {key}: applying the new schedule"
                )
        state = snapshot["rng"]
        torch.set_rng_state(state["torch"])
        rng.set_state(state["generator"])
        np.random.set_state(state["numpy"])
        random.setstate(state["python"])

    records: List[CheckpointRecord] = []
    step = 0
    log_f = open(log_path, "a")

    def run_val_and_save(epoch: int):
        report = validate(model, val_set)
        path = ckpt_dir / (f"epoch_{epoch:04d}.pt" if epoch >= 0 else "epoch_init.pt")
        _save_checkpoint(path, model, optimizer, epoch, config, rng, report)
        records.append(CheckpointRecord(epoch=epoch, path=path, report=report))

    if config.max_epochs == 0 or start_epoch >= config.max_epochs:
        run_val_and_save(start_epoch - 1 if start_epoch else -1)
    for epoch in range(start_epoch, config.max_epochs):
        model.train()
        train_set.set_epoch(epoch)
        lr = lr_at(epoch, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = torch.randperm(len(train_set), generator=rng).tolist()
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            items = [train_set[i] for i in batch_idx]
            stills, videos, targets, uids = collate(items)
            parts = model.compute_losses(stills, videos, targets, rng)
            total = parts["total"]
            if not torch.isfinite(total):
                raise FloatingPointError(
                    f"non-finite total loss at step {step}, batch uids {uids}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            if step % log_every == 0 or start + config.batch_size >= len(order):
                entry = {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    **{k: float(v.detach()) for k, v in parts.items()},
                }
                log_f.write(json.dumps(entry) + "\n")
                log_f.flush()
            step += 1
        run_val_and_save(epoch)
    log_f.close()

    best = max(records, key=lambda r: (r.report.map_overall, -r.epoch))
    best.is_best = True
    (run_dir / "best.json").write_text(
        json.dumps(
            {"epoch": best.epoch, "path": str(best.path), "val_report": best.report.as_dict()},
            indent=1,
        )
    )
    return best
