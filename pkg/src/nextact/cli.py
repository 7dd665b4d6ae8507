"""Command-line surface: train, eval, predict, synth, ablate.

Exit codes: 0 success, 2 usage/config/schema error, 3 data not found.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import yaml

from . import config as C
from . import io, metrics, synth, trainer
from .data import InteractionDataset
from .model import AnticipationModel


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(config_path, preset, overrides):
    try:
        return C.resolve_config(config_path, preset, overrides)
    except (C.ConfigError, FileNotFoundError, OSError) as exc:
        _fail(2, str(exc))


def _open_dataset(root, cfg, mode):
    try:
        return InteractionDataset(root, cfg.preprocess, mode=mode)
    except FileNotFoundError as exc:
        _fail(3, str(exc))
    except io.SchemaError as exc:
        _fail(2, str(exc))


def _build_model(cfg, dataset) -> AnticipationModel:
    return AnticipationModel(dataset.taxonomy, cfg.model_config())


@click.group()
def main():
    """Next-active-object interaction anticipation toolkit."""


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--preset", default=None)
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--resume", "resume_from", type=click.Path(exists=False), default=None)
@click.option("-o", "--override", "overrides", multiple=True,
              help="dotted config override, e.g. -o train.seed=3")
def cmd_train(config_path, preset, run_dir, resume_from, overrides):
    """Train a model; the run directory gets the resolved config, logs,
    checkpoints and the best-model validation report."""
    cfg = _load_config(config_path, preset, overrides)
    if not cfg.data.train_dir or not cfg.data.val_dir:
        _fail(2, "config must set data.train_dir and data.val_dir")
    train_set = _open_dataset(cfg.data.train_dir, cfg, "train")
    val_set = _open_dataset(cfg.data.val_dir, cfg, "eval")
    if train_set.taxonomy != val_set.taxonomy:
        _fail(2, "train/val taxonomy mismatch")
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    C.save_resolved(cfg, run / "config.yaml")
    model = _build_model(cfg, train_set)
    best = trainer.train(
        train_set,
        val_set,
        cfg.train,
        model,
        run,
        resume_from=Path(resume_from) if resume_from else None,
    )
    click.echo(f"best checkpoint: epoch {best.epoch} -> {best.path}")
    click.echo(metrics.format_report(best.report, cfg.eval.K))


@main.command("eval")
@click.argument("pred_file", type=click.Path())
@click.argument("ann_file", type=click.Path())
@click.option("--iou", "iou_threshold", type=float, default=0.5)
@click.option("--ttc-tolerance", type=float, default=0.25)
@click.option("-K", "--top-k", "top_k", type=int, default=5)
@click.option("--report-out", type=click.Path(), default=None)
def cmd_eval(pred_file, ann_file, iou_threshold, ttc_tolerance, top_k, report_out):
    """Score a prediction file against an annotation file."""
    for path in (pred_file, ann_file):
        if not Path(path).exists():
            _fail(2, f"file not found: {path}")
    try:
        criteria = metrics.MatchCriteria(
            iou_threshold=iou_threshold, ttc_tolerance=ttc_tolerance, K=top_k
        )
        report = metrics.evaluate(pred_file, ann_file, criteria)
    except (io.SchemaError, ValueError) as exc:
        _fail(2, str(exc))
    click.echo(metrics.format_report(report, top_k))
    if report_out:
        Path(report_out).write_text(json.dumps(report.as_dict(), indent=1))


@main.command("predict")
@click.argument("checkpoint", type=click.Path())
@click.argument("dataset_dir", type=click.Path())
@click.argument("out_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="resolved config; defaults to <run_dir>/config.yaml")
def cmd_predict(checkpoint, dataset_dir, out_path, config_path):
    """Run inference over a dataset and write the prediction file."""
    ckpt = Path(checkpoint)
    if not ckpt.exists():
        _fail(3, f"checkpoint not found: {ckpt}")
    if config_path is None:
        candidate = ckpt.parent.parent / "config.yaml"
        if not candidate.exists():
            _fail(2, f"cannot locate config (tried {candidate}); pass --config")
        config_path = candidate
    cfg = _load_config(config_path, None, ())
    dataset = _open_dataset(dataset_dir, cfg, "eval")
    model = _build_model(cfg, dataset)
    try:
        trainer.load_checkpoint(ckpt, model)
    except (ValueError, RuntimeError) as exc:
        _fail(2, f"checkpoint/config mismatch: {exc}")
    preds = trainer.predict_dataset(model, dataset)
    io.serialize_predictions(preds, out_path)
    click.echo(f"wrote {sum(len(v) for v in preds.values())} predictions "
               f"for {len(preds)} samples to {out_path}")


@main.command("synth")
@click.argument("spec_path", type=click.Path())
@click.option("-n", "--num-samples", type=int, required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="override the spec seed")
def cmd_synth(spec_path, num_samples, out_dir, seed):
    """Generate a synthetic motion-determined dataset."""
    if not Path(spec_path).exists():
        _fail(2, f"spec file not found: {spec_path}")
    try:
        raw = yaml.safe_load(Path(spec_path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ValueError("spec top level must be a mapping")
        if seed is not None:
            raw["seed"] = seed
        known = {f.name for f in dataclasses.fields(synth.SynthSceneSpec)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown spec keys {sorted(unknown)}")
        if "speed_rules" in raw:
            raw["speed_rules"] = tuple(
                (name, tuple(rng)) for name, rng in raw["speed_rules"]
            )
        if "object_size" in raw:
            raw["object_size"] = tuple(raw["object_size"])
        spec = synth.SynthSceneSpec(**raw)
        synth.generate_synthetic(spec, num_samples, out_dir)
    except (ValueError, yaml.YAMLError, TypeError) as exc:
        _fail(2, str(exc))
    click.echo(f"wrote {num_samples} samples to {out_dir}")


ABLATION_TABLES = {
    # Head variants.
    "2": [
        ("nouns_only", {"head.nouns_only": True}),
        ("standard_head", {"head.standard_head": True}),
        ("proposed_head", {}),
    ],
    # Head component removals.
    "3": [
        ("proposed_head", {}),
        ("-global_features", {"head.no_global": True}),
        ("-res_connections", {"head.no_residual": True}),
        ("-verb_noun_product", {"head.no_verb_noun_product": True}),
        ("sum_fusion", {"head.sum_fusion": True}),
    ],
    # Backbone component removals.
    "4": [
        ("proposed_backbone", {}),
        ("wo_3d_backbone", {"backbone.use_3d": False}),
        ("wo_conv_post_sum", {"backbone.conv_post_sum": False}),
        ("post_pyramid_fusion", {"backbone.post_pyramid_fusion": True}),
    ],
}


@main.command("ablate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--preset", default=None)
@click.option("--table", "table_id", required=True)
@click.option("--run-dir", required=True, type=click.Path())
@click.option("-o", "--override", "overrides", multiple=True)
def cmd_ablate(config_path, preset, table_id, run_dir, overrides):
    """Train and evaluate every variant of one ablation table with a
    shared seed, then print a comparative report."""
    if table_id not in ABLATION_TABLES:
        _fail(2, f"unknown table '{table_id}' (have {sorted(ABLATION_TABLES)})")
    base_cfg = _load_config(config_path, preset, overrides)
    if not base_cfg.data.train_dir or not base_cfg.data.val_dir:
        _fail(2, "config must set data.train_dir and data.val_dir")
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, flag_overrides in ABLATION_TABLES[table_id]:
        extra = tuple(f"{k}={json.dumps(v)}" for k, v in flag_overrides.items())
        cfg = _load_config(config_path, preset, tuple(overrides) + extra)
        train_set = _open_dataset(cfg.data.train_dir, cfg, "train")
        val_set = _open_dataset(cfg.data.val_dir, cfg, "eval")
        variant_dir = run / name
        variant_dir.mkdir(parents=True, exist_ok=True)
        C.save_resolved(cfg, variant_dir / "config.yaml")
        model = _build_model(cfg, train_set)
        best = trainer.train(train_set, val_set, cfg.train, model, variant_dir)
        rows.append((name, best.report))
    header = f"{'variant':<22}{'Noun':>10}{'N+V':>10}{'N+TTC':>10}{'Overall':>10}"
    lines = [header, "-" * len(header)]
    for name, r in rows:
        lines.append(
            f"{name:<22}{r.map_noun:>10.2f}{r.map_noun_verb:>10.2f}"
            f"{r.map_noun_ttc:>10.2f}{r.map_overall:>10.2f}"
        )
    report = "\n".join(lines)
    click.echo(report)
    (run / "ablation_report.txt").write_text(report + "\n")


if __name__ == "__main__":
    main()
