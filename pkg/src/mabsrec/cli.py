"""Batch command surface: prepare / train / eval / ablate."""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import artifacts, corpus, metrics, pipeline, trainer
from .autodiff import ParamSet
from .config import (
    ABLATIONS,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    preset_config,
)


def _fail(message: str, **context):
    payload = {"error": message}
    payload.update(context)
    click.echo("ERROR " + json.dumps(payload, sort_keys=True), err=True)
    sys.exit(1)


def _resolve_config(config_path, preset, overrides: dict) -> TrainConfig:
    if preset:
        cfg = preset_config(preset)
    elif config_path:
        cfg = load_config(config_path)
    else:
        cfg = TrainConfig()
    if config_path and preset:
        base = config_to_dict(preset_config(preset))
        base.update(json.loads(Path(config_path).read_text()))
        cfg = config_from_dict(base)
    merged = config_to_dict(cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(merged)


def _echo_config(out_dir: Path, cfg: TrainConfig, name: str, extra: dict | None = None):
    data = config_to_dict(cfg)
    if extra:
        data.update(extra)
    (out_dir / name).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


shared_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON config file; CLI flags override it."),
    click.option("--seed", type=int, default=None),
    click.option("--out", "out_dir", type=click.Path(), required=True),
    click.option("--k-pop", type=float, default=None),
    click.option("--k-subj", type=float, default=None),
    click.option("--preset", type=click.Choice(["beauty", "sports", "ml20m"]), default=None,
                 help="Per-dataset hyperparameter defaults."),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@click.group()
def main():
    """Bias-aware sequential recommendation pipeline."""


@main.command()
@_add_options(shared_options)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--format", "data_format", type=click.Choice(["csv_events", "movielens_ratings"]),
              default="csv_events")
@click.option("--movies", "movies_path", type=click.Path(exists=True), default=None,
              help="Sidecar movies file for movielens_ratings.")
def prepare(config_path, seed, out_dir, k_pop, k_subj, preset, data_path, data_format, movies_path):
    """Ingest a dataset and write deterministic corpus artifacts."""
    try:
        cfg = _resolve_config(config_path, preset,
                              {"seed": seed, "k_pop": k_pop, "k_subj": k_subj})
        log = corpus.load_interactions(data_path, data_format, movies_path)
        prepared = pipeline.prepare_data(log, cfg)
    except (corpus.CorpusError, ValueError) as exc:
        _fail(str(exc), command="prepare")
    out = Path(out_dir)
    artifacts.save_prepared(out, prepared, cfg)
    stats = prepared.stats
    click.echo(f"users:        {stats['users']}")
    click.echo(f"items:        {stats['items']}")
    click.echo(f"interactions: {stats['interactions']}")
    click.echo(f"avg_length:   {stats['avg_length']:.2f}")
    click.echo(f"density:      {stats['density']:.3e}")
    click.echo(f"removed_users: {stats['removed_users']}")
    click.echo(f"artifacts written to {out}")


@main.command()
@_add_options(shared_options)
@click.option("--artifacts", "artifacts_dir", type=click.Path(exists=True), required=True)
@click.option("--ablation", type=click.Choice(list(ABLATIONS)), default=None)
def train(config_path, seed, out_dir, k_pop, k_subj, preset, artifacts_dir, ablation):
    """Train on prepared artifacts; writes checkpoint, log, config echo."""
    try:
        cfg = _resolve_config(config_path, preset,
                              {"seed": seed, "k_pop": k_pop, "k_subj": k_subj,
                               "ablation": ablation})
        prepared = artifacts.load_prepared(artifacts_dir, cfg)
        model, log = trainer.train(prepared, cfg)
    except (FileNotFoundError, corpus.CorpusError, ValueError, trainer.TrainingDiverged) as exc:
        _fail(str(exc), command="train")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.params.save(out / "checkpoint.bin")
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as f:
        for rec in log:
            f.write(json.dumps(dataclasses.asdict(rec), sort_keys=True) + "\n")
    _echo_config(out, cfg, "train_config.json", {"vocab_hash": prepared.vocab_hash()})
    best = trainer.best_epoch(log)
    click.echo(f"ablation: {cfg.ablation}")
    click.echo(f"epochs run: {len(log)}")
    click.echo(f"best epoch {best.epoch}: val recall@10 {best.val_recall10:.4f}")
    click.echo(f"checkpoint written to {out / 'checkpoint.bin'}")


@main.command("eval")
@_add_options(shared_options)
@click.option("--artifacts", "artifacts_dir", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(exists=True), required=True,
              help="Directory holding checkpoint.bin and train_config.json.")
@click.option("--split", type=click.Choice(["valid", "test"]), default="test")
@click.option("--buckets", default=None, help="Comma-separated length bucket edges.")
def eval_cmd(config_path, seed, out_dir, k_pop, k_subj, preset, artifacts_dir,
             checkpoint_dir, split, buckets):
    """Evaluate a checkpoint; writes overall and bucketed reports."""
    try:
        ckpt_dir = Path(checkpoint_dir)
        echo = json.loads((ckpt_dir / "train_config.json").read_text())
        ckpt_vocab_hash = echo.pop("vocab_hash", None)
        cfg = config_from_dict(echo)
        prepared = artifacts.load_prepared(artifacts_dir, cfg)
        if ckpt_vocab_hash != prepared.vocab_hash():
            _fail(
                "vocabulary mismatch between checkpoint and artifacts",
                command="eval",
                checkpoint_hash=ckpt_vocab_hash,
                artifacts_hash=prepared.vocab_hash(),
            )
        rng = np.random.default_rng(cfg.seed)
        model = trainer.build_model(prepared.n_items, cfg, prepared.graphs, rng)
        model.params.load(ckpt_dir / "checkpoint.bin")
        edges = [int(b) for b in buckets.split(",")] if buckets else None
        report = metrics.evaluate(model, prepared, cfg, split, edges)
    except (FileNotFoundError, corpus.CorpusError, ValueError) as exc:
        _fail(str(exc), command="eval")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(metrics.report_to_text(report))
    (out / "report.csv").write_text(metrics.report_to_csv_row(report, run_id=split))
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _echo_config(out, cfg, "eval_config.json", {"vocab_hash": prepared.vocab_hash()})
    click.echo(metrics.report_to_text(report), nl=False)


@main.command()
@_add_options(shared_options)
@click.option("--artifacts", "artifacts_dir", type=click.Path(exists=True), required=True)
def ablate(config_path, seed, out_dir, k_pop, k_subj, preset, artifacts_dir):
    """Train all four variants under one seed; emit an NDCG comparison table."""
    try:
        cfg = _resolve_config(config_path, preset,
                              {"seed": seed, "k_pop": k_pop, "k_subj": k_subj})
        prepared = artifacts.load_prepared(artifacts_dir, cfg)
        rows = []
        for variant in ABLATIONS:
            variant_cfg = config_from_dict({**config_to_dict(cfg), "ablation": variant})
            model, _ = trainer.train(prepared, variant_cfg)
            report = metrics.evaluate(model, prepared, variant_cfg, "test")
            rows.append((variant, report["metrics"]["ndcg@5"], report["metrics"]["ndcg@10"]))
    except (FileNotFoundError, corpus.CorpusError, ValueError, trainer.TrainingDiverged) as exc:
        _fail(str(exc), command="ablate")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["variant\tndcg@5\tndcg@10"]
    for variant, n5, n10 in rows:
        lines.append(f"{variant}\t{n5:.6f}\t{n10:.6f}")
    table = "\n".join(lines) + "\n"
    (out / "ablation.tsv").write_text(table)
    _echo_config(out, cfg, "ablate_config.json", {"vocab_hash": prepared.vocab_hash()})
    click.echo(table, nl=False)


if __name__ == "__main__":
    main()
