"""Command-line entry points.

Exit codes: 0 success, 2 validation error (bad inputs, bad config), 3
pipeline stage failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .data import DataError, load_dataset
from .extract import extract_from_model, save_graph
from .metrics import evaluate_runs, format_table, save_report
from .model import (
    ConfigError,
    ModelConfig,
    PriorKnowledge,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pipeline import StageError, apply_exclusions, run_pipeline, verify_run
from .synthetic import (
    Lorenz96Config,
    MotifConfig,
    gen_motif,
    load_truth,
    save_generated,
    simulate_lorenz96,
)

MOTIF_KINDS = ("fork", "v-structure", "mediator", "diamond")


def _fail_validation(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(2)


def _fail_stage(stage: str, message: str):
    click.echo(f"error in stage '{stage}': {message}", err=True)
    sys.exit(3)


def _load_config(config_path, seed) -> ModelConfig:
    overrides = {}
    if config_path:
        try:
            overrides = json.loads(Path(config_path).read_text())
        except (OSError, ValueError) as exc:
            _fail_validation(f"cannot read config file: {exc}")
    if seed is not None:
        overrides["seed"] = seed
    try:
        return ModelConfig.from_json(overrides)
    except (TypeError, ConfigError) as exc:
        _fail_validation(f"bad model config: {exc}")


def _parse_pairs(pairs):
    out = set()
    for raw in pairs:
        for sep in ("->", ":"):
            if sep in raw:
                cause, effect = raw.split(sep, 1)
                out.add((cause.strip(), effect.strip()))
                break
        else:
            _fail_validation(f"cannot parse exclusion {raw!r}; "
                             "use CAUSE->EFFECT or CAUSE:EFFECT")
    return out


@click.group()
def main():
    """Temporal causal discovery: train a masked forecaster on time
    series, extract a lagged causal graph from its sensitivities, and
    refine it by excluding links."""


@main.command()
@click.argument("kind", type=click.Choice(MOTIF_KINDS + ("lorenz96",)))
@click.argument("out_dir", type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--length", type=int, default=1000, show_default=True,
              help="series length (motifs) or emitted samples (lorenz96)")
@click.option("--variables", type=int, default=10, show_default=True,
              help="variable count (lorenz96 only)")
@click.option("--forcing", type=float, default=None,
              help="lorenz96 forcing; omit to draw from [30, 40]")
def generate(kind, out_dir, seed, length, variables, forcing):
    """Write a synthetic dataset with ground truth to OUT_DIR."""
    try:
        if kind == "lorenz96":
            config = Lorenz96Config(n_vars=variables, forcing=forcing,
                                    steps=length, seed=seed)
            dataset, truth = simulate_lorenz96(config)
            manifest = {"generator": "lorenz96", "config": config.to_json()}
        else:
            config = MotifConfig(kind=kind, seed=seed, length=length)
            dataset, truth = gen_motif(config)
            manifest = {"generator": "motif", "config": config.to_json()}
    except (DataError, ConfigError, FloatingPointError) as exc:
        _fail_validation(str(exc))
    save_generated(dataset, truth, out_dir, manifest=manifest)
    click.echo(f"wrote {out_dir} ({len(dataset.specs)} variables, "
               f"length {dataset.length})")


@main.command(name="train")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="checkpoint output path")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--exclude", "exclusions", multiple=True,
              help="excluded link CAUSE->EFFECT; repeatable")
def train_cmd(dataset_dir, out_path, config_path, seed, exclusions):
    """Train a forecaster on DATASET_DIR and save a checkpoint."""
    config = _load_config(config_path, seed)
    prior = PriorKnowledge(excluded=_parse_pairs(exclusions))
    try:
        dataset = load_dataset(dataset_dir)
        prior.validate(dataset.specs)
    except DataError as exc:
        _fail_validation(str(exc))
    try:
        model = train(dataset, prior, config)
    except Exception as exc:
        _fail_stage("train", str(exc))
    save_checkpoint(model, out_path)
    click.echo(f"trained {config.epochs} epochs, "
               f"final loss {model.telemetry['final_loss']:.4f}, "
               f"saved {out_path}")


@main.command(name="extract")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="graph JSON output path")
@click.option("--tau", type=float, default=0.15, show_default=True)
@click.option("--epsilon", type=float, default=0.05, show_default=True)
def extract_cmd(checkpoint, dataset_dir, out_path, tau, epsilon):
    """Extract a causal graph from a trained checkpoint."""
    try:
        model = load_checkpoint(checkpoint)
        dataset = load_dataset(dataset_dir)
        graph, _grads, _scores = extract_from_model(model, dataset, tau=tau,
                                                    epsilon=epsilon)
    except DataError as exc:
        _fail_validation(str(exc))
    except Exception as exc:
        _fail_stage("extract", str(exc))
    save_graph(graph, out_path)
    click.echo(f"extracted {len(graph.edges)} edges at tau={tau}, "
               f"saved {out_path}")


@main.command(name="eval")
@click.argument("graph_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="also write the report JSON here")
@click.option("--label", default="run", show_default=True)
def eval_cmd(graph_path, truth_path, out_path, label):
    """Score a graph JSON against a truth JSON and print the table."""
    from .extract import load_graph

    try:
        graph = load_graph(graph_path)
        truth = load_truth(truth_path)
        report = evaluate_runs([(graph, truth)])
    except DataError as exc:
        _fail_validation(str(exc))
    if out_path:
        save_report(report, out_path)
    click.echo(format_table([(label, report)]))


@main.command(name="pipeline")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--state-dir", type=click.Path(), default=".", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
@click.option("--tau", type=float, default=0.15, show_default=True)
@click.option("--epsilon", type=float, default=0.05, show_default=True)
@click.option("--exclude", "exclusions", multiple=True,
              help="excluded link CAUSE->EFFECT; repeatable")
def pipeline_cmd(dataset_dir, state_dir, config_path, seed, tau, epsilon,
                 exclusions):
    """Train, extract, evaluate, and persist one run under STATE_DIR."""
    config = _load_config(config_path, seed)
    prior = PriorKnowledge(excluded=_parse_pairs(exclusions))
    try:
        record = run_pipeline(dataset_dir, config, prior, tau=tau,
                              epsilon=epsilon, state_dir=state_dir)
    except StageError as exc:
        _fail_stage(exc.stage, str(exc))
    click.echo(f"run {record.run_id} complete")
    if record.has_report:
        from .pipeline import load_run_report

        click.echo(format_table([(record.run_id,
                                  load_run_report(state_dir, record.run_id))]))


@main.command(name="exclude")
@click.argument("run_id")
@click.argument("pairs", nargs=-1, required=True)
@click.option("--state-dir", type=click.Path(), default=".", show_default=True)
def exclude_cmd(run_id, pairs, state_dir):
    """Retrain RUN_ID with extra excluded links (CAUSE->EFFECT ...)."""
    new = _parse_pairs(pairs)
    try:
        record = apply_exclusions(run_id, new, state_dir=state_dir)
    except DataError as exc:
        _fail_validation(str(exc))
    except StageError as exc:
        _fail_stage(exc.stage, str(exc))
    click.echo(f"child run {record.run_id} complete "
               f"({len(record.prior.excluded)} exclusions)")


@main.command(name="verify")
@click.argument("run_id")
@click.option("--state-dir", type=click.Path(), default=".", show_default=True)
def verify_cmd(run_id, state_dir):
    """Re-extract RUN_ID from its checkpoint and compare with the stored
    graph byte-for-byte."""
    try:
        ok = verify_run(state_dir, run_id)
    except DataError as exc:
        _fail_validation(str(exc))
    if not ok:
        click.echo(f"run {run_id}: stored graph does NOT match re-extraction",
                   err=True)
        sys.exit(3)
    click.echo(f"run {run_id}: graph reproduced exactly")


@main.command(name="serve")
@click.option("--state-dir", type=click.Path(), default=".", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
def serve_cmd(state_dir, host, port):
    """Serve the run-browsing and refinement HTTP API."""
    from .server import serve_api

    try:
        serve_api(state_dir, host=host, port=port)
    except DataError as exc:
        _fail_validation(str(exc))
    except OSError as exc:
        _fail_validation(f"cannot bind {host}:{port}: {exc}")


if __name__ == "__main__":
    main()
