"""Run orchestration and persistence.

A state directory is a flat, inspectable layout: one subdirectory per run
holding a JSON record, the model checkpoint, the extracted graph, raw
gradient matrices, and (when ground truth is available) an evaluation
report. Records are immutable once written; refinement creates child runs,
never edits.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DataError, Dataset, load_dataset
from .extract import (
    DEFAULT_MIN_SENSITIVITY,
    CausalGraph,
    extract_from_model,
    gradients_to_json,
    graph_json_bytes,
    load_graph,
    save_graph,
)
from .metrics import EvalReport, evaluate_runs, load_report, save_report
from .model import (
    ModelConfig,
    PriorKnowledge,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .synthetic import GroundTruth, load_truth

RUN_SCHEMA = "causalgrad-run-v1"

# pipeline stages, in execution order; failures carry the stage name
STAGES = ("dataset", "train", "extract", "evaluate", "persist")


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag for the record."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass
class RunRecord:
    """Everything persisted about one pipeline run."""

    run_id: str
    dataset_ref: str
    config: ModelConfig
    prior: PriorKnowledge
    tau: float
    epsilon: float
    min_sensitivity: float = 0.01
    parent_id: str | None = None
    created_at: str = ""
    completed_at: str | None = None
    error: dict | None = None           # {"stage": ..., "message": ...}
    telemetry: dict = field(default_factory=dict)
    has_graph: bool = False
    has_report: bool = False

    def to_json(self) -> dict:
        return {
            "schema": RUN_SCHEMA,
            "run_id": self.run_id,
            "dataset_ref": self.dataset_ref,
            "config": self.config.to_json(),
            "prior": self.prior.to_json(),
            "tau": self.tau,
            "epsilon": self.epsilon,
            "min_sensitivity": self.min_sensitivity,
            "parent_id": self.parent_id,
            "created_at": self.created_at,
            "completed_at": self.completed_at,
            "error": self.error,
            "telemetry": self.telemetry,
            "has_graph": self.has_graph,
            "has_report": self.has_report,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunRecord":
        if obj.get("schema") != RUN_SCHEMA:
            raise DataError(f"unexpected run schema tag: {obj.get('schema')!r}")
        return cls(
            run_id=obj["run_id"],
            dataset_ref=obj["dataset_ref"],
            config=ModelConfig.from_json(obj["config"]),
            prior=PriorKnowledge.from_json(obj["prior"]),
            tau=obj["tau"],
            epsilon=obj["epsilon"],
            min_sensitivity=obj.get("min_sensitivity", 0.01),
            parent_id=obj.get("parent_id"),
            created_at=obj.get("created_at", ""),
            completed_at=obj.get("completed_at"),
            error=obj.get("error"),
            telemetry=obj.get("telemetry", {}),
            has_graph=obj.get("has_graph", False),
            has_report=obj.get("has_report", False),
        )


# ---------------------------------------------------------------------------
# State directory layout
# ---------------------------------------------------------------------------


def runs_root(state_dir) -> Path:
    return Path(state_dir) / "runs"


def run_dir(state_dir, run_id: str) -> Path:
    return runs_root(state_dir) / run_id


def reserve_run_id(state_dir) -> str:
    """Allocate the id the next pipeline run will get; the caller must
    start that run before allocating another (single-writer discipline)."""
    return _next_run_id(state_dir)


def _next_run_id(state_dir) -> str:
    root = runs_root(state_dir)
    existing = []
    if root.is_dir():
        for p in root.iterdir():
            name = p.name
            if name.startswith("run-") and name[4:].isdigit():
                existing.append(int(name[4:]))
    return f"run-{(max(existing) + 1 if existing else 1):04d}"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def save_record(record: RunRecord, state_dir) -> None:
    d = run_dir(state_dir, record.run_id)
    d.mkdir(parents=True, exist_ok=True)
    (d / "record.json").write_text(
        json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n")


def load_record(state_dir, run_id: str) -> RunRecord:
    path = run_dir(state_dir, run_id) / "record.json"
    if not path.is_file():
        raise DataError(f"no run named {run_id!r} in {state_dir}")
    return RunRecord.from_json(json.loads(path.read_text()))


def list_runs(state_dir) -> list[RunRecord]:
    root = runs_root(state_dir)
    if not root.is_dir():
        return []
    out = []
    for p in sorted(root.iterdir()):
        if (p / "record.json").is_file():
            out.append(RunRecord.from_json(json.loads((p / "record.json").read_text())))
    return out


def load_run_graph(state_dir, run_id: str) -> CausalGraph:
    record = load_record(state_dir, run_id)
    if not record.has_graph:
        raise DataError(f"run {run_id!r} has no extracted graph")
    return load_graph(run_dir(state_dir, run_id) / "graph.json")


def load_run_gradients(state_dir, run_id: str) -> list[dict]:
    path = run_dir(state_dir, run_id) / "gradients.json"
    if not path.is_file():
        raise DataError(f"run {run_id!r} has no stored gradients")
    return json.loads(path.read_text())


def load_run_report(state_dir, run_id: str) -> EvalReport:
    record = load_record(state_dir, run_id)
    if not record.has_report:
        raise DataError(f"run {run_id!r} has no evaluation report")
    return load_report(run_dir(state_dir, run_id) / "report.json")


# ---------------------------------------------------------------------------
# Dataset references
# ---------------------------------------------------------------------------


def resolve_dataset(dataset_ref) -> tuple[Dataset, GroundTruth | None]:
    """A dataset reference is a directory in the CSV+JSON layout; ground
    truth rides along when a truth.json is present."""
    directory = Path(dataset_ref)
    if not directory.is_dir():
        raise StageError("dataset", f"dataset directory not found: {dataset_ref}")
    try:
        dataset = load_dataset(directory)
    except (DataError, OSError, ValueError) as exc:
        raise StageError("dataset", f"failed to load dataset: {exc}") from exc
    truth = None
    truth_path = directory / "truth.json"
    if truth_path.is_file():
        try:
            truth = load_truth(truth_path)
        except (DataError, ValueError) as exc:
            raise StageError("dataset", f"failed to load ground truth: {exc}") from exc
    return dataset, truth


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def run_pipeline(dataset_ref, config: ModelConfig, prior: PriorKnowledge,
                 tau: float = 0.15, epsilon: float = 0.05,
                 min_sensitivity: float = DEFAULT_MIN_SENSITIVITY, state_dir=".",
                 parent_id: str | None = None, run_id: str | None = None,
                 progress=None) -> RunRecord:
    """Train, extract, evaluate (when truth exists), persist.

    Deterministic under a fixed config seed: rerunning writes a new run
    directory whose graph JSON is byte-identical. Stage failures are
    persisted on the record (error = {"stage", "message"}) and re-raised
    as StageError.
    """
    if run_id is None:
        run_id = _next_run_id(state_dir)
    record = RunRecord(run_id=run_id, dataset_ref=str(dataset_ref), config=config,
                       prior=prior, tau=tau, epsilon=epsilon,
                       min_sensitivity=min_sensitivity, parent_id=parent_id,
                       created_at=_now())
    d = run_dir(state_dir, run_id)
    try:
        dataset, truth = resolve_dataset(dataset_ref)
        try:
            prior.validate(dataset.specs)
            model = train(dataset, prior, config, progress=progress)
        except StageError:
            raise
        except Exception as exc:
            raise StageError("train", str(exc)) from exc
        record.telemetry = {k: v for k, v in model.telemetry.items()
                            if k != "epoch_losses"}
        try:
            graph, grads, _scores = extract_from_model(
                model, dataset, tau=tau, epsilon=epsilon,
                min_sensitivity=min_sensitivity)
        except Exception as exc:
            raise StageError("extract", str(exc)) from exc
        report = None
        if truth is not None:
            try:
                report = evaluate_runs([(graph, truth)])
            except Exception as exc:
                raise StageError("evaluate", str(exc)) from exc
        try:
            d.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, d / "model.ckpt")
            save_graph(graph, d / "graph.json")
            (d / "gradients.json").write_text(
                json.dumps([gradients_to_json(g) for g in grads],
                           indent=2, sort_keys=True) + "\n")
            if report is not None:
                save_report(report, d / "report.json")
        except OSError as exc:
            raise StageError("persist", str(exc)) from exc
        record.has_graph = True
        record.has_report = report is not None
        record.completed_at = _now()
        save_record(record, state_dir)
        return record
    except StageError as exc:
        record.error = {"stage": exc.stage, "message": str(exc)}
        record.completed_at = _now()
        save_record(record, state_dir)
        raise


def apply_exclusions(parent_id: str, new_exclusions, state_dir=".",
                     run_id: str | None = None, progress=None) -> RunRecord:
    """Retrain from scratch with the parent's exclusions plus new ones.

    The child's exclusion set is always a superset of the parent's. Its
    seed is the parent's plus one, so refinement chains are reproducible
    without reusing the parent's randomness.
    """
    parent = load_record(state_dir, parent_id)
    depth = chain_depth(state_dir, parent_id) + 1
    prior = parent.prior.merged_with(
        new_exclusions, provenance={"source": "user", "iteration": depth})
    config = ModelConfig.from_json(
        {**parent.config.to_json(), "seed": parent.config.seed + 1})
    return run_pipeline(parent.dataset_ref, config, prior, tau=parent.tau,
                        epsilon=parent.epsilon,
                        min_sensitivity=parent.min_sensitivity,
                        state_dir=state_dir, parent_id=parent_id,
                        run_id=run_id, progress=progress)


def chain_depth(state_dir, run_id: str) -> int:
    """Number of refinement steps above this run (0 for a root run)."""
    depth = 0
    seen = {run_id}
    current = load_record(state_dir, run_id)
    while current.parent_id is not None:
        if current.parent_id in seen:
            raise DataError(f"refinement chain through {run_id!r} is cyclic")
        seen.add(current.parent_id)
        current = load_record(state_dir, current.parent_id)
        depth += 1
    return depth


def chain_exclusions(state_dir, run_id: str) -> list[set]:
    """Exclusion sets from the root down to this run, for audits."""
    chain = []
    current = load_record(state_dir, run_id)
    chain.append(current.prior.excluded)
    while current.parent_id is not None:
        current = load_record(state_dir, current.parent_id)
        chain.append(current.prior.excluded)
    return list(reversed(chain))


def verify_run(state_dir, run_id: str) -> bool:
    """Re-extract from the persisted checkpoint and compare byte-for-byte
    with the stored graph."""
    record = load_record(state_dir, run_id)
    if not record.has_graph:
        raise DataError(f"run {run_id!r} has no graph to verify")
    d = run_dir(state_dir, run_id)
    model = load_checkpoint(d / "model.ckpt")
    dataset, _ = resolve_dataset(record.dataset_ref)
    graph, _grads, _scores = extract_from_model(
        model, dataset, tau=record.tau, epsilon=record.epsilon,
        min_sensitivity=record.min_sensitivity)
    return graph_json_bytes(graph) == (d / "graph.json").read_bytes()
