"""HTTP service for browsing runs and driving the refinement loop.

Reads are plain filesystem lookups of immutable records and never block.
Training jobs (new pipelines, exclusion retrains) run on a single worker
thread, one at a time; submitting while a job is pending is refused with
409 and the queue position. Every payload carries a `schema` tag.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .data import DataError
from .model import ModelConfig, PriorKnowledge
from .pipeline import (
    StageError,
    apply_exclusions,
    list_runs,
    load_record,
    load_run_gradients,
    reserve_run_id,
    run_dir,
    run_pipeline,
)

JOB_SCHEMA = "causalgrad-job-v1"
RUNS_SCHEMA = "causalgrad-runs-v1"
ERROR_SCHEMA = "causalgrad-error-v1"

# visible queue depth: one job total; submissions while it runs get 409
MAX_WAITING = 0


class JobQueue:
    """Serializes training jobs on one daemon worker thread."""

    def __init__(self):
        self._lock = threading.Lock()
        self._jobs = {}          # job_id -> dict
        self._pending = []       # job ids waiting or running, FIFO
        self._counter = 0
        self._wake = threading.Condition(self._lock)
        self._worker = threading.Thread(target=self._loop, daemon=True)
        self._worker.start()

    def submit(self, kind: str, run_id: str, fn):
        """Queue fn() -> RunRecord; returns the job dict or raises
        HTTPException(409) with the queue position when full."""
        with self._lock:
            if len(self._pending) > MAX_WAITING:
                raise HTTPException(status_code=409, detail={
                    "message": "a training job is already queued",
                    "queue_position": len(self._pending),
                })
            self._counter += 1
            job_id = f"job-{self._counter:04d}"
            job = {"schema": JOB_SCHEMA, "job_id": job_id, "kind": kind,
                   "status": "queued", "run_id": run_id, "error": None,
                   "queue_position": len(self._pending)}
            self._jobs[job_id] = job
            self._pending.append((job_id, fn))
            self._wake.notify()
            return dict(job)

    def status(self, job_id: str):
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                return None
            job = dict(job)
            job["queue_position"] = self._position(job_id)
            return job

    def _position(self, job_id):
        for i, (jid, _) in enumerate(self._pending):
            if jid == job_id:
                return i
        return 0

    def _loop(self):
        while True:
            with self._lock:
                while not self._pending:
                    self._wake.wait()
                job_id, fn = self._pending[0]
                self._jobs[job_id]["status"] = "running"
            try:
                record = fn()
                with self._lock:
                    self._jobs[job_id]["status"] = "done"
                    self._jobs[job_id]["run_id"] = record.run_id
            except StageError as exc:
                with self._lock:
                    self._jobs[job_id]["status"] = "failed"
                    self._jobs[job_id]["error"] = {"stage": exc.stage,
                                                   "message": str(exc)}
            except Exception as exc:
                with self._lock:
                    self._jobs[job_id]["status"] = "failed"
                    self._jobs[job_id]["error"] = {"stage": "internal",
                                                   "message": str(exc)}
            finally:
                with self._lock:
                    self._pending.pop(0)


def _error(status: int, message: str, **extra):
    return HTTPException(status_code=status,
                         detail={"message": message, **extra})


def check_state_dir(state_dir) -> None:
    """Refuse to serve a corrupt state directory, with a diagnostic."""
    try:
        list_runs(state_dir)
    except (DataError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"state directory {state_dir!r} is corrupt: {exc}") from exc


def create_app(state_dir) -> FastAPI:
    state_dir = Path(state_dir)
    check_state_dir(state_dir)
    app = FastAPI(title="causalgrad", docs_url=None, redoc_url=None)
    queue = JobQueue()
    app.state.queue = queue
    app.state.state_dir = state_dir

    # run directories appear on disk only when a run finishes, so ids for
    # queued-but-unfinished runs must be remembered here to stay unique
    id_lock = threading.Lock()
    last_reserved = [0]

    def next_run_id() -> str:
        with id_lock:
            disk = int(reserve_run_id(state_dir)[4:])
            num = max(disk, last_reserved[0] + 1)
            last_reserved[0] = num
            return f"run-{num:04d}"

    @app.exception_handler(HTTPException)
    async def _schema_errors(request, exc):
        detail = exc.detail if isinstance(exc.detail, dict) else {"message": exc.detail}
        return JSONResponse(status_code=exc.status_code,
                            content={"schema": ERROR_SCHEMA, **detail})

    def record_or_404(run_id: str):
        try:
            return load_record(state_dir, run_id)
        except DataError as exc:
            raise _error(404, str(exc))

    @app.get("/runs")
    def get_runs():
        return {"schema": RUNS_SCHEMA,
                "runs": [r.to_json() for r in list_runs(state_dir)]}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        return record_or_404(run_id).to_json()

    @app.get("/runs/{run_id}/graph")
    def get_graph(run_id: str):
        record = record_or_404(run_id)
        if not record.has_graph:
            raise _error(404, f"run {run_id!r} has no extracted graph")
        return json.loads((run_dir(state_dir, run_id) / "graph.json").read_text())

    @app.get("/runs/{run_id}/gradients/{target}")
    def get_gradients(run_id: str, target: str):
        record_or_404(run_id)
        try:
            mats = load_run_gradients(state_dir, run_id)
        except DataError as exc:
            raise _error(404, str(exc))
        for mat in mats:
            if mat["target"] == target:
                return mat
        raise _error(404, f"run {run_id!r} has no target named {target!r}")

    @app.post("/runs", status_code=202)
    def post_run(body: dict):
        dataset = body.get("dataset")
        if not dataset or not Path(dataset).is_dir():
            raise _error(400, f"dataset directory not found: {dataset!r}")
        try:
            config = ModelConfig.from_json(body.get("config", {}))
            prior = PriorKnowledge(
                excluded={tuple(p) for p in body.get("exclusions", [])})
            tau = float(body.get("tau", 0.15))
            epsilon = float(body.get("epsilon", 0.05))
        except (TypeError, ValueError, DataError) as exc:
            raise _error(400, f"bad pipeline request: {exc}")
        run_id = next_run_id()
        return queue.submit(
            "pipeline", run_id,
            lambda: run_pipeline(dataset, config, prior, tau=tau, epsilon=epsilon,
                                 state_dir=state_dir, run_id=run_id))

    @app.post("/runs/{run_id}/exclusions", status_code=202)
    def post_exclusions(run_id: str, body: dict):
        parent = record_or_404(run_id)
        pairs = body.get("exclusions")
        if not isinstance(pairs, list) or not pairs:
            raise _error(400, "body must carry a non-empty 'exclusions' list")
        try:
            new = {(str(c), str(e)) for c, e in pairs}
        except (TypeError, ValueError) as exc:
            raise _error(400, f"bad exclusions payload: {exc}")
        nodes = _run_nodes(parent)
        if nodes is not None:
            unknown = {p for p in new if p[0] not in nodes or p[1] not in nodes}
            if unknown:
                raise _error(400, f"exclusions name unknown variables: "
                                  f"{sorted(unknown)}")
        child_id = next_run_id()
        return queue.submit(
            "exclusions", child_id,
            lambda: apply_exclusions(run_id, new, state_dir=state_dir,
                                     run_id=child_id))

    def _run_nodes(record):
        if not record.has_graph:
            return None
        graph = json.loads(
            (run_dir(state_dir, record.run_id) / "graph.json").read_text())
        return set(graph["nodes"])

    @app.get("/jobs/{job_id}/status")
    def job_status(job_id: str):
        job = queue.status(job_id)
        if job is None:
            raise _error(404, f"no job named {job_id!r}")
        return job

    return app


def serve_api(state_dir, host: str = "127.0.0.1", port: int = 8765) -> None:
    """Blocking entry point; builds the app and serves it with uvicorn."""
    import uvicorn

    app = create_app(state_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
