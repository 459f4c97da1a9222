"""Causal graph extraction from any forecaster via finite differences.

The extractor sees the model only as a black box: a callable mapping
normalized window inputs to per-target scalar outputs. Sensitivities are
signed central differences averaged over windows, normalized per target
so the strongest effect scores 1, then thresholded into a directed graph
with per-edge lags read off the argmax time position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, VariableSpec, make_windows
from .model import TrainedForecaster, _stack_inputs

GRAPH_SCHEMA = "causalgrad-graph-v1"
GRADIENTS_SCHEMA = "causalgrad-gradients-v1"

# absolute sensitivity below which a target is treated as causeless;
# guards against blowing an all-but-zero gradient matrix up to full scores
DEFAULT_MIN_SENSITIVITY = 0.01

# forecast-skill ratio (model error over trivial constant-forecast error)
# at or above which a target counts as unforecastable from its sources.
# Gradients of an unforecastable target are fit to noise, and per-target
# normalization would otherwise still promote the largest of them to a
# full-score edge. Driven targets sit far below 1; exogenous noise at 1.
SKILL_CUTOFF = 0.9


@dataclass
class GradientMatrix:
    """Signed sensitivities of one target: rows = window positions 1..S
    (oldest first), columns = source variables."""

    target: str
    matrix: np.ndarray
    source_names: list

    @property
    def input_len(self) -> int:
        return self.matrix.shape[0]


@dataclass
class CausalScores:
    """A gradient matrix normalized so max |entry| is 1 (or flagged
    degenerate and zeroed when no sensitivity clears the floor or the
    target shows no forecast skill)."""

    target: str
    matrix: np.ndarray
    source_names: list
    scale: float
    degenerate: bool
    skill: float | None = None      # model error / trivial error, if measured


@dataclass(frozen=True)
class CausalEdge:
    cause: str
    effect: str
    score: float
    lag: int | None     # None when the cause is static


@dataclass
class CausalGraph:
    nodes: list
    edges: list
    tau: float
    epsilon: float | None = None

    def edge_set(self) -> set:
        return {(e.cause, e.effect) for e in self.edges}

    def lag_of(self, cause: str, effect: str):
        for e in self.edges:
            if e.cause == cause and e.effect == effect:
                return e.lag
        raise KeyError((cause, effect))

    def to_json(self) -> dict:
        return {
            "schema": GRAPH_SCHEMA,
            "nodes": list(self.nodes),
            "edges": [{"from": e.cause, "to": e.effect,
                       "score": e.score, "lag": e.lag} for e in self.edges],
            "tau": self.tau,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CausalGraph":
        if obj.get("schema") != GRAPH_SCHEMA:
            raise DataError(f"unexpected graph schema tag: {obj.get('schema')!r}")
        edges = [CausalEdge(e["from"], e["to"], float(e["score"]), e.get("lag"))
                 for e in obj["edges"]]
        return cls(nodes=list(obj["nodes"]), edges=edges, tau=obj["tau"],
                   epsilon=obj.get("epsilon"))


def graph_json_bytes(graph: CausalGraph) -> bytes:
    """Canonical serialization; identical graphs give identical bytes."""
    return (json.dumps(graph.to_json(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def save_graph(graph: CausalGraph, path) -> None:
    Path(path).write_bytes(graph_json_bytes(graph))


def load_graph(path) -> CausalGraph:
    return CausalGraph.from_json(json.loads(Path(path).read_text()))


def gradients_to_json(grad: GradientMatrix) -> dict:
    """Heatmap layout: rows = time positions (oldest first), columns =
    source variables."""
    return {
        "schema": GRADIENTS_SCHEMA,
        "target": grad.target,
        "sources": list(grad.source_names),
        "matrix": [[float(v) for v in row] for row in grad.matrix],
    }


# ---------------------------------------------------------------------------
# Finite differences (black-box)
# ---------------------------------------------------------------------------


def finite_diff_gradients(predict_fn, specs: list[VariableSpec], inputs: dict,
                          epsilon: float = 0.05) -> list[GradientMatrix]:
    """Central-difference sensitivities for every target.

    predict_fn(inputs) must return, per target, a (B,) array for
    numerical targets or a (B, C) array of class probabilities for
    categorical ones. inputs hold normalized window arrays: (B, S) per
    time-series source, (B,) per static source.

    Entries are the raw difference of outputs at +epsilon and -epsilon
    (no division), averaged over the B windows. Static sources populate
    only position s=1; categorical sources cannot be nudged by epsilon
    and keep zero columns. Perturbations landing on a missing sample
    contribute zero.
    """
    if not 0.0 < epsilon <= 1.0:
        raise DataError(f"epsilon must lie in (0, 1], got {epsilon}")
    sources = [s for s in specs if s.is_source]
    targets = [s for s in specs if s.is_target]
    if not sources or not targets:
        raise DataError("need at least one source and one target variable")
    any_ts = [s for s in sources if not s.is_static]
    if any_ts:
        s_len = np.asarray(inputs[any_ts[0].name]).shape[1]
    else:
        s_len = 1
    batch = np.asarray(inputs[sources[0].name]).shape[0]

    base = predict_fn(inputs)
    chosen = {}
    for t in targets:
        out = np.asarray(base[t.name])
        if t.is_categorical:
            if out.ndim != 2:
                raise DataError(f"categorical target '{t.name}' must predict "
                                "(B, C) class probabilities")
            chosen[t.name] = np.argmax(out, axis=1)

    def scalarize(preds, t):
        out = np.asarray(preds[t.name])
        if t.is_categorical:
            return out[np.arange(out.shape[0]), chosen[t.name]]
        return out

    mats = {t.name: np.zeros((s_len, len(sources))) for t in targets}
    for col, src in enumerate(sources):
        if src.is_categorical:
            continue
        arr = np.asarray(inputs[src.name], dtype=np.float64)
        positions = range(s_len) if not src.is_static else (0,)
        for pos in positions:
            plus = arr.copy()
            minus = arr.copy()
            if src.is_static:
                plus += epsilon
                minus -= epsilon
                missing = np.isnan(arr)
            else:
                plus[:, pos] += epsilon
                minus[:, pos] -= epsilon
                missing = np.isnan(arr[:, pos])
            p_out = predict_fn({**inputs, src.name: plus})
            m_out = predict_fn({**inputs, src.name: minus})
            for t in targets:
                diff = scalarize(p_out, t) - scalarize(m_out, t)
                diff = np.where(missing, 0.0, diff)
                mats[t.name][pos, col] = float(diff.sum() / batch)

    return [GradientMatrix(target=t.name, matrix=mats[t.name],
                           source_names=[s.name for s in sources])
            for t in targets]


def normalize_scores(grad: GradientMatrix,
                     min_sensitivity: float = 0.0) -> CausalScores:
    """Scale a gradient matrix so its largest magnitude is exactly 1.

    A matrix whose largest magnitude does not exceed min_sensitivity is
    degenerate: scores are all zero and no edge can come out of it.
    """
    if grad.matrix.size == 0:
        raise DataError("empty gradient matrix")
    scale = float(np.abs(grad.matrix).max())
    if scale <= min_sensitivity:
        return CausalScores(target=grad.target,
                            matrix=np.zeros_like(grad.matrix),
                            source_names=list(grad.source_names),
                            scale=scale, degenerate=True)
    return CausalScores(target=grad.target, matrix=grad.matrix / scale,
                        source_names=list(grad.source_names),
                        scale=scale, degenerate=False)


def build_graph(scores: list[CausalScores], specs: list[VariableSpec],
                tau: float, epsilon: float | None = None) -> CausalGraph:
    """Threshold normalized scores into a directed graph with lags.

    Edge cause -> effect exists iff the cause's column has some position
    with |score| >= tau and > 0. The lag is S - s* + 1 with s* the argmax
    position (1-indexed, ties resolved toward the most recent sample);
    static causes carry no lag.
    """
    if not 0.0 <= tau <= 1.0:
        raise DataError(f"tau must lie in [0, 1], got {tau}")
    by_name = {s.name: s for s in specs}
    edges = []
    for sc in scores:
        s_len = sc.matrix.shape[0]
        for col, cause in enumerate(sc.source_names):
            column = np.abs(sc.matrix[:, col])
            peak = float(column.max())
            if peak < tau or peak <= 0.0 or sc.degenerate:
                continue
            if by_name[cause].is_static:
                lag = None
            else:
                # ties go to the most recent position (smallest lag)
                s_star = s_len - 1 - int(np.argmax(column[::-1]))
                lag = s_len - (s_star + 1) + 1
            edges.append(CausalEdge(cause=cause, effect=sc.target,
                                    score=peak, lag=lag))
    nodes = [s.name for s in specs]
    return CausalGraph(nodes=nodes, edges=edges, tau=tau, epsilon=epsilon)


# ---------------------------------------------------------------------------
# End-to-end extraction from a trained forecaster
# ---------------------------------------------------------------------------


def prediction_skill(model: TrainedForecaster, dataset,
                     stride: int = 1) -> dict:
    """Per-target forecast skill of a trained model, on normalized data.

    Skill is the ratio of the model's one-step error to the error of the
    best trivial forecast that ignores all inputs: mean absolute error
    against the mean for numerical targets, cross entropy against the
    class frequencies for categorical ones. A driven target scores well
    below 1; a target none of the sources can forecast sits near 1 (or
    above). Windows are taken at stride 1 so memorized training windows
    cannot hide a lack of generalization.

    Returns {target name: skill ratio}; a constant target maps to inf.
    """
    from .data import apply_normalizer
    from .model import _stack_targets

    ndataset = apply_normalizer(model.normalizer, dataset)
    examples = make_windows(ndataset, model.config.input_len,
                            model.config.horizon, stride=stride)
    inputs = _stack_inputs(examples, model.specs)
    targets = _stack_targets(examples, model.specs)
    preds = model.predict_normalized(inputs)

    skills = {}
    by_name = {s.name: s for s in model.specs}
    for name, actual in targets.items():
        y = actual[:, 0]
        ok = np.isfinite(y)
        if not ok.any():
            skills[name] = float("inf")
            continue
        y = y[ok]
        if by_name[name].is_categorical:
            p = preds[name][:, 0, :][ok]
            labels = y.astype(int) - 1          # classes are 1..C
            picked = p[np.arange(len(labels)), labels]
            err = float(-np.mean(np.log(np.clip(picked, 1e-12, None))))
            freq = np.bincount(labels, minlength=p.shape[1]) / len(labels)
            nz = freq[freq > 0]
            trivial = float(-np.sum(nz * np.log(nz)))
        else:
            yhat = preds[name][:, 0][ok]
            err = float(np.mean(np.abs(yhat - y)))
            trivial = float(np.mean(np.abs(y - y.mean())))
        skills[name] = err / trivial if trivial > 0 else float("inf")
    return skills


def extract_from_model(model: TrainedForecaster, dataset, tau: float = 0.15,
                       epsilon: float = 0.05,
                       min_sensitivity: float = DEFAULT_MIN_SENSITIVITY,
                       skill_cutoff: float = SKILL_CUTOFF):
    """Gradients over the model's training windows, then graph building.

    Returns (CausalGraph, list of GradientMatrix, list of CausalScores).
    The window set replays the training configuration (same stride), and
    inputs are normalized with the model's own normalizer. Targets whose
    forecast skill is at or above skill_cutoff are zeroed out as
    degenerate before thresholding: their gradients exist numerically
    but carry no causal information worth normalizing into edges.
    """
    from .data import apply_normalizer

    ndataset = apply_normalizer(model.normalizer, dataset)
    examples = make_windows(ndataset, model.config.input_len, model.config.horizon,
                            stride=model.config.train_stride)
    inputs = _stack_inputs(examples, model.specs)
    grads = finite_diff_gradients(model.as_predict_fn(), model.specs, inputs,
                                  epsilon=epsilon)
    skills = prediction_skill(model, dataset)
    scores = []
    for g in grads:
        sc = normalize_scores(g, min_sensitivity=min_sensitivity)
        sc.skill = skills.get(sc.target)
        if sc.skill is not None and sc.skill >= skill_cutoff and not sc.degenerate:
            sc.degenerate = True
            sc.matrix = np.zeros_like(sc.matrix)
        scores.append(sc)
    graph = build_graph(scores, model.specs, tau, epsilon=epsilon)
    return graph, grads, scores
