"""Synthetic benchmark systems with known causal structure.

Four three-to-four-node motifs driven by lagged random functions, the
cyclic Lorenz-96 chaotic system, and a loader for exported fMRI-style
network simulations. Every generator is a pure function of its config,
so a seed pins the output bit-exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, VariableSpec, load_dataset, save_dataset

TRUTH_SCHEMA = "causalgrad-truth-v1"

MOTIF_EDGES = {
    "fork": ((1, 2), (1, 3)),
    "v-structure": ((1, 3), (2, 3)),
    "mediator": ((1, 2), (2, 3), (1, 3)),
    "diamond": ((1, 2), (1, 3), (2, 4), (3, 4)),
}

EDGE_FUNCTIONS = {
    "linear": lambda x: x,
    "tanh": np.tanh,
    # offset quadratic: a pure even function has zero mean slope on
    # centered inputs, which no gradient-based detector could see
    "quadratic": lambda x: 0.5 * (x + 1.0) ** 2,
}


@dataclass(frozen=True)
class GroundTruth:
    """The true causal graph: directed edges plus per-edge time lags.

    Lags are present exactly for edges whose cause is a time series.
    """

    edges: frozenset
    lags: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset((str(c), str(e)) for c, e in self.edges))
        object.__setattr__(self, "lags", {(str(c), str(e)): int(v)
                                          for (c, e), v in self.lags.items()})
        for edge, lag in self.lags.items():
            if edge not in self.edges:
                raise DataError(f"lag given for unknown edge {edge}")
            if lag < 1:
                raise DataError(f"lag for edge {edge} must be positive")

    def to_json(self) -> dict:
        out = []
        for cause, effect in sorted(self.edges):
            entry = {"cause": cause, "effect": effect}
            if (cause, effect) in self.lags:
                entry["lag"] = self.lags[(cause, effect)]
            out.append(entry)
        return {"schema": TRUTH_SCHEMA, "edges": out}

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        if obj.get("schema") != TRUTH_SCHEMA:
            raise DataError(f"unexpected truth schema tag: {obj.get('schema')!r}")
        edges = set()
        lags = {}
        for e in obj["edges"]:
            pair = (e["cause"], e["effect"])
            edges.add(pair)
            if "lag" in e:
                lags[pair] = e["lag"]
        return cls(edges=frozenset(edges), lags=lags)


def save_truth(truth: GroundTruth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_json(), indent=2, sort_keys=True) + "\n")


def load_truth(path) -> GroundTruth:
    return GroundTruth.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Motifs
# ---------------------------------------------------------------------------


@dataclass
class MotifConfig:
    """One seeded draw of a motif system.

    Each edge gets a random function, a random coefficient magnitude in
    coef_range (sign random unless random_sign is off), and a random lag
    in lag_range. Root variables are unit white noise; children add
    Gaussian noise of noise_std.
    """

    kind: str
    seed: int = 0
    length: int = 1000
    noise_std: float = 0.1
    lag_range: tuple = (1, 4)
    coef_range: tuple = (0.5, 1.5)
    functions: tuple = ("linear", "tanh", "quadratic")
    random_sign: bool = True

    def __post_init__(self):
        if self.kind not in MOTIF_EDGES:
            raise DataError(f"unknown motif kind '{self.kind}'; "
                            f"expected one of {sorted(MOTIF_EDGES)}")
        if self.lag_range[0] < 1 or self.lag_range[1] < self.lag_range[0]:
            raise DataError("lag_range must be (lo, hi) with 1 <= lo <= hi")
        if self.length < 2 * self.lag_range[1]:
            raise DataError("length must be at least twice the maximum lag")
        unknown = set(self.functions) - set(EDGE_FUNCTIONS)
        if unknown:
            raise DataError(f"unknown edge functions: {sorted(unknown)}")

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "seed": self.seed, "length": self.length,
            "noise_std": self.noise_std, "lag_range": list(self.lag_range),
            "coef_range": list(self.coef_range), "functions": list(self.functions),
            "random_sign": self.random_sign,
        }


def _var_name(i: int) -> str:
    return f"X{i}"


def gen_motif(config: MotifConfig, return_details: bool = False):
    """Generate one motif draw: (Dataset, GroundTruth).

    With return_details=True, also returns the sampled per-edge
    realization (function, coefficient, lag) for the dataset manifest.
    """
    rng = np.random.default_rng(config.seed)
    edges = MOTIF_EDGES[config.kind]
    n = max(max(e) for e in edges)
    lo, hi = config.lag_range

    sampled = []
    for cause, effect in edges:
        fname = config.functions[rng.integers(0, len(config.functions))]
        coef = float(rng.uniform(*config.coef_range))
        if config.random_sign and rng.random() < 0.5:
            coef = -coef
        lag = int(rng.integers(lo, hi + 1))
        sampled.append({"cause": _var_name(cause), "effect": _var_name(effect),
                        "function": fname, "coefficient": coef, "lag": lag})

    parents = {j: [e for e in sampled if e["effect"] == _var_name(j)] for j in range(1, n + 1)}
    series = {}
    for j in range(1, n + 1):
        name = _var_name(j)
        if not parents[j]:
            series[name] = rng.standard_normal(config.length)
            continue
        child = (config.noise_std * rng.standard_normal(config.length)
                 if config.noise_std > 0 else np.zeros(config.length))
        for e in parents[j]:
            lag = e["lag"]
            f = EDGE_FUNCTIONS[e["function"]]
            contrib = e["coefficient"] * f(series[e["cause"]][:config.length - lag])
            child[lag:] += contrib
        series[name] = child

    specs = [VariableSpec(_var_name(j), "ts-numerical") for j in range(1, n + 1)]
    dataset = Dataset(specs, series=series)
    truth = GroundTruth(
        edges=frozenset((e["cause"], e["effect"]) for e in sampled),
        lags={(e["cause"], e["effect"]): e["lag"] for e in sampled},
    )
    if return_details:
        return dataset, truth, sampled
    return dataset, truth


# ---------------------------------------------------------------------------
# Lorenz-96
# ---------------------------------------------------------------------------


@dataclass
class Lorenz96Config:
    """Cyclic advective system dX_i/dt = (X_{i+1} - X_{i-2}) X_{i-1} - X_i + F.

    forcing=None draws F uniformly from [30, 40]. The integrator is
    fourth-order Runge-Kutta at step dt, subsampled so one emitted sample
    spans `subsample` integration steps, after a discarded warm-up.
    """

    n_vars: int = 10
    forcing: float | None = None
    dt: float = 0.0175
    steps: int = 1000
    seed: int = 0
    perturbation: float = 0.01
    subsample: int = 5
    warmup: int = 1000

    def to_json(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "forcing": self.forcing,
            "dt": self.dt,
            "steps": self.steps,
            "seed": self.seed,
            "perturbation": self.perturbation,
            "subsample": self.subsample,
            "warmup": self.warmup,
        }

    def __post_init__(self):
        if self.n_vars < 4:
            raise DataError("Lorenz-96 needs at least 4 variables so the "
                            "cyclic neighbor indices stay distinct")
        if self.dt <= 0 or self.steps < 1 or self.subsample < 1 or self.warmup < 0:
            raise DataError("dt, steps and subsample must be positive")


def lorenz96_deriv(x: np.ndarray, forcing: float) -> np.ndarray:
    """Right-hand side of the cyclic Lorenz-96 system."""
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def simulate_lorenz96(config: Lorenz96Config):
    """Integrate the system: (Dataset, GroundTruth).

    Aborts with a diagnostic if the trajectory exceeds |X| = 1e6 (the
    chosen dt cannot hold the chaotic regime stable).
    """
    rng = np.random.default_rng(config.seed)
    forcing = (float(config.forcing) if config.forcing is not None
               else float(rng.uniform(30.0, 40.0)))
    n = config.n_vars
    x = np.full(n, forcing, dtype=np.float64)
    x += config.perturbation * rng.standard_normal(n)

    def rk4_step(state):
        k1 = lorenz96_deriv(state, forcing)
        k2 = lorenz96_deriv(state + 0.5 * config.dt * k1, forcing)
        k3 = lorenz96_deriv(state + 0.5 * config.dt * k2, forcing)
        k4 = lorenz96_deriv(state + config.dt * k3, forcing)
        return state + (config.dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def check_bounded(state, where):
        if not np.all(np.isfinite(state)) or np.abs(state).max() > 1e6:
            raise FloatingPointError(
                f"Lorenz-96 blow-up at {where}: max |X| = {np.abs(state).max():.3g} "
                f"(F={forcing:.3g}, dt={config.dt}); reduce dt")

    with np.errstate(all="ignore"):
        for _ in range(config.warmup):
            x = rk4_step(x)
        check_bounded(x, "warm-up")
        out = np.empty((config.steps, n))
        for t in range(config.steps):
            for _ in range(config.subsample):
                x = rk4_step(x)
            check_bounded(x, f"emitted step {t}")
            out[t] = x

    names = [_var_name(i + 1) for i in range(n)]
    specs = [VariableSpec(nm, "ts-numerical") for nm in names]
    dataset = Dataset(specs, series={nm: out[:, i] for i, nm in enumerate(names)})

    edges = set()
    lags = {}
    for i in range(n):
        for j in (i - 2, i - 1, i + 1, i):
            pair = (names[j % n], names[i])
            edges.add(pair)
            lags[pair] = 1
    return dataset, GroundTruth(edges=frozenset(edges), lags=lags)


# ---------------------------------------------------------------------------
# NetSim-style exports
# ---------------------------------------------------------------------------

_EXPECTED_NODE_COUNTS = (5, 10, 15, 50)


def load_netsim(path) -> list:
    """Load a converted network-simulation export.

    Layout: `network.json` holding {"nodes": n, "edges": [[i, j], ...]}
    (i causes j, 0-indexed) next to `subject_<k>.csv` files of raw
    comma-separated samples, one column per node, no header. Returns one
    (Dataset, GroundTruth) per subject; edge lags default to one sample.
    """
    path = Path(path)
    net_file = path / "network.json"
    if not net_file.exists():
        raise DataError(f"no network.json under {path}")
    net = json.loads(net_file.read_text())
    try:
        n = int(net["nodes"])
        raw_edges = [(int(i), int(j)) for i, j in net["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed network.json: {exc}") from exc
    if any(not (0 <= i < n and 0 <= j < n) for i, j in raw_edges):
        raise DataError("edge endpoint outside node range")
    if n not in _EXPECTED_NODE_COUNTS:
        warnings.warn(f"unusual node count {n}; expected one of "
                      f"{_EXPECTED_NODE_COUNTS}", RuntimeWarning)

    names = [f"N{i + 1}" for i in range(n)]
    truth = GroundTruth(
        edges=frozenset((names[i], names[j]) for i, j in raw_edges),
        lags={(names[i], names[j]): 1 for i, j in raw_edges},
    )
    subjects = sorted(path.glob("subject_*.csv"),
                      key=lambda p: int(p.stem.split("_")[1]))
    if not subjects:
        raise DataError(f"no subject_<k>.csv files under {path}")
    out = []
    for sub in subjects:
        mat = np.loadtxt(sub, delimiter=",", ndmin=2)
        if mat.shape[1] != n:
            raise DataError(f"{sub.name} has {mat.shape[1]} columns, "
                            f"network.json declares {n} nodes")
        specs = [VariableSpec(nm, "ts-numerical") for nm in names]
        ds = Dataset(specs, series={nm: mat[:, i] for i, nm in enumerate(names)})
        out.append((ds, truth))
    return out


# ---------------------------------------------------------------------------
# On-disk layout for generated datasets
# ---------------------------------------------------------------------------


def save_generated(dataset: Dataset, truth: GroundTruth, directory,
                   manifest: dict | None = None) -> None:
    """Write data.csv + schema.json + truth.json (+ manifest.json)."""
    directory = Path(directory)
    save_dataset(dataset, directory)
    save_truth(truth, directory / "truth.json")
    if manifest is not None:
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_generated(directory):
    """Read back a generated dataset directory: (Dataset, GroundTruth)."""
    directory = Path(directory)
    return load_dataset(directory), load_truth(directory / "truth.json")
