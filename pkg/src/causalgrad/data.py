"""Typed multivariate datasets: variable taxonomy, missing values,
resampling, percentile normalization, sliding windows, and CSV+JSON
persistence.

Missing values are represented as NaN throughout; categorical series are
stored as float arrays whose non-missing entries are integers in 1..C.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("static-numerical", "static-categorical", "ts-numerical", "ts-categorical")

DATASET_SCHEMA = "causalgrad-dataset-v1"


class DataError(ValueError):
    """Invalid dataset, spec, or normalizer input."""


def is_missing(values) -> np.ndarray:
    return np.isnan(np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class VariableSpec:
    """One variable: its name, data type, and source/target roles."""

    name: str
    kind: str
    roles: frozenset = frozenset({"source", "target"})
    category_count: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown kind '{self.kind}' for variable '{self.name}'")
        roles = frozenset(self.roles)
        object.__setattr__(self, "roles", roles)
        if not roles or not roles <= {"source", "target"}:
            raise DataError(f"variable '{self.name}' needs a non-empty subset of "
                            "{'source', 'target'} as roles")
        if self.is_categorical:
            if self.category_count is None or self.category_count < 2:
                raise DataError(f"categorical variable '{self.name}' needs category_count >= 2")
        elif self.category_count is not None:
            raise DataError(f"numerical variable '{self.name}' must not set category_count")

    @property
    def is_categorical(self) -> bool:
        return self.kind.endswith("categorical")

    @property
    def is_static(self) -> bool:
        return self.kind.startswith("static")

    @property
    def is_source(self) -> bool:
        return "source" in self.roles

    @property
    def is_target(self) -> bool:
        return "target" in self.roles

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "roles": sorted(self.roles)}
        if self.category_count is not None:
            out["category_count"] = self.category_count
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "VariableSpec":
        return cls(name=obj["name"], kind=obj["kind"],
                   roles=frozenset(obj["roles"]),
                   category_count=obj.get("category_count"))


class Dataset:
    """A multivariate sample: aligned time series plus static values."""

    def __init__(self, specs: list[VariableSpec], series: dict | None = None,
                 static_values: dict | None = None):
        self.specs = list(specs)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise DataError("duplicate variable names")
        self.by_name = {s.name: s for s in self.specs}
        self.series: dict[str, np.ndarray] = {}
        self.static_values: dict[str, float] = {}
        series = series or {}
        static_values = static_values or {}

        lengths = set()
        for spec in self.specs:
            if spec.is_static:
                if spec.name not in static_values:
                    raise DataError(f"missing static value for '{spec.name}'")
                self.static_values[spec.name] = float(static_values[spec.name])
            else:
                if spec.name not in series:
                    raise DataError(f"missing series for '{spec.name}'")
                arr = np.asarray(series[spec.name], dtype=np.float64).copy()
                if arr.ndim != 1:
                    raise DataError(f"series '{spec.name}' must be 1-D")
                lengths.add(arr.shape[0])
                self.series[spec.name] = arr
        if len(lengths) > 1:
            raise DataError(f"time series lengths differ: {sorted(lengths)}")
        self.length = lengths.pop() if lengths else 1
        self._validate_categories()

    def _validate_categories(self):
        for spec in self.specs:
            if not spec.is_categorical:
                continue
            vals = (np.array([self.static_values[spec.name]])
                    if spec.is_static else self.series[spec.name])
            ok = is_missing(vals)
            present = vals[~ok]
            if present.size and (np.any(present != np.round(present))
                                 or present.min() < 1 or present.max() > spec.category_count):
                raise DataError(
                    f"categorical '{spec.name}' has values outside 1..{spec.category_count}")

    def values(self, name: str) -> np.ndarray:
        """The variable's data as an array: (L,) for time series, (1,) static."""
        spec = self.by_name[name]
        if spec.is_static:
            return np.array([self.static_values[name]])
        return self.series[name]

    @property
    def source_specs(self) -> list[VariableSpec]:
        return [s for s in self.specs if s.is_source]

    @property
    def target_specs(self) -> list[VariableSpec]:
        return [s for s in self.specs if s.is_target]

    def copy_with(self, series: dict | None = None, static_values: dict | None = None):
        return Dataset(self.specs,
                       series={**self.series, **(series or {})},
                       static_values={**self.static_values, **(static_values or {})})


# ---------------------------------------------------------------------------
# Normalization (5th..95th percentile -> [0, 1])
# ---------------------------------------------------------------------------


@dataclass
class Normalizer:
    """Per-variable affine maps sending [p5, p95] to [0, 1].

    Degenerate variables (p5 == p95) map every value to 0.5 and are
    flagged; they stay inert through training and extraction.
    """

    p5: dict[str, float] = field(default_factory=dict)
    p95: dict[str, float] = field(default_factory=dict)

    @property
    def degenerate(self) -> set:
        return {n for n in self.p5 if self.p5[n] == self.p95[n]}

    def covers(self, name: str) -> bool:
        return name in self.p5

    def normalize_values(self, name: str, values) -> np.ndarray:
        if name not in self.p5:
            raise DataError(f"normalizer not fitted for variable '{name}'")
        values = np.asarray(values, dtype=np.float64)
        lo, hi = self.p5[name], self.p95[name]
        if lo == hi:
            return np.where(np.isnan(values), np.nan, 0.5)
        return (values - lo) / (hi - lo)

    def invert_values(self, name: str, values) -> np.ndarray:
        if name not in self.p5:
            raise DataError(f"normalizer not fitted for variable '{name}'")
        values = np.asarray(values, dtype=np.float64)
        lo, hi = self.p5[name], self.p95[name]
        if lo == hi:
            return np.where(np.isnan(values), np.nan, lo)
        return values * (hi - lo) + lo

    def to_json(self) -> dict:
        return {"p5": dict(sorted(self.p5.items())), "p95": dict(sorted(self.p95.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "Normalizer":
        return cls(p5=dict(obj["p5"]), p95=dict(obj["p95"]))


def fit_normalizer(dataset: Dataset) -> Normalizer:
    """Fit p5/p95 per numerical variable over non-missing values.

    Percentiles use linear interpolation between order statistics.
    """
    norm = Normalizer()
    for spec in dataset.specs:
        if spec.is_categorical:
            continue
        vals = dataset.values(spec.name)
        present = vals[~is_missing(vals)]
        if present.size == 0:
            raise DataError(f"variable '{spec.name}' has no non-missing values to fit")
        lo = float(np.percentile(present, 5))
        hi = float(np.percentile(present, 95))
        if lo == hi:
            warnings.warn(f"variable '{spec.name}' has a degenerate value range; "
                          "normalizing to the constant 0.5", RuntimeWarning)
        norm.p5[spec.name] = lo
        norm.p95[spec.name] = hi
    return norm


def apply_normalizer(norm: Normalizer, dataset: Dataset) -> Dataset:
    """Return a normalized copy; categorical variables and NaN pass through."""
    series = {}
    statics = {}
    for spec in dataset.specs:
        if spec.is_categorical:
            continue
        if not norm.covers(spec.name):
            raise DataError(f"normalizer does not cover variable '{spec.name}'")
        if spec.is_static:
            statics[spec.name] = float(norm.normalize_values(
                spec.name, dataset.static_values[spec.name]))
        else:
            series[spec.name] = norm.normalize_values(spec.name, dataset.series[spec.name])
    return dataset.copy_with(series=series, static_values=statics)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

_SNAP = 1e-9


def resample_series(values, kind: str, source_rate: float, target_rate: float) -> np.ndarray:
    """Resample one series to a new sampling rate over the same time span.

    Numerical series interpolate linearly between non-missing neighbors
    (interior gaps are filled); categorical series take the nearest
    non-missing neighbor. Target times outside the first..last non-missing
    samples stay missing. Sample k of a series at rate r sits at time k/r.
    """
    if source_rate <= 0 or target_rate <= 0:
        raise DataError("sampling rates must be positive")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot resample an empty series")
    n = values.shape[0]
    duration = (n - 1) / source_rate
    m = int(np.floor(duration * target_rate + _SNAP)) + 1
    t_target = np.arange(m) / target_rate

    missing = np.isnan(values)
    valid_idx = np.flatnonzero(~missing)
    out = np.full(m, np.nan)
    if valid_idx.size == 0:
        return out
    t_valid = valid_idx / source_rate
    in_span = (t_target >= t_valid[0] - _SNAP) & (t_target <= t_valid[-1] + _SNAP)

    if kind.endswith("categorical"):
        pos = np.searchsorted(t_valid, t_target[in_span])
        pos = np.clip(pos, 1, len(t_valid) - 1) if len(t_valid) > 1 else np.zeros(
            in_span.sum(), dtype=int)
        if len(t_valid) > 1:
            left = t_valid[pos - 1]
            right = t_valid[pos]
            # ties go to the earlier sample
            choose_left = (t_target[in_span] - left) <= (right - t_target[in_span]) + _SNAP
            picked = np.where(choose_left, valid_idx[pos - 1], valid_idx[pos])
        else:
            picked = np.full(int(in_span.sum()), valid_idx[0])
        out[in_span] = values[picked]
    else:
        interp = np.interp(t_target[in_span], t_valid, values[valid_idx])
        # exact copy where a target time lands on a non-missing source sample
        src_pos = t_target[in_span] * source_rate
        nearest = np.round(src_pos).astype(int)
        snapped = np.abs(src_pos - nearest) < _SNAP
        exact = snapped & np.isin(nearest, valid_idx)
        interp[exact] = values[nearest[exact]]
        out[in_span] = interp
    return out


# ---------------------------------------------------------------------------
# Sliding windows
# ---------------------------------------------------------------------------


@dataclass
class WindowedExample:
    """One training example: source windows and the samples to forecast."""

    start: int                      # index of the first input sample
    inputs: dict                    # source name -> (S,) array or scalar
    targets: dict                   # target name -> (S_j,) array or scalar
    input_len: int
    horizon: int

    @property
    def target_start(self) -> int:
        return self.start + self.input_len


def window_count(length: int, s: int, s_j: int, stride: int) -> int:
    if length < s + s_j:
        raise DataError(f"series length {length} is shorter than S + S_j = {s + s_j}")
    return (length - s - s_j) // stride + 1


def make_windows(dataset: Dataset, s: int, s_j: int, stride: int = 1) -> list[WindowedExample]:
    """Cut time-ordered examples of S input samples and S_j forecast samples."""
    if s < 1 or s_j < 1 or stride < 1:
        raise DataError("S, S_j and stride must be positive")
    count = window_count(dataset.length, s, s_j, stride)
    examples = []
    for w in range(count):
        start = w * stride
        inputs = {}
        targets = {}
        for spec in dataset.specs:
            if spec.is_source:
                inputs[spec.name] = (dataset.static_values[spec.name] if spec.is_static
                                     else dataset.series[spec.name][start:start + s].copy())
            if spec.is_target:
                targets[spec.name] = (dataset.static_values[spec.name] if spec.is_static
                                      else dataset.series[spec.name][start + s:start + s + s_j].copy())
        examples.append(WindowedExample(start=start, inputs=inputs, targets=targets,
                                        input_len=s, horizon=s_j))
    return examples


# ---------------------------------------------------------------------------
# CSV + JSON persistence (bit-exact round trip)
# ---------------------------------------------------------------------------


def _format_cell(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def save_dataset(dataset: Dataset, directory) -> None:
    """Write data.csv (one column per variable, empty cell = missing) and
    schema.json. Floats are written in shortest round-trip form so a
    save/load cycle is bit-exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = [s.name for s in dataset.specs]
    rows = dataset.length
    lines = [",".join(names)]
    for r in range(rows):
        cells = []
        for spec in dataset.specs:
            v = dataset.static_values[spec.name] if spec.is_static else dataset.series[spec.name][r]
            cells.append(_format_cell(v))
        lines.append(",".join(cells))
    (directory / "data.csv").write_text("\n".join(lines) + "\n")
    schema = {
        "schema": DATASET_SCHEMA,
        "length": dataset.length,
        "variables": [s.to_json() for s in dataset.specs],
    }
    (directory / "schema.json").write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    schema = json.loads((directory / "schema.json").read_text())
    if schema.get("schema") != DATASET_SCHEMA:
        raise DataError(f"unexpected dataset schema tag: {schema.get('schema')!r}")
    specs = [VariableSpec.from_json(v) for v in schema["variables"]]
    text = (directory / "data.csv").read_text().splitlines()
    header = text[0].split(",")
    if header != [s.name for s in specs]:
        raise DataError("CSV header does not match schema variable order")
    # an empty line is a valid row when every column is missing
    rows = [line.split(",") for line in text[1:]]
    if len(rows) != schema["length"]:
        raise DataError(f"expected {schema['length']} rows, found {len(rows)}")
    cols = {name: np.array([np.nan if cell == "" else float(cell) for cell in col])
            for name, col in zip(header, zip(*rows))}
    series = {}
    statics = {}
    for spec in specs:
        if spec.is_static:
            statics[spec.name] = cols[spec.name][0]
        else:
            series[spec.name] = cols[spec.name]
    return Dataset(specs, series=series, static_values=statics)
