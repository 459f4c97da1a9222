"""Causality-aware Transformer forecaster.

Per-type token encoding, attention-mask construction with per-level
replication, stacked windowed Transformer levels, per-type decoding,
the L1 + cross-entropy loss, seeded training, and checkpoint IO.

The attention masks are the causal mechanism: target rows may attend
only to source columns not excluded by prior knowledge, source rows
attend only within their own variable, and target columns are never
attended. Together these make an excluded cause unreachable from its
target at any network depth.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .data import DataError, Dataset, Normalizer, VariableSpec, apply_normalizer, fit_normalizer, make_windows
from .optim import Adam

CHECKPOINT_MAGIC = b"CGFC0001\n"
CHECKPOINT_SCHEMA = "causalgrad-checkpoint-v1"

# batch_size values at or above the window count degenerate to full-batch
# training; the default keeps several optimizer steps per epoch even on
# short series, which the lagged-coupling benchmarks need to converge


class ConfigError(ValueError):
    """Invalid model configuration."""


@dataclass
class ModelConfig:
    """Architecture and training hyperparameters.

    `level_count=None` picks the smallest level count that reduces every
    time-series variable to a single token. `source_attention` must stay
    "own"; the "all" policy lets source variables attend each other and
    exists only to demonstrate how that breaks exclusion guarantees at
    depth >= 2.
    """

    input_len: int = 8          # S, samples per source window
    horizon: int = 1            # S_j, samples to forecast
    patch_len: int = 8          # P
    patch_stride: int = 8
    embed_dim: int = 128        # D
    inter_dim: int = 16         # D', per-sample categorical embedding
    layers_per_level: int = 4   # K
    head_count: int = 8
    conv_window: int = 4        # W_conv, tokens per sliding window
    conv_stride: int = 2        # S_conv
    level_count: int | None = None
    learning_rate: float = 1e-3
    epochs: int = 500
    seed: int = 0
    train_stride: int = 4       # window stride when building the training set
    batch_size: int = 64        # windows per optimizer step
    source_attention: str = "own"

    def __post_init__(self):
        if self.embed_dim % self.head_count != 0:
            raise ConfigError("embed_dim must be divisible by head_count")
        if self.patch_len > self.input_len:
            raise ConfigError("patch_len cannot exceed input_len")
        if min(self.patch_len, self.patch_stride, self.conv_window,
               self.conv_stride, self.horizon, self.train_stride,
               self.batch_size) < 1:
            raise ConfigError("size and stride fields must be positive")
        if self.source_attention not in ("own", "all"):
            raise ConfigError("source_attention must be 'own' or 'all'")
        if self.level_count is not None and self.level_count < 1:
            raise ConfigError("level_count must be positive when given")

    @property
    def tokens_per_series(self) -> int:
        return (self.input_len - self.patch_len) // self.patch_stride + 1

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


# ---------------------------------------------------------------------------
# Token schedule (levels and sliding windows over the token axis)
# ---------------------------------------------------------------------------


def level_token_count(t_prev: int, conv_window: int, conv_stride: int) -> int:
    """Number of sliding windows over t_prev tokens; each becomes one token."""
    if t_prev <= conv_window:
        return 1
    return math.ceil((t_prev - conv_window) / conv_stride) + 1


def token_schedule(t_initial: int, conv_window: int, conv_stride: int,
                   level_count: int | None = None) -> list[int]:
    """Per-level token counts [T^1, ..., T^L].

    With level_count=None, stops at the first level yielding one token;
    raises if the count ever fails to shrink (the window geometry would
    loop forever).
    """
    t = max(1, t_initial)
    counts = []
    if level_count is not None:
        for _ in range(level_count):
            t = level_token_count(t, conv_window, conv_stride)
            counts.append(t)
        return counts
    while True:
        nxt = level_token_count(t, conv_window, conv_stride)
        if t > 1 and nxt >= t:
            raise ConfigError(
                f"token count stuck at {t} for conv_window={conv_window}, "
                f"conv_stride={conv_stride}; enlarge the window")
        counts.append(nxt)
        t = nxt
        if t == 1:
            return counts


def level_windows(t_prev: int, conv_window: int, conv_stride: int) -> list[tuple[int, int]]:
    """(start, width) of each sliding window over t_prev tokens."""
    width = min(conv_window, max(t_prev, 1))
    n = level_token_count(t_prev, conv_window, conv_stride)
    return [(min(k * conv_stride, max(t_prev, 1) - width), width) for k in range(n)]


# ---------------------------------------------------------------------------
# Prior knowledge (excluded causal links)
# ---------------------------------------------------------------------------


@dataclass
class PriorKnowledge:
    """User-asserted non-causes: excluded (cause, effect) pairs.

    Provenance records who added each pair and at which refinement
    iteration.
    """

    excluded: set = field(default_factory=set)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.excluded = {(str(c), str(e)) for c, e in self.excluded}

    def validate(self, specs: list[VariableSpec]) -> None:
        sources = {s.name for s in specs if s.is_source}
        targets = {s.name for s in specs if s.is_target}
        for cause, effect in self.excluded:
            if cause not in sources or effect not in targets:
                raise DataError(f"exclusion ({cause} -> {effect}) does not name "
                                "a known source/target pair")

    def merged_with(self, new_pairs, provenance: dict | None = None) -> "PriorKnowledge":
        pairs = {(str(c), str(e)) for c, e in new_pairs}
        prov = dict(self.provenance)
        for p in pairs:
            prov[p] = dict(provenance or {})
        return PriorKnowledge(excluded=self.excluded | pairs, provenance=prov)

    def to_json(self) -> dict:
        return {
            "excluded": [list(p) for p in sorted(self.excluded)],
            "provenance": {f"{c}->{e}": v for (c, e), v in sorted(self.provenance.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PriorKnowledge":
        pairs = {tuple(p) for p in obj.get("excluded", [])}
        prov = {}
        for key, v in obj.get("provenance", {}).items():
            cause, effect = key.split("->", 1)
            prov[(cause, effect)] = v
        return cls(excluded=pairs, provenance=prov)


# ---------------------------------------------------------------------------
# Attention masks
# ---------------------------------------------------------------------------


@dataclass
class AttentionMaskSet:
    """Variable-level base mask plus its per-level token expansions.

    Base layout: rows/columns are targets then sources; entry 1 means the
    row token may attend the column token.
    """

    target_names: list
    source_names: list
    base: np.ndarray
    level_masks: list            # one (Tw, Tw) binary matrix per level
    level_layouts: list          # per level: list of (name, section, start, width)
    schedule: list               # per-level time-series token counts

    def base_entry(self, effect: str, cause: str) -> float:
        r = self.target_names.index(effect)
        c = len(self.target_names) + self.source_names.index(cause)
        return float(self.base[r, c])


def build_masks(specs: list[VariableSpec], prior: PriorKnowledge,
                config: ModelConfig) -> AttentionMaskSet:
    """Base attention mask and its per-level expansions.

    Default pattern: target rows attend all source columns except
    excluded causes; source rows attend only their own variable's
    columns; nothing attends target columns. The "all" source policy
    (cross-variable source attention) is available only as a negative
    control.
    """
    prior.validate(specs)
    targets = [s for s in specs if s.is_target]
    sources = [s for s in specs if s.is_source]
    tgt_names = [s.name for s in targets]
    src_names = [s.name for s in sources]
    m, n = len(tgt_names), len(src_names)
    if m == 0 or n == 0:
        raise DataError("need at least one source and one target variable")

    base = np.zeros((m + n, m + n))
    for r, tname in enumerate(tgt_names):
        for c, sname in enumerate(src_names):
            if (sname, tname) not in prior.excluded:
                base[r, m + c] = 1.0
    for r in range(n):
        if config.source_attention == "all":
            base[m + r, m:] = 1.0
        else:
            base[m + r, m + r] = 1.0

    t1 = config.tokens_per_series if any(not s.is_static for s in sources) else 0
    schedule = token_schedule(t1 if t1 else 1, config.conv_window,
                              config.conv_stride, config.level_count)

    src_index = {s.name: i for i, s in enumerate(sources)}
    level_masks = []
    level_layouts = []
    t_prev = t1
    for t_next in schedule:
        width = min(config.conv_window, max(t_prev, 1))
        # token order within a window: targets, static sources, ts sources
        layout = []
        pos = 0
        for s in targets:
            layout.append((s.name, "target", pos, 1))
            pos += 1
        for s in sources:
            if s.is_static:
                layout.append((s.name, "static", pos, 1))
                pos += 1
        for s in sources:
            if not s.is_static:
                layout.append((s.name, "ts", pos, width))
                pos += width
        tw = pos
        expanded = np.zeros((tw, tw))

        def base_idx(entry):
            name, section = entry[0], entry[1]
            return tgt_names.index(name) if section == "target" else m + src_index[name]

        # each (row var, col var) block copies the base entry
        for ei in layout:
            for ej in layout:
                expanded[ei[2]:ei[2] + ei[3], ej[2]:ej[2] + ej[3]] = base[base_idx(ei), base_idx(ej)]
        level_masks.append(expanded)
        level_layouts.append(layout)
        t_prev = t_next

    return AttentionMaskSet(target_names=tgt_names, source_names=src_names,
                            base=base, level_masks=level_masks,
                            level_layouts=level_layouts, schedule=schedule)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def init_params(specs: list[VariableSpec], config: ModelConfig,
                seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    dp = config.inter_dim
    t1 = max(config.tokens_per_series, 1)
    params: dict[str, Tensor] = {}

    def add(name, shape, scale=0.02):
        params[name] = Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

    def add_const(name, value):
        params[name] = Tensor(value, requires_grad=True)

    for s in specs:
        if s.is_source:
            if s.kind == "ts-numerical":
                add(f"enc:{s.name}:patch", (config.patch_len, d))
            elif s.kind == "ts-categorical":
                add(f"enc:{s.name}:embed", (s.category_count, dp))
                add(f"enc:{s.name}:proj", (config.patch_len * dp, d))
            elif s.kind == "static-numerical":
                add(f"enc:{s.name}:static", (d,))
            else:
                add(f"enc:{s.name}:embed", (s.category_count, d))
            add(f"enc:{s.name}:miss", (d,))
            add(f"ident:{s.name}", (d,))
        if s.is_target:
            add(f"sentinel:{s.name}", (d,))
    add("pos", (t1, d))

    levels = len(token_schedule(t1, config.conv_window, config.conv_stride,
                                config.level_count))
    hidden = 4 * d
    for lv in range(levels):
        for k in range(config.layers_per_level):
            p = f"lvl{lv}:lay{k}"
            for nm in ("wq", "wk", "wv", "wo"):
                add(f"{p}:{nm}", (d, d))
            for nm in ("bq", "bk", "bv", "bo"):
                add_const(f"{p}:{nm}", np.zeros(d))
            add_const(f"{p}:ln1g", np.ones(d))
            add_const(f"{p}:ln1b", np.zeros(d))
            add_const(f"{p}:ln2g", np.ones(d))
            add_const(f"{p}:ln2b", np.zeros(d))
            add(f"{p}:ffn1", (d, hidden))
            add_const(f"{p}:ffn1b", np.zeros(hidden))
            add(f"{p}:ffn2", (hidden, d))
            add_const(f"{p}:ffn2b", np.zeros(d))
    add_const("final:lng", np.ones(d))
    add_const("final:lnb", np.zeros(d))

    for s in specs:
        if not s.is_target:
            continue
        width = s.category_count if s.is_categorical else 1
        add(f"dec:{s.name}", (d, config.horizon * width))
        add_const(f"dec:{s.name}:b", np.zeros(config.horizon * width))
    return params


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _patch_index(config: ModelConfig) -> np.ndarray:
    t = config.tokens_per_series
    starts = np.arange(t) * config.patch_stride
    return starts[:, None] + np.arange(config.patch_len)[None, :]


def build_cache(inputs: dict, specs: list[VariableSpec], config: ModelConfig) -> dict:
    """Precompute per-variable constant arrays for a batch of windows.

    inputs: source name -> (B, S) array for time series, (B,) for static.
    NaN marks missing; a patch containing any missing sample is flagged
    and later replaced by the variable's learned missing token.
    """
    cache = {}
    pidx = _patch_index(config)
    batch = None
    for s in specs:
        if not s.is_source:
            continue
        arr = np.asarray(inputs[s.name], dtype=np.float64)
        batch = arr.shape[0] if batch is None else batch
        if s.is_static:
            miss = np.isnan(arr).astype(np.float64)[:, None]
            if s.is_categorical:
                idx = np.where(np.isnan(arr), 1.0, arr).astype(np.int64) - 1
                cache[s.name] = {"idx": idx, "miss": miss}
            else:
                cache[s.name] = {"val": np.nan_to_num(arr)[:, None], "miss": miss}
        else:
            if arr.shape[1] != config.input_len:
                raise DataError(f"'{s.name}' windows have {arr.shape[1]} samples, "
                                f"expected {config.input_len}")
            patches = arr[:, pidx]                      # (B, T, P)
            miss = np.isnan(patches).any(axis=2, keepdims=True).astype(np.float64)
            if s.is_categorical:
                idx = np.where(np.isnan(patches), 1.0, patches).astype(np.int64) - 1
                cache[s.name] = {"idx": idx, "miss": miss}
            else:
                cache[s.name] = {"patches": np.nan_to_num(patches), "miss": miss}
    cache["_batch"] = batch
    return cache


def encode_batch(params: dict, cache: dict, specs: list[VariableSpec],
                 config: ModelConfig):
    """Token tensors for one batch: (ts, static, target) token maps."""
    b = cache["_batch"]
    t = config.tokens_per_series
    tok_ts = {}
    tok_static = {}
    tok_target = {}
    for s in specs:
        if s.is_source:
            miss_tok = params[f"enc:{s.name}:miss"]
            ident = params[f"ident:{s.name}"]
            m = cache[s.name]["miss"]
            # missing positions take the learned token verbatim, with no
            # positional or identity terms added on top
            if s.is_static:
                if s.is_categorical:
                    raw = ad.embedding(params[f"enc:{s.name}:embed"], cache[s.name]["idx"])
                else:
                    raw = ad.mul(params[f"enc:{s.name}:static"], Tensor(cache[s.name]["val"]))
                tok = (raw + ident) * Tensor(1.0 - m) + miss_tok * Tensor(m)
                tok_static[s.name] = ad.reshape(tok, (b, 1, config.embed_dim))
            else:
                if s.is_categorical:
                    emb = ad.embedding(params[f"enc:{s.name}:embed"], cache[s.name]["idx"])
                    flat = ad.reshape(emb, (b, t, config.patch_len * config.inter_dim))
                    raw = flat @ params[f"enc:{s.name}:proj"]
                else:
                    raw = Tensor(cache[s.name]["patches"]) @ params[f"enc:{s.name}:patch"]
                tok = raw + params["pos"][0:t] + ident
                tok_ts[s.name] = tok * Tensor(1.0 - m) + miss_tok * Tensor(m)
        if s.is_target:
            sent = ad.reshape(params[f"sentinel:{s.name}"], (1, 1, config.embed_dim))
            tok_target[s.name] = ad.broadcast_to(sent, (b, 1, config.embed_dim))
    return tok_ts, tok_static, tok_target


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def _transformer_layer(x: Tensor, params: dict, prefix: str, mask: np.ndarray,
                       config: ModelConfig) -> Tensor:
    b, tw, d = x.shape
    h = config.head_count
    dh = d // h
    scale = 1.0 / math.sqrt(d)

    def heads(t):
        return ad.transpose(ad.reshape(t, (b, tw, h, dh)), (0, 2, 1, 3))

    normed = ad.layer_norm(x, params[f"{prefix}:ln1g"], params[f"{prefix}:ln1b"])
    q = heads(normed @ params[f"{prefix}:wq"] + params[f"{prefix}:bq"])
    k = heads(normed @ params[f"{prefix}:wk"] + params[f"{prefix}:bk"])
    v = heads(normed @ params[f"{prefix}:wv"] + params[f"{prefix}:bv"])
    att = ad.masked_attention(q, k, v, mask, scale=scale)
    att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (b, tw, d))
    x = x + att @ params[f"{prefix}:wo"] + params[f"{prefix}:bo"]

    normed2 = ad.layer_norm(x, params[f"{prefix}:ln2g"], params[f"{prefix}:ln2b"])
    hidden = ad.gelu(normed2 @ params[f"{prefix}:ffn1"] + params[f"{prefix}:ffn1b"])
    return x + hidden @ params[f"{prefix}:ffn2"] + params[f"{prefix}:ffn2b"]


def forward_batch(params: dict, cache: dict, masks: AttentionMaskSet,
                  specs: list[VariableSpec], config: ModelConfig) -> dict:
    """Predictions for every target: (B, S_j) value tensors for numerical
    targets, (B, S_j, C) logit tensors for categorical ones."""
    b = cache["_batch"]
    tok_ts, tok_static, tok_target = encode_batch(params, cache, specs, config)
    ts_names = [s.name for s in specs if s.is_source and not s.is_static]
    static_names = [s.name for s in specs if s.is_source and s.is_static]
    tgt_specs = [s for s in specs if s.is_target]

    t_prev = config.tokens_per_series if ts_names else 0
    for lv, t_next in enumerate(masks.schedule):
        mask = masks.level_masks[lv]
        wins = level_windows(t_prev, config.conv_window, config.conv_stride)
        layout = {(name, section): (start, width)
                  for name, section, start, width in masks.level_layouts[lv]}
        out_ts = {name: [] for name in ts_names}
        out_static = {name: [] for name in static_names}
        out_target = {s.name: [] for s in tgt_specs}

        for w_start, w_width in wins:
            blocks = [tok_target[s.name] for s in tgt_specs]
            blocks += [tok_static[nm] for nm in static_names]
            for nm in ts_names:
                blocks.append(tok_ts[nm][:, w_start:w_start + w_width, :])
            x = ad.concat(blocks, axis=1) if len(blocks) > 1 else blocks[0]
            for k in range(config.layers_per_level):
                x = _transformer_layer(x, params, f"lvl{lv}:lay{k}", mask, config)
            for s in tgt_specs:
                start, _ = layout[(s.name, "target")]
                out_target[s.name].append(x[:, start:start + 1, :])
            for nm in static_names:
                start, _ = layout[(nm, "static")]
                out_static[nm].append(x[:, start:start + 1, :])
            for nm in ts_names:
                start, width = layout[(nm, "ts")]
                out_ts[nm].append(x[:, start:start + width, :].mean(axis=1, keepdims=True))

        def across_windows(parts):
            if len(parts) == 1:
                return parts[0]
            return ad.concat(parts, axis=1).mean(axis=1, keepdims=True)

        tok_target = {nm: across_windows(v) for nm, v in out_target.items()}
        tok_static = {nm: across_windows(v) for nm, v in out_static.items()}
        tok_ts = {nm: ad.concat(v, axis=1) if len(v) > 1 else v[0]
                  for nm, v in out_ts.items()}
        t_prev = t_next

    preds = {}
    for s in tgt_specs:
        h = ad.layer_norm(ad.reshape(tok_target[s.name], (b, config.embed_dim)),
                          params["final:lng"], params["final:lnb"])
        out = h @ params[f"dec:{s.name}"] + params[f"dec:{s.name}:b"]
        if s.is_categorical:
            preds[s.name] = ad.reshape(out, (b, config.horizon, s.category_count))
        else:
            preds[s.name] = out
    return preds


def compute_loss(preds: dict, targets: dict, specs: list[VariableSpec]) -> Tensor:
    """Per window, sum of L1 over numerical targets and cross-entropy
    over categorical targets; averaged over the batch. Missing target
    samples contribute zero."""
    tgt_specs = [s for s in specs if s.is_target]
    b = next(iter(targets.values())).shape[0]
    total = None
    present = 0.0
    for s in tgt_specs:
        y = np.asarray(targets[s.name], dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        miss = np.isnan(y)
        keep = Tensor((~miss).astype(np.float64))
        present += float((~miss).sum())
        if s.is_categorical:
            labels = np.where(miss, 1.0, y).astype(np.int64) - 1
            losses = ad.cross_entropy_logits(preds[s.name], labels)
        else:
            losses = ad.abs_(preds[s.name] - Tensor(np.nan_to_num(y)))
        term = (losses * keep).sum()
        total = term if total is None else total + term
    if total is None or present == 0:
        raise DataError("every target sample in the batch is missing")
    return total / float(b)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TrainedForecaster:
    """Frozen model: parameters, normalizer, masks, and telemetry.

    Immutable after training; all prediction entry points are read-only
    and safe to call concurrently.
    """

    def __init__(self, config: ModelConfig, specs: list[VariableSpec],
                 params: dict, normalizer: Normalizer, masks: AttentionMaskSet,
                 prior: PriorKnowledge, telemetry: dict):
        self.config = config
        self.specs = list(specs)
        self.params = params
        self.normalizer = normalizer
        self.masks = masks
        self.prior = prior
        self.telemetry = telemetry

    @property
    def source_specs(self):
        return [s for s in self.specs if s.is_source]

    @property
    def target_specs(self):
        return [s for s in self.specs if s.is_target]

    def predict_normalized(self, inputs: dict) -> dict:
        """Forecast from normalized window inputs.

        inputs: source name -> (B, S) array (time series) or (B,) array
        (static), already on the normalized scale. Returns per target:
        (B, S_j) normalized values, or (B, S_j, C) class probabilities.
        """
        cache = build_cache(inputs, self.specs, self.config)
        with ad.no_grad():
            preds = forward_batch(self.params, cache, self.masks, self.specs, self.config)
        out = {}
        for s in self.target_specs:
            arr = preds[s.name].data
            if s.is_categorical:
                shifted = arr - arr.max(axis=-1, keepdims=True)
                e = np.exp(shifted)
                arr = e / e.sum(axis=-1, keepdims=True)
            out[s.name] = arr
        return out

    def as_predict_fn(self):
        """Black-box adapter for gradient extraction.

        Returns fn(inputs) -> {target: (B,) values or (B, C) class
        probabilities}, using the first forecast sample of each target.
        """
        def fn(inputs: dict) -> dict:
            preds = self.predict_normalized(inputs)
            return {name: arr[:, 0] for name, arr in preds.items()}

        return fn

    def predict_examples(self, examples) -> dict:
        """Forecast unnormalized windowed examples; numerical outputs are
        mapped back to the original scale, categorical to labels 1..C."""
        inputs = _stack_inputs(examples, self.specs)
        for s in self.source_specs:
            if not s.is_categorical:
                inputs[s.name] = self.normalizer.normalize_values(s.name, inputs[s.name])
        preds = self.predict_normalized(inputs)
        out = {}
        for s in self.target_specs:
            if s.is_categorical:
                out[s.name] = np.argmax(preds[s.name], axis=-1) + 1.0
            else:
                out[s.name] = self.normalizer.invert_values(s.name, preds[s.name])
        return out


def _stack_inputs(examples, specs) -> dict:
    out = {}
    for s in specs:
        if not s.is_source:
            continue
        if s.is_static:
            out[s.name] = np.array([float(ex.inputs[s.name]) for ex in examples])
        else:
            out[s.name] = np.stack([np.asarray(ex.inputs[s.name], dtype=np.float64)
                                    for ex in examples])
    return out


def _stack_targets(examples, specs) -> dict:
    out = {}
    for s in specs:
        if s.is_target:
            rows = []
            for ex in examples:
                v = ex.targets[s.name]
                rows.append(np.atleast_1d(np.asarray(v, dtype=np.float64)))
            out[s.name] = np.stack(rows)
    return out


def _slice_cache(cache: dict, idx: np.ndarray) -> dict:
    out = {"_batch": int(idx.size)}
    for name, entry in cache.items():
        if name == "_batch":
            continue
        out[name] = {k: v[idx] for k, v in entry.items()}
    return out


def train(dataset: Dataset, prior: PriorKnowledge, config: ModelConfig,
          progress=None) -> TrainedForecaster:
    """Fit the forecaster on all windows of a dataset.

    Adam over seeded shuffled mini-batches of config.batch_size windows;
    a batch_size at or above the window count trains full-batch.
    Deterministic under a fixed seed. If the loss ever turns non-finite,
    training aborts and the last finite-loss parameters are returned
    (telemetry["diverged"]).
    """
    specs = dataset.specs
    prior.validate(specs)
    normalizer = fit_normalizer(dataset)
    ndataset = apply_normalizer(normalizer, dataset)
    examples = make_windows(ndataset, config.input_len, config.horizon,
                            stride=config.train_stride)
    # windows were cut from the normalized dataset, so inputs and targets
    # are already on the normalized scale
    inputs = _stack_inputs(examples, specs)
    targets = _stack_targets(examples, specs)

    cache = build_cache(inputs, specs, config)
    masks = build_masks(specs, prior, config)
    params = init_params(specs, config, config.seed)
    opt = Adam(params, lr=config.learning_rate)
    batch = cache["_batch"]
    order_rng = np.random.default_rng(config.seed + 1)

    epoch_losses = []
    diverged = False
    snapshot = {name: p.data.copy() for name, p in params.items()}
    for epoch in range(config.epochs):
        try:
            if batch <= config.batch_size:
                loss = compute_loss(forward_batch(params, cache, masks, specs, config),
                                    targets, specs)
                grads = ad.backward(loss, wrt=list(params.values()))
                opt.step({name: grads[p] for name, p in params.items()})
                ad.zero_grads(params.values())
                epoch_loss = loss.item()
            else:
                perm = order_rng.permutation(batch)
                epoch_loss = 0.0
                for i in range(0, batch, config.batch_size):
                    idx = perm[i:i + config.batch_size]
                    sub_cache = _slice_cache(cache, idx)
                    sub_targets = {n: t[idx] for n, t in targets.items()}
                    loss = compute_loss(
                        forward_batch(params, sub_cache, masks, specs, config),
                        sub_targets, specs)
                    grads = ad.backward(loss, wrt=list(params.values()))
                    opt.step({name: grads[p] for name, p in params.items()})
                    ad.zero_grads(params.values())
                    epoch_loss += loss.item() * idx.size
                epoch_loss /= batch
            if not np.isfinite(epoch_loss):
                raise NonFiniteError("non-finite training loss")
        except NonFiniteError:
            diverged = True
            for name, p in params.items():
                p.data = snapshot[name]
            break
        epoch_losses.append(epoch_loss)
        snapshot = {name: p.data.copy() for name, p in params.items()}
        if progress is not None:
            progress(epoch, epoch_loss)

    telemetry = {
        "epoch_losses": epoch_losses,
        "final_loss": epoch_losses[-1] if epoch_losses else float("nan"),
        "initial_loss": epoch_losses[0] if epoch_losses else float("nan"),
        "diverged": diverged,
        "window_count": batch,
    }
    return TrainedForecaster(config, specs, params, normalizer, masks, prior, telemetry)


# ---------------------------------------------------------------------------
# Checkpoint IO (bit-exact)
# ---------------------------------------------------------------------------


def save_checkpoint(model: TrainedForecaster, path) -> None:
    """Self-describing binary container; float64 buffers round-trip
    bit-exactly."""
    names = sorted(model.params)
    manifest = []
    offset = 0
    for name in names:
        arr = model.params[name].data
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "config": model.config.to_json(),
        "specs": [s.to_json() for s in model.specs],
        "normalizer": model.normalizer.to_json(),
        "prior": model.prior.to_json(),
        "telemetry": model.telemetry,
        "params": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            arr = np.ascontiguousarray(model.params[name].data, dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(path) -> TrainedForecaster:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError("not a forecaster checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("schema") != CHECKPOINT_SCHEMA:
            raise DataError(f"unsupported checkpoint schema {header.get('schema')!r}")
        blob = fh.read()
    config = ModelConfig.from_json(header["config"])
    specs = [VariableSpec.from_json(v) for v in header["specs"]]
    normalizer = Normalizer.from_json(header["normalizer"])
    prior = PriorKnowledge.from_json(header["prior"])
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=start).reshape(shape)
        params[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
    masks = build_masks(specs, prior, config)
    return TrainedForecaster(config, specs, params, normalizer, masks, prior,
                             header["telemetry"])
