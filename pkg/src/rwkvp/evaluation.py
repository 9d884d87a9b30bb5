"""Evaluation: perplexity, cloze accuracy, parameter counting, ablations,
and perspective-weight tracing."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from rwkvp import autograd as ag
from rwkvp import model as m
from rwkvp.corpus import CorpusError
from rwkvp.params import ParamStore


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def perplexity(model: m.Model, tokens: np.ndarray, chunk: int | None = None) -> float:
    """exp(mean next-token NLL, natural log) over the whole stream.

    The stream is processed in chunks with recurrent-state handoff, so the
    result is invariant to the chunk size.
    """
    tokens = np.asarray(tokens)
    if tokens.size < 2:
        raise CorpusError("perplexity needs at least two tokens")
    chunk = chunk or model.config.context_length
    states = model.init_states()
    nll_sum, count = 0.0, 0
    prev_logit = None
    with ag.no_grad():
        for start in range(0, len(tokens), chunk):
            piece = tokens[start:start + chunk]
            logits, _, states = model.forward(piece, states)
            ld = logits.data
            if prev_logit is not None:
                # the last row of the previous chunk predicts this chunk's
                # first token
                ld = np.vstack([prev_logit, ld])
            logp = _log_softmax(ld)
            targets = piece if prev_logit is not None else piece[1:]
            rows = logp[: len(targets)] if prev_logit is not None else logp[:-1]
            nll_sum -= rows[np.arange(len(targets)), targets].sum()
            count += len(targets)
            prev_logit = logits.data[-1]
    return float(np.exp(nll_sum / count))


def cloze_accuracy(model: m.Model, items) -> float:
    """Fraction of (context, answer-token) items where the argmax of the
    last-position logits equals the answer."""
    items = list(items)
    if not items:
        raise CorpusError("cloze_accuracy needs a non-empty dataset")
    hits = 0
    with ag.no_grad():
        for context, answer in items:
            logits, _, _ = model.forward(np.asarray(context))
            hits += int(np.argmax(logits.data[-1]) == int(answer))
    return hits / len(items)


# ---------------------------------------------------------------------------
# parameter counting


@dataclass
class ParamCountReport:
    base_count: float
    extended_count: float
    increase_fraction: float    # percent


def base_param_count(cfg: m.ModelConfig) -> int:
    """Analytic n=1 parameter count matching init_base_params exactly."""
    L, d, V = cfg.n_layers, cfg.d_model, cfg.vocab_size
    per_layer = 13 * d * d + 11 * d      # 4 att mats + 9 ffn mats, mus, decay/bonus, 2 LNs
    return 2 * V * d + 4 * d + L * per_layer


def extra_param_count(cfg: m.ModelConfig) -> int:
    """Parameters added by n perspectives plus the configured aggregator."""
    L, d, n = cfg.n_layers, cfg.d_model, cfg.n_perspectives
    extra = (n - 1) * 5 * d * L
    if cfg.aggregation == "weighted_softmax":
        extra += n * d + n
    elif cfg.aggregation == "transformer_like":
        extra += n * d * d + d
    return extra


def count_parameters(cfg: m.ModelConfig, base_total: float | None = None) -> ParamCountReport:
    """Analytic count; pass base_total to anchor against a published size."""
    base = float(base_total) if base_total is not None else float(base_param_count(cfg))
    extra = float(extra_param_count(cfg))
    return ParamCountReport(base_count=base, extended_count=base + extra,
                            increase_fraction=extra / base * 100.0)


# ---------------------------------------------------------------------------
# perspective-weight tracing


@dataclass
class TraceRecord:
    position: int
    token: int
    weights: np.ndarray
    top_perspective: int


def trace_weights(model: m.Model, tokens: np.ndarray) -> list[TraceRecord]:
    """Per-position softmax perspective weights over a decoded prompt."""
    if model.config.aggregation != "weighted_softmax":
        raise m.ConfigError("trace_weights requires aggregation='weighted_softmax', "
                            f"got {model.config.aggregation!r}")
    tokens = np.asarray(tokens)
    records = []
    states = model.init_states()
    chunk = model.config.context_length
    with ag.no_grad():
        for start in range(0, len(tokens), chunk):
            piece = tokens[start:start + chunk]
            _, weights, states = model.forward(piece, states)
            for t, tok in enumerate(piece):
                wv = weights[t]
                records.append(TraceRecord(position=start + t, token=int(tok),
                                           weights=wv.copy(),
                                           top_perspective=int(np.argmax(wv))))
    return records


def trace_to_csv(records: list[TraceRecord]) -> str:
    n = len(records[0].weights)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["position", "token"] + [f"weight_{i + 1}" for i in range(n)] + ["top"])
    for r in records:
        writer.writerow([r.position, r.token] + [f"{w:.9g}" for w in r.weights]
                        + [r.top_perspective])
    return out.getvalue()


def trace_from_csv(text: str) -> list[TraceRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    n = sum(1 for h in header if h.startswith("weight_"))
    records = []
    for row in rows[1:]:
        records.append(TraceRecord(position=int(row[0]), token=int(row[1]),
                                   weights=np.array([float(x) for x in row[2:2 + n]]),
                                   top_perspective=int(row[2 + n])))
    return records


def render_trace_svg(records: list[TraceRecord], width: int = 900,
                     height: int = 260) -> str:
    """Stacked-area rendering of the per-position perspective weights."""
    n = len(records[0].weights)
    T = len(records)
    pad = 30
    pw = (width - 2 * pad) / max(T - 1, 1)
    palette = ["#4477aa", "#66ccee", "#228833", "#ccbb44", "#ee6677", "#aa3377",
               "#bbbbbb", "#000000"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    cum = np.zeros(T)
    ys = np.array([r.weights for r in records])          # (T, n)
    for i in range(n):
        top = cum + ys[:, i]
        pts = []
        for t in range(T):
            pts.append(f"{pad + t * pw:.2f},{height - pad - cum[t] * (height - 2 * pad):.2f}")
        for t in range(T - 1, -1, -1):
            pts.append(f"{pad + t * pw:.2f},{height - pad - top[t] * (height - 2 * pad):.2f}")
        color = palette[i % len(palette)]
        parts.append(f'<polygon points="{" ".join(pts)}" fill="{color}" '
                     f'fill-opacity="0.8" stroke="none"/>')
        parts.append(f'<text x="{pad + 4}" y="{16 + 14 * i}" font-size="12" '
                     f'fill="{color}">perspective {i + 1}</text>')
        cum = top
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# ablation harness


ABLATION_AXES = ("n_perspectives", "aggregation", "noise_placement")

DEFAULT_ARMS = {
    "n_perspectives": [1, 2, 3, 4],
    "aggregation": ["average", "transformer_like", "weighted_softmax"],
    "noise_placement": ["selector", "temporal"],
}


@dataclass
class ArmResult:
    setting: str
    mean: float
    stddev: float
    values: list
    failed: bool = False


@dataclass
class AblationReport:
    axis: str
    arms: list

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["axis", "setting", "mean_val_ppl", "stddev_val_ppl",
                         "seed_values", "failed"])
        for arm in self.arms:
            writer.writerow([self.axis, arm.setting, f"{arm.mean:.9g}",
                             f"{arm.stddev:.9g}",
                             ";".join(f"{v:.9g}" for v in arm.values),
                             int(arm.failed)])
        return out.getvalue()

    def to_table(self) -> str:
        rows = [["setting", "val ppl (mean +/- std)"]]
        for arm in self.arms:
            if arm.failed:
                rows.append([arm.setting, "FAILED"])
            else:
                rows.append([arm.setting, f"{arm.mean:.4f} +/- {arm.stddev:.4f}"])
        w0 = max(len(r[0]) for r in rows)
        lines = [f"axis: {self.axis}"]
        lines += [f"{r[0]:<{w0}}  {r[1]}" for r in rows]
        return "\n".join(lines) + "\n"


def run_ablation(axis: str, base_cfg: m.ModelConfig, base_store: ParamStore,
                 train_tokens: np.ndarray, val_tokens: np.ndarray, tc,
                 arms=None, seeds=(0, 1, 2), n_perspectives: int = 4) -> AblationReport:
    """Fine-tune + evaluate per (arm, seed); report mean and stddev per arm.

    The metric is validation perplexity after the arm's fine-tuning run.
    A diverging arm is marked failed; the report is still emitted.
    """
    from rwkvp import training

    if axis not in ABLATION_AXES:
        raise m.ConfigError(f"unknown ablation axis {axis!r}; one of {ABLATION_AXES}")
    arms = list(arms) if arms is not None else list(DEFAULT_ARMS[axis])
    seeds = list(seeds)
    if len(arms) < 2:
        raise m.ConfigError("run_ablation needs at least 2 arms")
    if len(seeds) < 3:
        raise m.ConfigError("run_ablation needs at least 3 seeds")

    results = []
    for arm in arms:
        n = n_perspectives
        aggregation = "weighted_softmax"
        noise_target = tc.noise_target
        if axis == "n_perspectives":
            n = int(arm)
        elif axis == "aggregation":
            aggregation = str(arm)
        else:
            noise_target = str(arm)
        values, failed = [], False
        for seed in seeds:
            arm_tc = replace(tc, seed=seed, noise_target=noise_target)
            try:
                _, _, _, log = training.finetune_perspectives(
                    base_store, base_cfg, n, aggregation,
                    train_tokens, val_tokens, arm_tc)
                values.append(log.val_ppl[-1][1])
            except training.DivergenceError:
                failed = True
                break
        if failed or not values:
            results.append(ArmResult(str(arm), math.nan, math.nan, values, failed=True))
        else:
            arr = np.array(values)
            results.append(ArmResult(str(arm), float(arr.mean()),
                                     float(arr.std(ddof=1) if len(arr) > 1 else 0.0),
                                     values))
    return AblationReport(axis=axis, arms=results)
