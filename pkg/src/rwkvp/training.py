"""Training: pretraining the tiny base and frozen-base fine-tuning.

The fine-tuning protocol: extend a trained base to n perspectives (exact
copies), add the aggregator at an identity-to-base initialization, inject
one-time Gaussian noise (selector by default, temporal as the ablation
arm), freeze every base parameter, and train only the temporal components
and the aggregator with Adam under an exponential LR decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rwkvp import corpus as corpus_mod
from rwkvp import model as m
from rwkvp import perspectives as persp_mod
from rwkvp.autograd import cross_entropy
from rwkvp.params import FreezeMask, ParamStore


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step} (loss={value})")
        self.step = step


class FreezeViolationError(AssertionError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 2
    lr_max: float = 3e-5
    lr_min: float = 1e-5
    mini_epochs: int = 4
    contexts_per_mini_epoch: int = 2000
    context_length: int = 128
    noise_target: str = "selector"
    noise_std: float = 0.01
    noise_mean: float = 0.0
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        if not (0 < self.lr_min <= self.lr_max):
            raise m.ConfigError(f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.noise_std < 0:
            raise m.ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.noise_target not in ("selector", "temporal"):
            raise m.ConfigError(f"noise_target must be 'selector' or 'temporal', "
                                f"got {self.noise_target!r}")
        if self.batch_size < 1 or self.mini_epochs < 1 or self.contexts_per_mini_epoch < 1:
            raise m.ConfigError("batch_size, mini_epochs, contexts_per_mini_epoch must be >= 1")

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainLog:
    seeds: list = field(default_factory=list)
    steps: list = field(default_factory=list)        # (step, lr, loss)
    val_ppl: list = field(default_factory=list)      # (mini_epoch, ppl)

    def to_text(self) -> str:
        lines = ["# rwkvp train log v1"]
        for s in self.seeds:
            lines.append(f"seed {s}")
        for step, lr, loss in self.steps:
            lines.append(f"step {step} {lr:.9g} {loss:.9g}")
        for epoch, ppl in self.val_ppl:
            lines.append(f"epoch {epoch} val_ppl {ppl:.9g}")
        return "\n".join(lines) + "\n"

    def losses(self):
        return [loss for _, _, loss in self.steps]


def lr_schedule(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Exponential decay from lr_max at step 0 to lr_min at total_steps."""
    if total_steps < 1 or not (0 <= step <= total_steps):
        raise m.ConfigError(f"invalid schedule bounds: step={step}, total={total_steps}")
    if not (0 < lr_min <= lr_max):
        raise m.ConfigError(f"need 0 < lr_min <= lr_max, got {lr_min}, {lr_max}")
    return lr_max * (lr_min / lr_max) ** (step / total_steps)


class Adam:
    """Adam over the trainable subset, no weight decay."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            p = store[name]
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def inject_selector_noise(store: ParamStore, std: float, mean: float, seed: int) -> None:
    """One-time Gaussian perturbation of the aggregator's linear layer."""
    if std < 0:
        raise m.ConfigError(f"noise_std must be >= 0, got {std}")
    rng = np.random.default_rng(seed)
    for name in ("selector.W", "selector.b", "agghead.W", "agghead.b"):
        if name in store:
            p = store[name]
            p.data = p.data + rng.normal(mean, std, size=p.shape).astype(p.data.dtype)


def inject_temporal_noise(store: ParamStore, cfg: m.ModelConfig, std: float,
                          mean: float, seed: int) -> None:
    """One-time Gaussian perturbation of every perspective's mu vectors."""
    if std < 0:
        raise m.ConfigError(f"noise_std must be >= 0, got {std}")
    rng = np.random.default_rng(seed)
    for i in range(cfg.n_perspectives):
        for name in m.mu_names(cfg, i):
            p = store[name]
            p.data = p.data + rng.normal(mean, std, size=p.shape).astype(p.data.dtype)


def _train_loop(cfg: m.ModelConfig, store: ParamStore, mask: FreezeMask,
                forward_loss, train_tokens: np.ndarray, val_tokens: np.ndarray,
                tc: TrainConfig) -> TrainLog:
    from rwkvp import evaluation

    log = TrainLog(seeds=[tc.seed])
    steps_per_epoch = math.ceil(tc.contexts_per_mini_epoch / tc.batch_size)
    total_steps = steps_per_epoch * tc.mini_epochs
    sampler = corpus_mod.sample_contexts(train_tokens, tc.context_length,
                                         total_steps * tc.batch_size, seed=tc.seed)
    opt = Adam()
    step = 0
    for epoch in range(tc.mini_epochs):
        for _ in range(steps_per_epoch):
            lr = lr_schedule(step, total_steps, tc.lr_max, tc.lr_min)
            store.zero_grad()
            loss = None
            for _ in range(tc.batch_size):
                ctx = next(sampler)
                part = forward_loss(ctx)
                loss = part if loss is None else loss + part
            loss = loss * (1.0 / tc.batch_size)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(step, value)
            loss.backward()
            grads = store.collect_grads(mask)
            clip_global_norm(grads, tc.grad_clip)
            opt.step(store, grads, lr)
            log.steps.append((step, lr, value))
            step += 1
        ppl = evaluation.perplexity(m.Model(cfg, store, mask), val_tokens,
                                    chunk=tc.context_length)
        log.val_ppl.append((epoch, ppl))
    return log


def _context_loss(model_fn, ctx: np.ndarray):
    logits = model_fn(ctx[:-1])
    return cross_entropy(logits, ctx[1:])


def pretrain_base(base_cfg: m.ModelConfig, train_tokens: np.ndarray,
                  val_tokens: np.ndarray, tc: TrainConfig
                  ) -> tuple[ParamStore, FreezeMask, TrainLog]:
    """Train a single-perspective base from scratch, all parameters trainable."""
    if base_cfg.n_perspectives != 1:
        raise m.ConfigError("pretraining runs with n_perspectives=1")
    store, mask = m.init_base_params(base_cfg, seed=tc.seed)
    log = _train_loop(base_cfg, store, mask,
                      lambda ctx: _context_loss(
                          lambda t: m.model_forward(base_cfg, store, t)[0], ctx),
                      train_tokens, val_tokens, tc)
    return store, mask, log


def finetune_perspectives(base_store: ParamStore, base_cfg: m.ModelConfig,
                          n: int, aggregation: str, train_tokens: np.ndarray,
                          val_tokens: np.ndarray, tc: TrainConfig
                          ) -> tuple[m.ModelConfig, ParamStore, FreezeMask, TrainLog]:
    """Frozen-base fine-tuning of the temporal components and aggregator."""
    cfg, store, mask = persp_mod.extend_to_perspectives(base_store, base_cfg, n,
                                                        aggregation)
    if tc.noise_target == "selector" and any(m.is_aggregator(nm) for nm in store.names()):
        inject_selector_noise(store, tc.noise_std, tc.noise_mean, tc.seed)
    else:
        # 'temporal' arm, and the fallback for aggregators with no linear
        # layer (plain average), where only temporal noise can break the
        # symmetry between identical perspectives
        inject_temporal_noise(store, cfg, tc.noise_std, tc.noise_mean, tc.seed)

    frozen = mask.frozen_names()
    before = store.digest(frozen)
    model = m.Model(cfg, store, mask)
    log = _train_loop(cfg, store, mask,
                      lambda ctx: _context_loss(
                          lambda t: model.forward(t)[0], ctx),
                      train_tokens, val_tokens, tc)
    if store.digest(frozen) != before:
        raise FreezeViolationError("frozen base parameters changed during fine-tuning")
    return cfg, store, mask, log
