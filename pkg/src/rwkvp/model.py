"""RWKV-v4 block family: config, parameter init, time/channel mixing, forward.

Composition: embedding -> input LN -> [LN -> time-mix residual ->
LN -> channel-mix residual] x L -> head (final LN + unembedding).

All sequence-level functions take tokens of shape (T,) and run vectorized
over the chunk; the recurrent parts (WKV accumulators, previous-token rows)
cross chunk boundaries through detached numpy state.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from rwkvp import autograd as ag
from rwkvp import wkv
from rwkvp.autograd import Tensor
from rwkvp.params import FreezeMask, ParamStore

AGGREGATION_MODES = ("average", "transformer_like", "weighted_softmax")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_layers: int = 4
    d_model: int = 64
    vocab_size: int = 257
    n_perspectives: int = 1
    aggregation: str = "weighted_softmax"
    context_length: int = 128

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model < 2:
            raise ConfigError(f"d_model must be >= 2, got {self.d_model}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.n_perspectives < 1:
            raise ConfigError(f"n_perspectives must be >= 1, got {self.n_perspectives}")
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}, "
                              f"got {self.aggregation!r}")
        if self.context_length < 2:
            raise ConfigError(f"context_length must be >= 2, got {self.context_length}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# parameter names that hold per-perspective temporal coefficients end in ".p<i>"
def mu_names(cfg: ModelConfig, persp: int):
    names = []
    for l in range(cfg.n_layers):
        for slot in ("att.mu_r", "att.mu_k", "att.mu_v", "ffn.mu_r", "ffn.mu_k"):
            names.append(f"layer{l}.{slot}.p{persp}")
    return names


def is_temporal(name: str) -> bool:
    return ".mu_" in name


def is_aggregator(name: str) -> bool:
    return name.startswith("selector.") or name.startswith("agghead.")


def init_base_params(cfg: ModelConfig, seed: int) -> tuple[ParamStore, FreezeMask]:
    """From-scratch init of a single-perspective base model (all trainable)."""
    if cfg.n_perspectives != 1:
        raise ConfigError("base models are initialized with n_perspectives=1")
    rng = np.random.default_rng(seed)
    L, d, V = cfg.n_layers, cfg.d_model, cfg.vocab_size
    store = ParamStore()

    def uniform(shape, s):
        return rng.uniform(-s, s, size=shape)

    store.add("emb.weight", uniform((V, d), 0.4 / np.sqrt(d)))
    store.add("ln0.g", np.ones(d))
    store.add("ln0.b", np.zeros(d))

    pos = (np.arange(d) + 0.5) / d
    s_in = np.sqrt(3.0 / d)
    s_out = s_in / np.sqrt(2.0 * L)
    for l in range(L):
        depth = l / max(L - 1, 1)          # 0 at the bottom, 1 at the top
        store.add(f"layer{l}.ln1.g", np.ones(d))
        store.add(f"layer{l}.ln1.b", np.zeros(d))
        store.add(f"layer{l}.ln2.g", np.ones(d))
        store.add(f"layer{l}.ln2.b", np.zeros(d))
        # depth-graded token-shift coefficients in (0, 1)
        store.add(f"layer{l}.att.mu_r.p0", 0.5 * pos ** (1.0 - 0.9 * depth))
        store.add(f"layer{l}.att.mu_k.p0", pos ** (1.0 - 0.9 * depth))
        store.add(f"layer{l}.att.mu_v.p0", np.clip(pos ** (1.0 - 0.9 * depth) + 0.3 * depth, 0.0, 0.99))
        store.add(f"layer{l}.att.w_r", uniform((d, d), s_in))
        store.add(f"layer{l}.att.w_k", uniform((d, d), s_in))
        store.add(f"layer{l}.att.w_v", uniform((d, d), s_in))
        store.add(f"layer{l}.att.w_o", uniform((d, d), s_out))
        # per-channel decay exponent: channel 0 remembers longest
        store.add(f"layer{l}.att.decay", 0.1 + 6.0 * (np.arange(d) / max(d - 1, 1)) ** 1.5)
        store.add(f"layer{l}.att.bonus", 0.3 + 0.2 * np.cos(np.arange(d)))
        store.add(f"layer{l}.ffn.mu_r.p0", 0.5 * pos ** (1.0 - 0.9 * depth))
        store.add(f"layer{l}.ffn.mu_k.p0", pos ** (1.0 - 0.9 * depth))
        store.add(f"layer{l}.ffn.w_r", uniform((d, d), s_in))
        store.add(f"layer{l}.ffn.w_k", uniform((d, 4 * d), s_in))
        store.add(f"layer{l}.ffn.w_v", uniform((4 * d, d), np.sqrt(3.0 / (4 * d)) / np.sqrt(2.0 * L)))

    store.add("ln_out.g", np.ones(d))
    store.add("ln_out.b", np.zeros(d))
    store.add("head.weight", uniform((d, V), s_in))
    return store, FreezeMask.all_trainable(store.names())


@dataclass
class StreamState:
    """Recurrent state of one layer of one perspective stream."""
    att_prev: np.ndarray          # last post-LN row seen by the time-mix block
    wkv_state: tuple              # (a, b, p)
    ffn_prev: np.ndarray          # last post-LN row seen by the channel-mix block

    @classmethod
    def zeros(cls, d: int, dtype=np.float32) -> "StreamState":
        return cls(np.zeros(d, dtype=dtype), wkv.empty_state(d, dtype), np.zeros(d, dtype=dtype))


def init_stream_states(cfg: ModelConfig, dtype=np.float32):
    """states[i][l]: per-perspective, per-layer recurrent state (all independent)."""
    return [[StreamState.zeros(cfg.d_model, dtype) for _ in range(cfg.n_layers)]
            for _ in range(cfg.n_perspectives)]


def token_shift_mix(x_t: Tensor, x_prev: Tensor, mu: Tensor) -> Tensor:
    """mu * x_t + (1 - mu) * x_prev, elementwise over the channel axis."""
    if x_t.shape != x_prev.shape:
        raise ag.ShapeError(f"token_shift_mix: {x_t.shape} vs {x_prev.shape}")
    return ag.add(ag.mul(x_t, mu), ag.mul(x_prev, ag.sub(1.0, mu)))


def time_mixing(store: ParamStore, layer: int, persp: int, xx: Tensor,
                st: StreamState) -> tuple[Tensor, np.ndarray, tuple]:
    """Time-mix block over a post-LN chunk xx (T, d).

    Returns (residual delta, new att_prev row, new wkv state).
    """
    pre = f"layer{layer}.att"
    xprev = ag.shift_rows(xx, st.att_prev)
    xr = token_shift_mix(xx, xprev, store[f"{pre}.mu_r.p{persp}"])
    xk = token_shift_mix(xx, xprev, store[f"{pre}.mu_k.p{persp}"])
    xv = token_shift_mix(xx, xprev, store[f"{pre}.mu_v.p{persp}"])
    r = ag.matmul(xr, store[f"{pre}.w_r"])
    k = ag.matmul(xk, store[f"{pre}.w_k"])
    v = ag.matmul(xv, store[f"{pre}.w_v"])
    y, wkv_state = wkv.wkv_sequence(k, v, store[f"{pre}.decay"], store[f"{pre}.bonus"],
                                    st.wkv_state)
    out = ag.matmul(ag.mul(ag.sigmoid(r), y), store[f"{pre}.w_o"])
    return out, xx.data[-1].copy(), wkv_state


def channel_mixing(store: ParamStore, layer: int, persp: int, xx: Tensor,
                   st: StreamState) -> tuple[Tensor, np.ndarray]:
    """Channel-mix block over a post-LN chunk xx (T, d).

    Returns (residual delta, new ffn_prev row).
    """
    pre = f"layer{layer}.ffn"
    xprev = ag.shift_rows(xx, st.ffn_prev)
    xr = token_shift_mix(xx, xprev, store[f"{pre}.mu_r.p{persp}"])
    xk = token_shift_mix(xx, xprev, store[f"{pre}.mu_k.p{persp}"])
    kk = ag.square(ag.relu(ag.matmul(xk, store[f"{pre}.w_k"])))
    out = ag.mul(ag.sigmoid(ag.matmul(xr, store[f"{pre}.w_r"])),
                 ag.matmul(kk, store[f"{pre}.w_v"]))
    return out, xx.data[-1].copy()


def run_stream(cfg: ModelConfig, store: ParamStore, tokens: np.ndarray, persp: int,
               states: list[StreamState] | None = None) -> tuple[Tensor, list[StreamState]]:
    """Full stack for one perspective stream; returns pre-head embeddings (T, d)."""
    tokens = np.asarray(tokens)
    if tokens.size and tokens.max() >= cfg.vocab_size:
        raise IndexError(f"token id {int(tokens.max())} out of range for V={cfg.vocab_size}")
    if states is None:
        states = [StreamState.zeros(cfg.d_model, store["emb.weight"].data.dtype)
                  for _ in range(cfg.n_layers)]
    x = ag.embed(store["emb.weight"], tokens)
    x = ag.layer_norm(x, store["ln0.g"], store["ln0.b"])
    new_states = []
    for l in range(cfg.n_layers):
        st = states[l]
        xx = ag.layer_norm(x, store[f"layer{l}.ln1.g"], store[f"layer{l}.ln1.b"])
        delta, att_prev, wkv_state = time_mixing(store, l, persp, xx, st)
        x = ag.add(x, delta)
        xx = ag.layer_norm(x, store[f"layer{l}.ln2.g"], store[f"layer{l}.ln2.b"])
        delta, ffn_prev = channel_mixing(store, l, persp, xx, st)
        x = ag.add(x, delta)
        new_states.append(StreamState(att_prev, wkv_state, ffn_prev))
    return x, new_states


def head_logits(store: ParamStore, p: Tensor) -> Tensor:
    """Shared head: final LN then unembedding projection."""
    return ag.matmul(ag.layer_norm(p, store["ln_out.g"], store["ln_out.b"]),
                     store["head.weight"])


def model_forward(cfg: ModelConfig, store: ParamStore, tokens: np.ndarray,
                  states: list[StreamState] | None = None) -> tuple[Tensor, list[StreamState]]:
    """Plain single-stream RWKV-v4 path (the n=1 reference)."""
    p, new_states = run_stream(cfg, store, tokens, persp=0, states=states)
    return head_logits(store, p), new_states


@dataclass
class Model:
    """A config + parameter store + freeze mask bundle."""
    config: ModelConfig
    store: ParamStore
    mask: FreezeMask

    def forward(self, tokens, states=None):
        """Multi-perspective forward with the configured aggregation.

        Returns (logits Tensor (T, V), weights ndarray (T, n) or None,
        new states).
        """
        from rwkvp import aggregation, perspectives
        if self.config.n_perspectives == 1 and not any(
                is_aggregator(n) for n in self.store.names()):
            # bare base model (pretraining/eval before extension)
            states0 = states[0] if states is not None else None
            logits, new0 = model_forward(self.config, self.store, tokens, states0)
            return logits, None, [new0]
        p_list, new_states = perspectives.multi_forward(self.config, self.store,
                                                        tokens, states)
        logits, weights = aggregation.aggregate(self.config, self.store, p_list)
        return logits, (None if weights is None else weights.data), new_states

    def init_states(self):
        return init_stream_states(self.config, self.store["emb.weight"].data.dtype)
