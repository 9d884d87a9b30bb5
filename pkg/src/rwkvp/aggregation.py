"""The three heads that fuse perspective embeddings into vocabulary logits.

All operate position-wise on the n pre-head embeddings p_1..p_n (each
(T, d)); the shared head (final LN + unembedding) is applied inside each
aggregator. With n=1 every mode reduces to the plain head.
"""

from __future__ import annotations

from rwkvp import autograd as ag
from rwkvp.autograd import Tensor
from rwkvp.model import ModelConfig, head_logits
from rwkvp.params import ParamStore


def _mean_embedding(p_list: list[Tensor]) -> Tensor:
    if not p_list:
        raise ValueError("aggregation requires at least one perspective")
    acc = p_list[0]
    for p in p_list[1:]:
        acc = ag.add(acc, p)
    return acc * (1.0 / len(p_list))


def aggregate_average(p_list: list[Tensor], store: ParamStore) -> Tensor:
    """head(mean of perspective embeddings)."""
    return head_logits(store, _mean_embedding(p_list))


def aggregate_transformer(p_list: list[Tensor], store: ParamStore) -> Tensor:
    """head(affine projection of the concatenated embeddings)."""
    cat = ag.concat(p_list, axis=-1) if len(p_list) > 1 else p_list[0]
    mixed = ag.add(ag.matmul(cat, store["agghead.W"]), store["agghead.b"])
    return head_logits(store, mixed)


def aggregate_weighted(p_list: list[Tensor], store: ParamStore) -> tuple[Tensor, Tensor]:
    """Learned softmax-weighted combination of per-perspective logits.

    weights = softmax(selector(mean of embeddings)) per position; the output
    is the weight-convex combination of head(p_i), so it always lies in the
    convex hull of the per-perspective logits. Returns (logits, weights).
    """
    n = len(p_list)
    mean_p = _mean_embedding(p_list)
    z = ag.add(ag.matmul(mean_p, ag.transpose(store["selector.W"])), store["selector.b"])
    weights = ag.softmax(z, axis=-1)                       # (T, n)
    logits = None
    for i, p in enumerate(p_list):
        term = ag.mul(ag.slice_cols(weights, i, i + 1), head_logits(store, p))
        logits = term if logits is None else ag.add(logits, term)
    return logits, weights


def aggregate(cfg: ModelConfig, store: ParamStore, p_list: list[Tensor]
              ) -> tuple[Tensor, Tensor | None]:
    """Dispatch on cfg.aggregation; returns (logits, weights-or-None)."""
    if len(p_list) != cfg.n_perspectives:
        raise ValueError(f"got {len(p_list)} perspectives, config says {cfg.n_perspectives}")
    if cfg.aggregation == "average":
        return aggregate_average(p_list, store), None
    if cfg.aggregation == "transformer_like":
        return aggregate_transformer(p_list, store), None
    return aggregate_weighted(p_list, store)
