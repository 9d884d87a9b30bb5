import numpy as np
import pytest

from conftest import tiny_config
from rwkvp import aggregation
from rwkvp import autograd as ag
from rwkvp import model as m
from rwkvp.autograd import Tensor
from rwkvp.params import ParamStore


def _head_store(d, V, rng, n=None, selector=False, agghead=False, dtype=np.float64):
    """A store holding just the shared head plus optional aggregator params."""
    store = ParamStore()
    store.add("ln_out.g", np.ones(d), dtype=dtype)
    store.add("ln_out.b", np.zeros(d), dtype=dtype)
    store.add("head.weight", rng.uniform(-1, 1, (d, V)), dtype=dtype)
    if selector:
        store.add("selector.W", rng.uniform(-1, 1, (n, d)), dtype=dtype)
        store.add("selector.b", rng.uniform(-1, 1, n), dtype=dtype)
    if agghead:
        store.add("agghead.W", rng.uniform(-1, 1, (n * d, d)), dtype=dtype)
        store.add("agghead.b", rng.uniform(-1, 1, d), dtype=dtype)
    return store


def _np_head(store, p):
    mu = p.mean(-1, keepdims=True)
    var = p.var(-1, keepdims=True)
    xhat = (p - mu) / np.sqrt(var + 1e-5)
    return (xhat * store["ln_out.g"].data + store["ln_out.b"].data) @ store["head.weight"].data


def test_zero_selector_gives_uniform_weights():
    rng = np.random.default_rng(0)
    n, d, V, T = 4, 6, 9, 5
    store = _head_store(d, V, rng, n=n, selector=True)
    store["selector.W"].data[:] = 0.0
    store["selector.b"].data[:] = 0.0
    p_list = [Tensor(rng.uniform(-1, 1, (T, d))) for _ in range(n)]
    with ag.no_grad():
        _, weights = aggregation.aggregate_weighted(p_list, store)
    np.testing.assert_array_equal(weights.data, np.full((T, n), 0.25))


def test_large_bias_saturates_one_perspective():
    rng = np.random.default_rng(1)
    n, d, V, T = 3, 5, 7, 4
    store = _head_store(d, V, rng, n=n, selector=True)
    store["selector.W"].data[:] = 0.0
    store["selector.b"].data[:] = 0.0
    store["selector.b"].data[1] = 20.0
    p_list = [Tensor(rng.uniform(-1, 1, (T, d))) for _ in range(n)]
    with ag.no_grad():
        logits, weights = aggregation.aggregate_weighted(p_list, store)
    assert np.all(np.abs(weights.data[:, 1] - 1.0) < 1e-8)
    with ag.no_grad():
        pure = aggregation.aggregate_average([p_list[1]], store)
    assert np.abs(logits.data - pure.data).max() < 1e-6


def test_identical_perspectives_reduce_to_single_head():
    rng = np.random.default_rng(2)
    n, d, V, T = 4, 6, 8, 3
    store = _head_store(d, V, rng, n=n, selector=True)
    p = rng.uniform(-1, 1, (T, d))
    p_list = [Tensor(p.copy()) for _ in range(n)]
    with ag.no_grad():
        logits, weights = aggregation.aggregate_weighted(p_list, store)
        single = aggregation.aggregate_average([p_list[0]], store)
    # identical inputs: the convex combination collapses regardless of weights
    np.testing.assert_allclose(logits.data, single.data, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(weights.data.sum(-1), 1.0, atol=1e-12)


def test_transformer_selecting_first_perspective():
    rng = np.random.default_rng(3)
    n, d, V, T = 3, 5, 7, 4
    store = _head_store(d, V, rng, n=n, agghead=True)
    W = np.zeros((n * d, d))
    W[:d] = np.eye(d)                       # pick p_1, ignore the rest
    store["agghead.W"].data = W
    store["agghead.b"].data = np.zeros(d)
    p_list = [Tensor(rng.uniform(-1, 1, (T, d))) for _ in range(n)]
    with ag.no_grad():
        out = aggregation.aggregate_transformer(p_list, store)
        only_first = aggregation.aggregate_average([p_list[0]], store)
    np.testing.assert_allclose(out.data, only_first.data, rtol=1e-10, atol=1e-12)


def test_transformer_stacked_identities_equal_average():
    rng = np.random.default_rng(4)
    n, d, V, T = 3, 5, 7, 4
    store = _head_store(d, V, rng, n=n, agghead=True)
    store["agghead.W"].data = np.vstack([np.eye(d)] * n) / n
    store["agghead.b"].data = np.zeros(d)
    p_list = [Tensor(rng.uniform(-1, 1, (T, d))) for _ in range(n)]
    with ag.no_grad():
        out = aggregation.aggregate_transformer(p_list, store)
        avg = aggregation.aggregate_average(p_list, store)
    np.testing.assert_allclose(out.data, avg.data, rtol=1e-10, atol=1e-12)


def test_against_direct_numpy_oracles():
    rng = np.random.default_rng(5)
    n, d, V, T = 3, 6, 10, 7
    store = _head_store(d, V, rng, n=n, selector=True, agghead=True)
    ps = [rng.uniform(-1, 1, (T, d)) for _ in range(n)]
    p_list = [Tensor(p) for p in ps]
    with ag.no_grad():
        avg = aggregation.aggregate_average(p_list, store)
        trf = aggregation.aggregate_transformer(p_list, store)
        wgt, weights = aggregation.aggregate_weighted(p_list, store)

    mean_p = np.mean(ps, axis=0)
    np.testing.assert_allclose(avg.data, _np_head(store, mean_p), rtol=1e-9, atol=1e-11)

    cat = np.concatenate(ps, axis=-1)
    mixed = cat @ store["agghead.W"].data + store["agghead.b"].data
    np.testing.assert_allclose(trf.data, _np_head(store, mixed), rtol=1e-9, atol=1e-11)

    z = mean_p @ store["selector.W"].data.T + store["selector.b"].data
    ez = np.exp(z - z.max(-1, keepdims=True))
    w = ez / ez.sum(-1, keepdims=True)
    np.testing.assert_allclose(weights.data, w, rtol=1e-9, atol=1e-12)
    expect = sum(w[:, i:i + 1] * _np_head(store, ps[i]) for i in range(n))
    np.testing.assert_allclose(wgt.data, expect, rtol=1e-9, atol=1e-11)


def test_weighted_output_in_convex_hull():
    rng = np.random.default_rng(6)
    n, d, V, T = 4, 5, 8, 6
    store = _head_store(d, V, rng, n=n, selector=True)
    p_list = [Tensor(rng.uniform(-1, 1, (T, d))) for _ in range(n)]
    with ag.no_grad():
        logits, weights = aggregation.aggregate_weighted(p_list, store)
        heads = [aggregation.aggregate_average([p], store).data for p in p_list]
    stacked = np.stack(heads)                      # (n, T, V)
    lo, hi = stacked.min(0), stacked.max(0)
    assert np.all(logits.data >= lo - 1e-9) and np.all(logits.data <= hi + 1e-9)
    assert np.all(weights.data >= 0)
    np.testing.assert_allclose(weights.data.sum(-1), 1.0, atol=1e-12)


def test_n1_all_modes_identical():
    rng = np.random.default_rng(7)
    d, V, T = 6, 9, 5
    store = _head_store(d, V, rng, n=1, selector=True)
    store.add("agghead.W", np.eye(d), dtype=np.float64)
    store.add("agghead.b", np.zeros(d), dtype=np.float64)
    p = Tensor(rng.uniform(-1, 1, (T, d)))
    with ag.no_grad():
        avg = aggregation.aggregate_average([p], store)
        trf = aggregation.aggregate_transformer([p], store)
        wgt, weights = aggregation.aggregate_weighted([p], store)
    assert np.array_equal(avg.data, wgt.data)
    np.testing.assert_allclose(trf.data, avg.data, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(weights.data, np.ones((T, 1)))


def test_dispatch_validates_count():
    rng = np.random.default_rng(8)
    cfg = tiny_config(n_perspectives=3)
    store = _head_store(cfg.d_model, cfg.vocab_size, rng, n=3, selector=True)
    with pytest.raises(ValueError, match="perspectives"):
        aggregation.aggregate(cfg, store, [Tensor(np.ones((2, cfg.d_model)))])
    with pytest.raises(ValueError):
        aggregation.aggregate_average([], store)
