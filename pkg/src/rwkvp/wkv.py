"""The WKV recurrence in max-shifted (log-stabilized) form.

State per channel is (a, b, p): the true accumulators are A = a*e^p and
B = b*e^p, with p a running log-scale maximum that keeps every exp argument
<= 0. The empty state is a = b = 0, p = -inf.

`wkv_step` is the plain one-token update used by stepwise decoding and as
the reference for tests. `wkv_sequence` runs a whole (T, d) chunk inside a
single autograd node with a hand-written backward over k, v, w, u; the
chunk-boundary state is a detached numpy triple (gradients never cross it).
"""

from __future__ import annotations

import numpy as np

from rwkvp import autograd as ag
from rwkvp.autograd import Tensor


def empty_state(d: int, dtype=np.float32):
    return (np.zeros(d, dtype=dtype),
            np.zeros(d, dtype=dtype),
            np.full(d, -np.inf, dtype=dtype))


def wkv_step(state, k_t: np.ndarray, v_t: np.ndarray, w: np.ndarray, u: np.ndarray):
    """One token of the recurrence. Returns (wkv_t, next_state)."""
    if not (np.all(np.isfinite(k_t)) and np.all(np.isfinite(v_t))):
        raise ag.NonFiniteError("wkv_step: non-finite k or v")
    a, b, p = state
    uk = u + k_t
    q = np.maximum(p, uk)
    e1 = np.exp(p - q)
    e2 = np.exp(uk - q)
    y = (e1 * a + e2 * v_t) / (e1 * b + e2)
    q2 = np.maximum(p - w, k_t)
    f1 = np.exp(p - w - q2)
    f2 = np.exp(k_t - q2)
    return y, (f1 * a + f2 * v_t, f1 * b + f2, q2)


def wkv_sequence(k: Tensor, v: Tensor, w: Tensor, u: Tensor, state=None):
    """Run the recurrence over a (T, d) chunk.

    Returns (y: Tensor (T, d), final_state) where final_state is a detached
    (a, b, p) numpy triple for handing off to the next chunk.
    """
    if k.shape != v.shape or k.data.ndim != 2:
        raise ag.ShapeError(f"wkv_sequence: k {k.shape} vs v {v.shape}")
    T, d = k.shape
    if w.shape != (d,) or u.shape != (d,):
        raise ag.ShapeError(f"wkv_sequence: w {w.shape} / u {u.shape} vs d={d}")
    kd, vd, wd, ud = k.data, v.data, w.data, u.data
    if state is None:
        state = empty_state(d, dtype=kd.dtype)
    a, b, p = (np.array(state[0], dtype=kd.dtype), np.array(state[1], dtype=kd.dtype),
               np.array(state[2], dtype=kd.dtype))

    y = np.empty_like(kd)
    # saved per-step values for the backward pass
    a_in = np.empty_like(kd)
    b_in = np.empty_like(kd)
    e1s = np.empty_like(kd)
    e2s = np.empty_like(kd)
    dens = np.empty_like(kd)
    f1s = np.empty_like(kd)
    f2s = np.empty_like(kd)
    n1s = np.empty((T, d), dtype=bool)   # output max taken at p
    m1s = np.empty((T, d), dtype=bool)   # update max taken at p - w

    for t in range(T):
        a_in[t], b_in[t] = a, b
        kt, vt = kd[t], vd[t]
        uk = ud + kt
        n1 = p >= uk
        q = np.where(n1, p, uk)
        e1 = np.exp(p - q)
        e2 = np.exp(uk - q)
        den = e1 * b + e2
        y[t] = (e1 * a + e2 * vt) / den
        n1s[t], e1s[t], e2s[t], dens[t] = n1, e1, e2, den

        pw = p - wd
        m1 = pw >= kt
        q2 = np.where(m1, pw, kt)
        f1 = np.exp(pw - q2)
        f2 = np.exp(kt - q2)
        a = f1 * a + f2 * vt
        b = f1 * b + f2
        p = q2
        m1s[t], f1s[t], f2s[t] = m1, f1, f2

    out = Tensor(y, ag._needs_grad(k, v, w, u), (k, v, w, u), "wkv_sequence")
    final_state = (a, b, p)

    if out.requires_grad:
        def bwd(gy):
            dk = np.zeros_like(kd)
            dv = np.zeros_like(vd)
            dw = np.zeros_like(wd)
            du = np.zeros_like(ud)
            da = np.zeros(d, dtype=kd.dtype)   # grad wrt state after step t
            db = np.zeros(d, dtype=kd.dtype)
            dp = np.zeros(d, dtype=kd.dtype)
            for t in range(T - 1, -1, -1):
                ai, bi = a_in[t], b_in[t]
                e1, e2, den = e1s[t], e2s[t], dens[t]
                f1, f2 = f1s[t], f2s[t]
                m1 = m1s[t]
                m2 = ~m1
                n1 = n1s[t]
                n2 = ~n1
                vt = vd[t]
                g = gy[t]

                # state update: a' = f1*a + f2*v, b' = f1*b + f2, p' = q2
                g1 = (da * ai + db * bi) * f1
                g2 = (da * vt + db) * f2
                da_cur = da * f1
                db_cur = db * f1
                dv[t] += da * f2
                dk[t] += -g1 * m2 + g2 * m1 + dp * m2
                dw += -g1 * m2 + g2 * m1 - dp * m1
                dp_cur = g1 * m2 - g2 * m1 + dp * m1

                # output: y = (e1*a + e2*v) / (e1*b + e2)
                dN = g / den
                dD = -g * y[t] / den
                da_cur += dN * e1
                db_cur += dD * e1
                dv[t] += dN * e2
                g1o = (dN * ai + dD * bi) * e1
                g2o = (dN * vt + dD) * e2
                duk = -g1o * n2 + g2o * n1
                du += duk
                dk[t] += duk
                dp_cur += g1o * n2 - g2o * n1

                da, db, dp = da_cur, db_cur, dp_cur
            if k.requires_grad:
                k._accumulate(dk)
            if v.requires_grad:
                v._accumulate(dv)
            if w.requires_grad:
                w._accumulate(dw)
            if u.requires_grad:
                u._accumulate(du)
        out._backward = bwd

    return out, final_state


def wkv_sequence_reference(k, v, w, u, dtype=np.float64):
    """Unstabilized direct recurrence in extended precision (test oracle).

    Only valid where exp(k) and exp(u + k) stay finite in `dtype`.
    """
    k = np.asarray(k, dtype=dtype)
    v = np.asarray(v, dtype=dtype)
    w = np.asarray(w, dtype=dtype)
    u = np.asarray(u, dtype=dtype)
    T, d = k.shape
    A = np.zeros(d, dtype=dtype)
    B = np.zeros(d, dtype=dtype)
    y = np.empty_like(k)
    for t in range(T):
        euk = np.exp(u + k[t])
        y[t] = (A + euk * v[t]) / (B + euk)
        ek = np.exp(k[t])
        A = np.exp(-w) * A + ek * v[t]
        B = np.exp(-w) * B + ek
    return y
