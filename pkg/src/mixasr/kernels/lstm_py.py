"""Pure-numpy LSTM layer kernels (fallback backend).

Gate layout on the 4H axis is [input | forget | cell | output].  The
backward kernel consumes the cache produced by the forward kernel; both
backends share this contract, see :mod:`mixasr.kernels`.
"""

from __future__ import annotations

import numpy as np


def _sig(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(x, wx, wh, b):
    """Run an LSTM over a TxD input, zero initial state.

    Returns (h, cache) with h of shape TxH.
    """
    T, _ = x.shape
    H = wh.shape[0]
    pre = x @ wx + b
    acts = np.empty((T, 4 * H))
    c = np.empty((T, H))
    tanh_c = np.empty((T, H))
    h = np.empty((T, H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        a = pre[t] + h_prev @ wh
        i = _sig(a[:H])
        f = _sig(a[H:2 * H])
        g = np.tanh(a[2 * H:3 * H])
        o = _sig(a[3 * H:])
        c[t] = f * c_prev + i * g
        tanh_c[t] = np.tanh(c[t])
        h[t] = o * tanh_c[t]
        acts[t, :H] = i
        acts[t, H:2 * H] = f
        acts[t, 2 * H:3 * H] = g
        acts[t, 3 * H:] = o
        h_prev = h[t]
        c_prev = c[t]
    return h, (x, wx, wh, acts, c, tanh_c, h)


def lstm_backward(dh_out, cache):
    """BPTT through one LSTM layer.  Returns (dx, dwx, dwh, db)."""
    x, wx, wh, acts, c, tanh_c, h = cache
    T, H = dh_out.shape
    da_all = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = acts[t, :H]
        f = acts[t, H:2 * H]
        g = acts[t, 2 * H:3 * H]
        o = acts[t, 3 * H:]
        tc = tanh_c[t]
        dh = dh_out[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        c_prev = c[t - 1] if t > 0 else 0.0
        da_all[t, :H] = dc * g * i * (1.0 - i)
        da_all[t, H:2 * H] = dc * c_prev * f * (1.0 - f)
        da_all[t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        da_all[t, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da_all[t] @ wh.T
    dx = da_all @ wx.T
    dwx = x.T @ da_all
    h_shift = np.vstack([np.zeros((1, H)), h[:-1]])
    dwh = h_shift.T @ da_all
    db = da_all.sum(axis=0)
    return dx, dwx, dwh, db
