"""Pure-numpy kernels; reference for the compiled module.

LSTM gate layout along the last axis is [input, forget, cell, output].
"""
import math

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(xw, w_hh):
    """Run the recurrence from zero state.

    xw: (T, R, 4H) input projections including bias; w_hh: (H, 4H).
    Returns hidden states, cell states and activated gates.
    """
    T, R, G = xw.shape
    H = G // 4
    h = np.zeros((T, R, H))
    c = np.zeros((T, R, H))
    gates = np.empty((T, R, G))
    h_prev = np.zeros((R, H))
    c_prev = np.zeros((R, H))
    for t in range(T):
        a = xw[t] + h_prev @ w_hh
        g = gates[t]
        g[:, :2 * H] = _sigmoid(a[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        g[:, 3 * H:] = _sigmoid(a[:, 3 * H:])
        c_prev = g[:, H:2 * H] * c_prev + g[:, :H] * g[:, 2 * H:3 * H]
        h_prev = g[:, 3 * H:] * np.tanh(c_prev)
        c[t] = c_prev
        h[t] = h_prev
    return h, c, gates


def lstm_backward(dh, gates, c, w_hh):
    """Gradient of the loss w.r.t. the pre-activation gates, shape (T, R, 4H)."""
    T, R, G = gates.shape
    H = G // 4
    dgates = np.empty((T, R, G))
    dh_next = np.zeros((R, H))
    dc_next = np.zeros((R, H))
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(c[t])
        dht = dh[t] + dh_next
        dc = dc_next + dht * o * (1.0 - tc * tc)
        c_prev = c[t - 1] if t > 0 else 0.0
        d = dgates[t]
        d[:, :H] = dc * gg * i * (1.0 - i)
        d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
        d[:, 3 * H:] = dht * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ w_hh.T
    return dgates


def gelu(x):
    """tanh-approximated GELU and its derivative."""
    u = GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return y, dy
