"""Layers with explicit forward and backward passes.

Every layer owns a name prefix and reads its weights from a flat parameter
dict.  ``forward`` returns ``(output, cache)``; ``backward`` takes the cache
and the output gradient, accumulates weight gradients into ``grads`` and
returns the input gradient.
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels

LN_EPS = 1e-5


def _acc(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


class Linear:
    def __init__(self, prefix: str, din: int, dout: int, init_scale: float | None = None):
        self.prefix, self.din, self.dout = prefix, din, dout
        self.init_scale = init_scale

    def init(self, rng: np.random.Generator) -> dict:
        scale = self.init_scale if self.init_scale is not None else 1.0 / math.sqrt(self.din)
        return {f"{self.prefix}.w": rng.normal(0.0, scale, (self.din, self.dout)),
                f"{self.prefix}.b": np.zeros(self.dout)}

    def forward(self, p, x):
        return x @ p[f"{self.prefix}.w"] + p[f"{self.prefix}.b"], x

    def backward(self, p, x, dy, grads):
        _acc(grads, f"{self.prefix}.w", _flat(x).T @ _flat(dy))
        _acc(grads, f"{self.prefix}.b", _flat(dy).sum(axis=0))
        return dy @ p[f"{self.prefix}.w"].T


def layer_norm(x: np.ndarray, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    return xc * inv, inv


class LayerNorm:
    def __init__(self, prefix: str, d: int):
        self.prefix, self.d = prefix, d

    def init(self, rng) -> dict:
        return {f"{self.prefix}.g": np.ones(self.d), f"{self.prefix}.b": np.zeros(self.d)}

    def forward(self, p, x):
        xh, inv = layer_norm(x)
        return xh * p[f"{self.prefix}.g"] + p[f"{self.prefix}.b"], (xh, inv)

    def backward(self, p, cache, dy, grads):
        xh, inv = cache
        _acc(grads, f"{self.prefix}.g", _flat(dy * xh).sum(axis=0))
        _acc(grads, f"{self.prefix}.b", _flat(dy).sum(axis=0))
        dxh = dy * p[f"{self.prefix}.g"]
        return inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                      - xh * (dxh * xh).mean(axis=-1, keepdims=True))


def gelu(x):
    """tanh-approximated GELU and its derivative."""
    return kernels.gelu(x)


class FeedForward:
    def __init__(self, prefix: str, d: int, hidden: int):
        self.fc1 = Linear(f"{prefix}.fc1", d, hidden)
        self.fc2 = Linear(f"{prefix}.fc2", hidden, d)

    def init(self, rng) -> dict:
        return {**self.fc1.init(rng), **self.fc2.init(rng)}

    def forward(self, p, x):
        h, c1 = self.fc1.forward(p, x)
        a, da = gelu(h)
        y, c2 = self.fc2.forward(p, a)
        return y, (c1, da, c2)

    def backward(self, p, cache, dy, grads):
        c1, da, c2 = cache
        dh = self.fc2.backward(p, c2, dy, grads) * da
        return self.fc1.backward(p, c1, dh, grads)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``mask``; all-masked rows give zeros."""
    z = np.where(mask, logits, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(z - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def softmax_backward(a: np.ndarray, da: np.ndarray) -> np.ndarray:
    return a * (da - (a * da).sum(axis=-1, keepdims=True))


class _HeadProjections:
    """Shared q/k/v and output projections for the attention layers."""

    def __init__(self, prefix: str, d: int, heads: int):
        if d % heads:
            raise ValueError("d_model must be divisible by the head count")
        self.prefix, self.d, self.heads = prefix, d, heads
        self.dh = d // heads
        self.qkv = Linear(f"{prefix}.qkv", d, 3 * d)
        self.out = Linear(f"{prefix}.out", d, d)

    def init(self, rng) -> dict:
        return {**self.qkv.init(rng), **self.out.init(rng)}

    def split(self, p, x):
        """(..., d) -> three arrays (..., H, dh)."""
        y, cache = self.qkv.forward(p, x)
        y = y.reshape(x.shape[:-1] + (3, self.heads, self.dh))
        return y[..., 0, :, :], y[..., 1, :, :], y[..., 2, :, :], cache

    def merge_grad(self, p, cache, dq, dk, dv, grads):
        dy = np.stack([dq, dk, dv], axis=-3)
        dy = dy.reshape(dy.shape[:-3] + (3 * self.d,))
        return self.qkv.backward(p, cache, dy, grads)


class CausalSelfAttention(_HeadProjections):
    """Multi-head self-attention over time with a causal mask.

    Input (B, K, d).  ``key_mask`` (B, K) marks admissible keys; queries whose
    admissible set is empty output zeros before the output projection.
    """

    def forward(self, p, x, key_mask=None):
        B, K, _ = x.shape
        q, k, v, cqkv = self.split(p, x)
        q, k, v = (a.transpose(0, 2, 1, 3) for a in (q, k, v))  # (B, H, K, dh)
        mask = np.tril(np.ones((K, K), dtype=bool))[None, None]
        if key_mask is not None:
            mask = mask & key_mask[:, None, None, :]
        scale = 1.0 / math.sqrt(self.dh)
        att = masked_softmax(q @ k.transpose(0, 1, 3, 2) * scale, mask)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(B, K, self.d)
        y, cout = self.out.forward(p, o)
        return y, (cqkv, q, k, v, att, cout)

    def backward(self, p, cache, dy, grads):
        cqkv, q, k, v, att, cout = cache
        B, H, K, dh = q.shape
        do = self.out.backward(p, cout, dy, grads)
        do = do.reshape(B, K, H, dh).transpose(0, 2, 1, 3)
        dv = att.transpose(0, 1, 3, 2) @ do
        dlog = softmax_backward(att, do @ v.transpose(0, 1, 3, 2)) / math.sqrt(dh)
        dq = dlog @ k
        dk = dlog.transpose(0, 1, 3, 2) @ q
        back = lambda a: a.transpose(0, 2, 1, 3)
        return self.merge_grad(p, cqkv, back(dq), back(dk), back(dv), grads)


class SatelliteTimeAttention(_HeadProjections):
    """Self-attention over a (time, satellite) grid for late fusion.

    Input (B, K, L, d).  Query (k, s) attends to keys (k' <= k, s) and to
    (k, s') for s' != s, under one joint softmax.  ``key_mask`` (B, K, L)
    removes keys.  Attention maps are recomputed in the backward pass, one
    (batch, head) slice at a time, so memory stays O(L K^2) per slice.
    """

    def _slice_attention(self, q, k, km):
        # q, k: (K, L, dh); km: (K, L)
        K, L, _ = q.shape
        scale = 1.0 / math.sqrt(self.dh)
        qt, kt = q.transpose(1, 0, 2), k.transpose(1, 0, 2)          # (L, K, dh)
        lt = qt @ kt.transpose(0, 2, 1) * scale                       # (L, K, K)
        mt = np.tril(np.ones((K, K), dtype=bool))[None] & km.T[:, None, :]
        ls = q @ k.transpose(0, 2, 1) * scale                         # (K, L, L)
        ms = ~np.eye(L, dtype=bool)[None] & km[:, None, :]
        zt = np.where(mt, lt, -np.inf)
        zs = np.where(ms, ls, -np.inf)
        m = np.maximum(zt.max(axis=-1).T, zs.max(axis=-1))            # (K, L)
        m = np.where(np.isfinite(m), m, 0.0)
        et = np.where(mt, np.exp(zt - m.T[:, :, None]), 0.0)
        es = np.where(ms, np.exp(zs - m[:, :, None]), 0.0)
        z = et.sum(axis=-1).T + es.sum(axis=-1)
        z = np.where(z > 0, z, 1.0)
        at = et / z.T[:, :, None]
        as_ = es / z[:, :, None]
        return at, as_

    def forward(self, p, x, key_mask=None):
        B, K, L, _ = x.shape
        q, k, v, cqkv = self.split(p, x)          # (B, K, L, H, dh)
        km = np.ones((B, K, L), dtype=bool) if key_mask is None else key_mask
        o = np.empty_like(q)
        for b in range(B):
            for h in range(self.heads):
                at, as_ = self._slice_attention(q[b, :, :, h], k[b, :, :, h], km[b])
                vb = v[b, :, :, h]
                o[b, :, :, h] = (at @ vb.transpose(1, 0, 2)).transpose(1, 0, 2) + as_ @ vb
        y, cout = self.out.forward(p, o.reshape(B, K, L, self.d))
        return y, (cqkv, q, k, v, km, cout)

    def attention_weights(self, p, x, key_mask=None):
        """Per-(batch, head) attention maps ``(time part, satellite part)`` for inspection."""
        q, k, _, _ = self.split(p, x)
        B, K, L = x.shape[:3]
        km = np.ones((B, K, L), dtype=bool) if key_mask is None else key_mask
        return [[self._slice_attention(q[b, :, :, h], k[b, :, :, h], km[b])
                 for h in range(self.heads)] for b in range(q.shape[0])]

    def backward(self, p, cache, dy, grads):
        cqkv, q, k, v, km, cout = cache
        B, K, L, H, dh = q.shape
        do = self.out.backward(p, cout, dy, grads).reshape(B, K, L, H, dh)
        dq, dk, dv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
        scale = 1.0 / math.sqrt(dh)
        for b in range(B):
            for h in range(H):
                qs, ks, vs = q[b, :, :, h], k[b, :, :, h], v[b, :, :, h]
                at, as_ = self._slice_attention(qs, ks, km[b])
                dos = do[b, :, :, h]                                  # (K, L, dh)
                dot = dos.transpose(1, 0, 2)                          # (L, K, dh)
                vt = vs.transpose(1, 0, 2)
                dat = dot @ vt.transpose(0, 2, 1)                     # (L, K, K)
                das = dos @ vs.transpose(0, 2, 1)                     # (K, L, L)
                r = (at * dat).sum(axis=-1).T + (as_ * das).sum(axis=-1)   # (K, L)
                dlt = at * (dat - r.T[:, :, None]) * scale
                dls = as_ * (das - r[:, :, None]) * scale
                qt, kt = qs.transpose(1, 0, 2), ks.transpose(1, 0, 2)
                dq[b, :, :, h] = (dlt @ kt).transpose(1, 0, 2) + dls @ ks
                dk[b, :, :, h] = (dlt.transpose(0, 2, 1) @ qt).transpose(1, 0, 2) + dls.transpose(0, 2, 1) @ qs
                dv[b, :, :, h] = (at.transpose(0, 2, 1) @ dot).transpose(1, 0, 2) + as_.transpose(0, 2, 1) @ dos
        return self.merge_grad(p, cqkv, dq, dk, dv, grads)


class LSTMLayer:
    """Single-layer LSTM, hidden size = input size, zero initial state.

    Input (R, K, d): R independent sequences of K steps.
    """

    def __init__(self, prefix: str, d: int):
        self.prefix, self.d = prefix, d

    def init(self, rng) -> dict:
        s = 1.0 / math.sqrt(self.d)
        b = np.zeros(4 * self.d)
        b[self.d:2 * self.d] = 1.0  # forget-gate bias
        return {f"{self.prefix}.w_ih": rng.uniform(-s, s, (self.d, 4 * self.d)),
                f"{self.prefix}.w_hh": rng.uniform(-s, s, (self.d, 4 * self.d)),
                f"{self.prefix}.b": b}

    def forward(self, p, x, key_mask=None):
        pre = self.prefix
        xw = x @ p[f"{pre}.w_ih"] + p[f"{pre}.b"]                    # (R, K, 4d)
        h, c, gates = kernels.lstm_forward(np.ascontiguousarray(xw.transpose(1, 0, 2)),
                                           p[f"{pre}.w_hh"])
        return h.transpose(1, 0, 2), (x, h, c, gates)

    def backward(self, p, cache, dy, grads):
        pre = self.prefix
        x, h, c, gates = cache
        dgates = kernels.lstm_backward(np.ascontiguousarray(dy.transpose(1, 0, 2)), gates, c,
                                       p[f"{pre}.w_hh"])              # (K, R, 4d)
        h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]], axis=0)
        _acc(grads, f"{pre}.w_hh", _flat(h_prev).T @ _flat(dgates))
        dxw = dgates.transpose(1, 0, 2)
        _acc(grads, f"{pre}.w_ih", _flat(x).T @ _flat(dxw))
        _acc(grads, f"{pre}.b", _flat(dxw).sum(axis=0))
        return dxw @ p[f"{pre}.w_ih"].T


class EncoderBlock:
    """y = LN(x + Sub(x)); out = LN(y + FFN(y))."""

    def __init__(self, prefix: str, sub, d: int, hidden: int):
        self.sub = sub
        self.ln1 = LayerNorm(f"{prefix}.ln1", d)
        self.ffn = FeedForward(f"{prefix}.ffn", d, hidden)
        self.ln2 = LayerNorm(f"{prefix}.ln2", d)

    def init(self, rng) -> dict:
        return {**self.sub.init(rng), **self.ln1.init(rng), **self.ffn.init(rng), **self.ln2.init(rng)}

    def forward(self, p, x, key_mask=None):
        s, cs = self.sub.forward(p, x, key_mask)
        y, c1 = self.ln1.forward(p, x + s)
        f, cf = self.ffn.forward(p, y)
        out, c2 = self.ln2.forward(p, y + f)
        return out, (cs, c1, cf, c2)

    def backward(self, p, cache, dout, grads):
        cs, c1, cf, c2 = cache
        dz = self.ln2.backward(p, c2, dout, grads)
        dy = dz + self.ffn.backward(p, cf, dz, grads)
        du = self.ln1.backward(p, c1, dy, grads)
        return du + self.sub.backward(p, cs, du, grads)
