"""Pseudo-range preprocessing: second differences, log compression, soft quantization.

The quantizer maps a compressed scalar ``y`` to the probability vector
softmax(lambda_i * |y - q_i|) over N learnable levels ``q_i``.  Negative
sharpness favours the nearest levels.  It is pretrained once as an autoencoder
with a linear reconstruction head and then frozen.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

QUANTIZER_MAGIC = b"QNTZ"
QUANTIZER_VERSION = 1
MIN_CORPUS = 10_000


class QuantizerFormatError(ValueError):
    pass


def second_difference(psr: np.ndarray, present: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``psr[k] - 2 psr[k-1] + psr[k-2]`` along axis 0 where all three are present.

    Returns ``(d2, defined)``; ``d2`` is 0.0 wherever undefined.  Gaps are never
    bridged, so two present epochs must follow a dropout before ``d2`` resumes.
    """
    psr = np.asarray(psr, dtype=float)
    present = np.asarray(present, dtype=bool)
    if psr.shape[0] < 3:
        raise ValueError("need at least three epochs")
    defined = np.zeros_like(present)
    defined[2:] = present[2:] & present[1:-1] & present[:-2]
    d2 = np.zeros_like(psr)
    d2[2:] = psr[2:] - 2.0 * psr[1:-1] + psr[:-2]
    return np.where(defined, d2, 0.0), defined


def compress(x):
    """sign(x) * ln(1 + |x|)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.log1p(np.abs(x))


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class QuantizerParams:
    levels: np.ndarray      # (N,)
    sharpness: np.ndarray   # (N,)
    head_w: np.ndarray      # (N,) linear reconstruction weights
    head_b: float = 0.0

    @property
    def N(self) -> int:
        return len(self.levels)

    def reconstruct(self, probs: np.ndarray) -> np.ndarray:
        return probs @ self.head_w + self.head_b

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    def to_bytes(self) -> bytes:
        N = self.N
        head = QUANTIZER_MAGIC + struct.pack("<II", QUANTIZER_VERSION, N)
        arrays = [np.asarray(a, dtype="<f8").tobytes()
                  for a in (self.levels, self.sharpness, self.head_w)]
        return head + b"".join(arrays) + struct.pack("<d", float(self.head_b))

    @classmethod
    def from_bytes(cls, data: bytes) -> "QuantizerParams":
        if len(data) < 12 or data[:4] != QUANTIZER_MAGIC:
            raise QuantizerFormatError("not a quantizer file (bad magic)")
        version, N = struct.unpack_from("<II", data, 4)
        if version != QUANTIZER_VERSION:
            raise QuantizerFormatError(f"unsupported quantizer version {version}")
        need = 12 + 8 * (3 * N + 1)
        if len(data) != need:
            raise QuantizerFormatError(f"quantizer file has {len(data)} bytes, expected {need}")
        arr = np.frombuffer(data, dtype="<f8", count=3 * N + 1, offset=12).astype(float)
        return cls(arr[:N].copy(), arr[N:2 * N].copy(), arr[2 * N:3 * N].copy(), float(arr[-1]))

    @classmethod
    def load(cls, path: str | Path) -> "QuantizerParams":
        return cls.from_bytes(Path(path).read_bytes())


def quantize(y, p: QuantizerParams) -> np.ndarray:
    """Soft assignment of each value in ``y`` to the N levels; shape ``y.shape + (N,)``."""
    y = np.asarray(y, dtype=float)
    logits = p.sharpness * np.abs(y[..., None] - p.levels)
    return _softmax(logits)


def _quantizer_grads(y: np.ndarray, p: QuantizerParams):
    """MSE loss of the autoencoder and its gradients for a minibatch ``y``."""
    diff = y[:, None] - p.levels[None, :]
    a = np.abs(diff)
    probs = _softmax(p.sharpness * a)
    recon = probs @ p.head_w + p.head_b
    err = recon - y
    n = len(y)
    loss = float(np.mean(err**2))
    g_rec = 2.0 * err / n
    g_w = probs.T @ g_rec
    g_b = float(g_rec.sum())
    g_probs = g_rec[:, None] * p.head_w[None, :]
    g_logits = probs * (g_probs - (g_probs * probs).sum(axis=1, keepdims=True))
    g_lam = (g_logits * a).sum(axis=0)
    g_q = (g_logits * p.sharpness[None, :] * -np.sign(diff)).sum(axis=0)
    return loss, g_q, g_lam, g_w, g_b


def pretrain_quantizer(samples, N: int = 64, epochs: int = 30, rng: np.random.Generator | int = 0,
                       batch_size: int = 256, learning_rate: float = 3e-3,
                       initial_sharpness: float = -4.0) -> tuple[QuantizerParams, float]:
    """Fit levels, sharpness and the reconstruction head by minibatch Adam.

    Returns the parameters and the reconstruction RMSE over the corpus.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size < MIN_CORPUS:
        raise ValueError(f"quantizer corpus has {samples.size} samples, need at least {MIN_CORPUS}")
    rng = np.random.default_rng(rng)
    lo, hi = np.quantile(samples, [0.001, 0.999])
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    levels = np.linspace(lo, hi, N) if N > 1 else np.array([0.5 * (lo + hi)])
    p = QuantizerParams(levels, np.full(N, initial_sharpness), levels.copy(), 0.0)

    params = [p.levels, p.sharpness, p.head_w, np.array([p.head_b])]
    m = [np.zeros_like(a) for a in params]
    v = [np.zeros_like(a) for a in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    for epoch in range(epochs):
        order = rng.permutation(samples.size)
        # decay to a tenth over training for a clean final fit
        lr = learning_rate * 0.1 ** (epoch / max(epochs - 1, 1))
        for start in range(0, samples.size, batch_size):
            y = samples[order[start:start + batch_size]]
            p.head_b = float(params[3][0])
            _, gq, gl, gw, gb = _quantizer_grads(y, p)
            t += 1
            for i, g in enumerate((gq, gl, gw, np.array([gb]))):
                m[i] = b1 * m[i] + (1 - b1) * g
                v[i] = b2 * v[i] + (1 - b2) * g * g
                mh = m[i] / (1 - b1**t)
                vh = v[i] / (1 - b2**t)
                params[i] -= lr * mh / (np.sqrt(vh) + eps)
    p.head_b = float(params[3][0])
    rmse = quantizer_rmse(samples, p)
    return p, rmse


def quantizer_rmse(samples, p: QuantizerParams, chunk: int = 65536) -> float:
    samples = np.asarray(samples, dtype=float).ravel()
    sq = 0.0
    for i in range(0, samples.size, chunk):
        y = samples[i:i + chunk]
        sq += float(np.sum((p.reconstruct(quantize(y, p)) - y) ** 2))
    return float(np.sqrt(sq / samples.size))


@dataclass
class CompressedSequence:
    """Compressed second differences and their validity mask, both (K, L)."""
    values: np.ndarray
    defined: np.ndarray

    @classmethod
    def from_psr(cls, psr: np.ndarray, present: np.ndarray) -> "CompressedSequence":
        d2, defined = second_difference(psr, present)
        return cls(compress(d2), defined)


@dataclass
class FeatureTensor:
    """Per-epoch, per-channel quantizer probabilities plus the presence indicator.

    ``probs`` is (K, L, N), zero where undefined; ``presence`` is (K, L) in {0, 1}.
    """
    probs: np.ndarray
    presence: np.ndarray
    valid_from: np.ndarray

    @property
    def channels(self) -> np.ndarray:
        """(K, L, N + 1) block: probabilities followed by the indicator."""
        return np.concatenate([self.probs, self.presence[..., None]], axis=-1)


def features_from_compressed(c: CompressedSequence, p: QuantizerParams) -> FeatureTensor:
    probs = quantize(c.values, p) * c.defined[..., None]
    presence = c.defined.astype(float)
    first = np.where(c.defined.any(axis=0), c.defined.argmax(axis=0), -1)
    return FeatureTensor(probs, presence, first)


def build_features(seq, p: QuantizerParams) -> FeatureTensor:
    return features_from_compressed(CompressedSequence.from_psr(seq.psr_m, seq.present), p)
