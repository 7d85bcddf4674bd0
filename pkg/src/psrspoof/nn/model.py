"""Online spoofing detectors: LSTM or attention encoders with early or late fusion.

Early fusion concatenates every channel's feature block per epoch and runs one
sequence model.  Late fusion embeds each (epoch, channel) cell separately,
adds time and channel-index embeddings, and combines per-channel outputs with
a learned softmax weighting.  Both emit two logits per epoch; the first
softmax component is the spoofing score.
"""
from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..features import QuantizerParams
from .layers import (CausalSelfAttention, EncoderBlock, Linear, LSTMLayer, SatelliteTimeAttention,
                     masked_softmax, softmax_backward)

CHECKPOINT_MAGIC = b"PSRD"
CHECKPOINT_VERSION = 1
ENCODERS = ("lstm", "mha")
FUSIONS = ("early", "late")
MASK_MODES = ("attention-mask", "input-indicator")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "mha"
    fusion: str = "early"
    blocks: int = 2
    d_model: int = 128
    ffn_hidden: int = 1024
    heads: int = 8
    max_satellites: int = 16
    levels: int = 64
    mask_mode: str = "attention-mask"
    max_epochs: int = 600
    seed: int = 0

    def __post_init__(self):
        if self.encoder not in ENCODERS or self.fusion not in FUSIONS:
            raise ValueError(f"unknown variant {self.encoder}-{self.fusion}")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {self.mask_mode!r}")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if not 1 <= self.blocks <= 8:
            raise ValueError("blocks must be in [1, 8]")

    @classmethod
    def from_variant(cls, variant: str, **kw) -> "ModelConfig":
        encoder, fusion = variant.lower().split("-")
        return cls(encoder=encoder, fusion=fusion, **kw)

    @property
    def variant(self) -> str:
        return f"{self.encoder}-{self.fusion}"

    @property
    def uses_attention_mask(self) -> bool:
        return self.fusion == "late" and self.encoder == "mha" and self.mask_mode == "attention-mask"

    @property
    def channel_width(self) -> int:
        """Per-channel input width: probabilities, plus the indicator unless masked."""
        return self.levels if self.uses_attention_mask else self.levels + 1

    @property
    def input_width(self) -> int:
        if self.fusion == "early":
            return self.max_satellites * (self.levels + 1)
        return self.channel_width


@dataclass
class Tape:
    """Forward-pass state needed by ``backward``."""
    caches: dict
    valid: np.ndarray  # (B, K) epochs with at least one present channel


class DetectorModel:
    def __init__(self, config: ModelConfig, params: dict | None = None,
                 quantizer: QuantizerParams | None = None):
        self.config = config
        self.quantizer = quantizer
        c = config
        d = c.d_model
        self.embed = Linear("embed", c.input_width, d)
        blocks = []
        for i in range(c.blocks):
            prefix = f"blocks.{i}"
            if c.encoder == "lstm":
                sub = LSTMLayer(f"{prefix}.lstm", d)
            elif c.fusion == "early":
                sub = CausalSelfAttention(f"{prefix}.attn", d, c.heads)
            else:
                sub = SatelliteTimeAttention(f"{prefix}.attn", d, c.heads)
            blocks.append(EncoderBlock(prefix, sub, d, c.ffn_hidden))
        self.blocks = blocks
        self.head = Linear("head", d, 2, init_scale=0.01)
        self.weight_head = Linear("weight", d, 1, init_scale=0.01) if c.fusion == "late" else None
        self.params = params if params is not None else self.init_params()

    def init_params(self) -> dict:
        rng = np.random.default_rng(self.config.seed)
        c = self.config
        p = dict(self.embed.init(rng))
        p["pos.time"] = rng.normal(0.0, 0.1, (c.max_epochs, c.d_model))
        if c.fusion == "late":
            p["pos.sat"] = rng.normal(0.0, 0.1, (c.max_satellites, c.d_model))
        for blk in self.blocks:
            p.update(blk.init(rng))
        p.update(self.head.init(rng))
        if self.weight_head is not None:
            p.update(self.weight_head.init(rng))
        return p

    def copy(self) -> "DetectorModel":
        return DetectorModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.quantizer)

    # -- inputs --------------------------------------------------------------
    def inputs(self, probs: np.ndarray, presence: np.ndarray) -> np.ndarray:
        """Model input tensor from (B, K, L, N) probabilities and (B, K, L) presence."""
        c = self.config
        B, K, L, N = probs.shape
        if L > c.max_satellites:
            raise ValueError(f"{L} channels exceed max_satellites={c.max_satellites}")
        if N != c.levels:
            raise ValueError(f"features have {N} levels, model expects {c.levels}")
        if K > c.max_epochs:
            raise ValueError(f"{K} epochs exceed the time-embedding table ({c.max_epochs})")
        if L < c.max_satellites:
            pad = c.max_satellites - L
            probs = np.concatenate([probs, np.zeros((B, K, pad, N))], axis=2)
            presence = np.concatenate([presence, np.zeros((B, K, pad))], axis=2)
        # absent slots carry no information whatever values they hold
        probs = probs * (presence[..., None] > 0)
        if c.uses_attention_mask:
            block = probs
        else:
            block = np.concatenate([probs, presence[..., None]], axis=-1)
        if c.fusion == "early":
            return block.reshape(B, K, -1), presence
        return block, presence

    # -- forward/backward ----------------------------------------------------
    def forward(self, probs: np.ndarray, presence: np.ndarray) -> tuple[np.ndarray, Tape]:
        """Epoch logits (B, K, 2) and the tape for ``backward``."""
        x, presence = self.inputs(np.asarray(probs, float), np.asarray(presence, float))
        present = presence > 0
        valid = present.any(axis=-1)
        p = self.params
        K = x.shape[1]
        caches = {}
        e, caches["embed"] = self.embed.forward(p, x)
        if self.config.fusion == "early":
            e = e + p["pos.time"][:K]
            h = e
            block_caches = []
            for blk in self.blocks:
                h, cb = blk.forward(p, h)
                block_caches.append(cb)
            logits, caches["head"] = self.head.forward(p, h)
            caches["blocks"] = block_caches
            return logits, Tape(caches, valid)

        e = e + p["pos.time"][:K][None, :, None, :] + p["pos.sat"][None, None, :, :]
        if self.config.encoder == "lstm":
            # channels never present in a sequence cannot affect the output
            active = present.any(axis=1)                     # (B, L)
            rows = np.nonzero(active)
            h = e.transpose(0, 2, 1, 3)[rows]                # (R, K, d)
            caches["rows"] = (rows, e.shape)
            key_mask = None
        else:
            h = e
            key_mask = present if self.config.uses_attention_mask else None
        block_caches = []
        for blk in self.blocks:
            h, cb = blk.forward(p, h, key_mask)
            block_caches.append(cb)
        caches["blocks"] = block_caches
        y, caches["head"] = self.head.forward(p, h)
        w, caches["weight"] = self.weight_head.forward(p, h)
        w = w[..., 0]
        if self.config.encoder == "lstm":
            B, _, L, _ = e.shape
            y_full = np.zeros((B, L, K, 2))
            w_full = np.zeros((B, L, K))
            y_full[rows], w_full[rows] = y, w
            y, w = y_full.transpose(0, 2, 1, 3), w_full.transpose(0, 2, 1)
        logits, caches["aggregate"] = late_fusion_aggregate(y, w, present)
        return logits, Tape(caches, valid)

    def backward(self, tape: Tape, dlogits: np.ndarray) -> dict:
        p = self.params
        caches = tape.caches
        grads: dict = {}
        if self.config.fusion == "early":
            dh = self.head.backward(p, caches["head"], dlogits, grads)
            for blk, cb in zip(reversed(self.blocks), reversed(caches["blocks"])):
                dh = blk.backward(p, cb, dh, grads)
            K = dh.shape[1]
            g_time = np.zeros_like(p["pos.time"])
            g_time[:K] = dh.sum(axis=0)
            grads["pos.time"] = g_time
            self.embed.backward(p, caches["embed"], dh, grads)
            return grads

        dy, dw = late_fusion_aggregate_backward(caches["aggregate"], dlogits)
        if self.config.encoder == "lstm":
            rows, eshape = caches["rows"]
            dy = dy.transpose(0, 2, 1, 3)[rows]
            dw = dw.transpose(0, 2, 1)[rows]
        dh = self.head.backward(p, caches["head"], dy, grads)
        dh = dh + self.weight_head.backward(p, caches["weight"], dw[..., None], grads)
        for blk, cb in zip(reversed(self.blocks), reversed(caches["blocks"])):
            dh = blk.backward(p, cb, dh, grads)
        if self.config.encoder == "lstm":
            B, K, L, d = eshape
            de = np.zeros((B, L, K, d))
            de[rows] = dh
            de = de.transpose(0, 2, 1, 3)
        else:
            de = dh
        K = de.shape[1]
        g_time = np.zeros_like(p["pos.time"])
        g_time[:K] = de.sum(axis=(0, 2))
        grads["pos.time"] = g_time
        grads["pos.sat"] = de.sum(axis=(0, 1))
        self.embed.backward(p, caches["embed"], de, grads)
        return grads

    def scores(self, probs: np.ndarray, presence: np.ndarray) -> np.ndarray:
        """Spoofing score per epoch, shape (B, K)."""
        logits, _ = self.forward(probs, presence)
        return two_class_softmax(logits)[..., 0]

    # -- persistence ---------------------------------------------------------
    def save(self, path: str | Path, metadata: dict | None = None) -> None:
        Path(path).write_bytes(self.to_bytes(metadata))

    def to_bytes(self, metadata: dict | None = None) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<I", CHECKPOINT_VERSION))
        meta = {**asdict(self.config), **(metadata or {})}
        block = "".join(f"{k} = {v}\n" for k, v in meta.items()).encode()
        buf.write(struct.pack("<I", len(block)))
        buf.write(block)
        arrays = dict(self.params)
        if self.quantizer is not None:
            q = self.quantizer
            arrays.update({"quantizer.levels": q.levels, "quantizer.sharpness": q.sharpness,
                           "quantizer.head_w": q.head_w, "quantizer.head_b": np.array([q.head_b])})
        buf.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            nb = name.encode()
            buf.write(struct.pack("<H", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def load(cls, path: str | Path) -> tuple["DetectorModel", dict]:
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["DetectorModel", dict]:
        try:
            return _decode_checkpoint(cls, data)
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def _decode_checkpoint(cls, data: bytes):
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a detector checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", data, 8)
    text = data[12:12 + n].decode()
    meta = {}
    for line in text.splitlines():
        k, v = line.split(" = ", 1)
        meta[k] = v
    off = 12 + n
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + ln].decode()
        off += ln
        (nd,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{nd}I", data, off)
        off += 4 * nd
        size = int(np.prod(shape)) if nd else 1
        if off + 8 * size > len(data):
            raise CheckpointError("checkpoint truncated")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(float)
        off += 8 * size
    if off != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    kw = {}
    for f in fields(ModelConfig):
        if f.name in meta:
            kw[f.name] = int(meta[f.name]) if f.type in (int, "int") else meta[f.name]
    config = ModelConfig(**kw)
    quantizer = None
    if "quantizer.levels" in arrays:
        quantizer = QuantizerParams(arrays.pop("quantizer.levels"), arrays.pop("quantizer.sharpness"),
                                    arrays.pop("quantizer.head_w"), float(arrays.pop("quantizer.head_b")[0]))
    model = cls(config, arrays, quantizer)
    expected = set(model.init_params_shapes())
    if set(arrays) != expected:
        raise CheckpointError("checkpoint parameters do not match its config")
    extra = {k: v for k, v in meta.items() if k not in {f.name for f in fields(ModelConfig)}}
    return model, extra


def _param_shapes(self):
    shapes = {}
    rng = np.random.default_rng(0)
    for layer in [self.embed, *self.blocks, self.head] + ([self.weight_head] if self.weight_head else []):
        shapes.update({k: v.shape for k, v in layer.init(rng).items()})
    shapes["pos.time"] = (self.config.max_epochs, self.config.d_model)
    if self.config.fusion == "late":
        shapes["pos.sat"] = (self.config.max_satellites, self.config.d_model)
    return shapes


DetectorModel.init_params_shapes = _param_shapes


def two_class_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def late_fusion_aggregate(y: np.ndarray, w: np.ndarray, present: np.ndarray):
    """Softmax-weighted average of per-channel logit pairs over present channels.

    ``y`` (..., L, 2), ``w`` (..., L), ``present`` (..., L).  Epochs with no
    present channel get zero logits (score 0.5).
    """
    v = masked_softmax(w, present)
    combined = (v[..., None] * y).sum(axis=-2)
    return combined, (y, v)


def late_fusion_aggregate_backward(cache, dcombined: np.ndarray):
    y, v = cache
    dy = v[..., None] * dcombined[..., None, :]
    dv = (y * dcombined[..., None, :]).sum(axis=-1)
    return dy, softmax_backward(v, dv)


def late_fusion_scores(y: np.ndarray, w: np.ndarray, present: np.ndarray):
    """Aggregated score and an "informative" flag per epoch."""
    combined, _ = late_fusion_aggregate(y, w, present)
    return two_class_softmax(combined)[..., 0], np.asarray(present).any(axis=-1)
