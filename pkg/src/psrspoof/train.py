"""Paired training, thresholded evaluation and the layer sweep."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import Config
from .features import CompressedSequence, QuantizerParams, quantize
from .nn.model import DetectorModel, ModelConfig, two_class_softmax
from .spoofer import AttackKind, ScenarioPair

SUBSETS = ("Targeted", "Regional", "Total")


class NumericFailure(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float, param_norms: dict):
        worst = sorted(param_norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)
        summary = ", ".join(f"{k}={v:.3g}" for k, v in worst[:5])
        super().__init__(f"non-finite loss {loss} at step {step}; largest parameter norms: {summary}")
        self.step, self.loss, self.param_norms = step, loss, param_norms


@dataclass(frozen=True)
class TrainConfig:
    pair_batch_size: int = 2
    learning_rate: float = 3e-4
    max_steps: int = 2000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.pair_batch_size < 1 or self.max_steps < 0 or self.learning_rate < 0:
            raise ValueError("pair_batch_size must be positive, max_steps and learning_rate non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0 and self.grad_clip > 0):
            raise ValueError("invalid optimizer hyperparameters")

    @classmethod
    def from_config(cls, cfg: Config, seed: int) -> "TrainConfig":
        return cls(cfg.pair_batch_size, cfg.learning_rate, cfg.max_steps, seed, cfg.beta1, cfg.beta2,
                   cfg.adam_eps, cfg.grad_clip, cfg.checkpoint_every)


def model_config(cfg: Config, seed: int, variant: str | None = None, blocks: int | None = None,
                 max_epochs: int = 600) -> ModelConfig:
    K = int(round(cfg.duration_s / cfg.epoch_interval_s))
    return ModelConfig.from_variant(
        variant or cfg.variant, blocks=blocks or cfg.blocks, d_model=cfg.d_model,
        ffn_hidden=cfg.ffn_hidden, heads=cfg.heads, max_satellites=cfg.max_satellites,
        levels=cfg.quantizer_levels, mask_mode=cfg.mask_mode, max_epochs=max(max_epochs, K), seed=seed)


# -- data -----------------------------------------------------------------------

@dataclass
class EncodedSequence:
    """Compressed features of one sequence, ready for batching."""
    features: CompressedSequence
    labels: np.ndarray            # (K,) bool
    kind: AttackKind | None = None

    @classmethod
    def from_sequence(cls, seq, kind: AttackKind | None = None) -> "EncodedSequence":
        return cls(CompressedSequence.from_psr(seq.psr_m, seq.present), np.asarray(seq.labels, bool), kind)


@dataclass
class EncodedPair:
    spoofed: EncodedSequence
    clean: EncodedSequence

    @classmethod
    def from_pair(cls, pair: ScenarioPair) -> "EncodedPair":
        kind = pair.attack.kind
        clean = EncodedSequence.from_sequence(pair.clean, kind)
        clean.labels = np.zeros_like(clean.labels)
        return cls(EncodedSequence.from_sequence(pair.spoofed, kind), clean)


@dataclass
class Batch:
    probs: np.ndarray      # (B, K, L, N)
    presence: np.ndarray   # (B, K, L)
    targets: np.ndarray    # (B, K) bool, True = spoofed
    epochs: np.ndarray     # (B, K) bool, real (non-padding) epochs

    @property
    def size(self) -> int:
        return self.probs.shape[0]


def batch_sequences(seqs: Sequence[EncodedSequence], quantizer: QuantizerParams, L: int | None = None) -> Batch:
    K = max(s.labels.shape[0] for s in seqs)
    L = L or max(s.features.values.shape[1] for s in seqs)
    B, N = len(seqs), quantizer.N
    values = np.zeros((B, K, L))
    defined = np.zeros((B, K, L), dtype=bool)
    targets = np.zeros((B, K), dtype=bool)
    epochs = np.zeros((B, K), dtype=bool)
    for i, s in enumerate(seqs):
        k, l = s.features.values.shape
        values[i, :k, :l] = s.features.values
        defined[i, :k, :l] = s.features.defined
        targets[i, :k] = s.labels
        epochs[i, :k] = True
    probs = quantize(values, quantizer) * defined[..., None]
    return Batch(probs, defined.astype(float), targets, epochs)


def make_batch(pairs: Sequence[ScenarioPair | EncodedPair], quantizer: QuantizerParams,
               L: int | None = None) -> Batch:
    """Both members of every pair: the spoofed one with its labels, then the clean one."""
    seqs = []
    for p in pairs:
        ep = p if isinstance(p, EncodedPair) else EncodedPair.from_pair(p)
        seqs += [ep.spoofed, ep.clean]
    return batch_sequences(seqs, quantizer, L)


# -- loss and optimizer -----------------------------------------------------------

def cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean two-class cross-entropy over masked epochs and its gradient.

    Class 0 is "spoofed" (the score), class 1 is "clean".
    """
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    onehot = np.stack([targets, ~targets], axis=-1).astype(float)
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    w = mask.astype(float)[..., None]
    loss = -float((onehot * logp * w).sum()) / count
    grad = (np.exp(logp) - onehot) * w / count
    return loss, grad


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip: float | None = 1.0):
        self.lr, self.beta1, self.beta2, self.eps, self.clip = lr, beta1, beta2, eps, clip
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> float:
        """Update ``params`` in place; returns the pre-clip gradient norm."""
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
        scale = self.clip / norm if self.clip is not None and norm > self.clip else 1.0
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name in params:
            g = grads.get(name)
            if g is None:
                continue
            g = g * scale
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        return norm


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    model: DetectorModel
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    def loss_curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "grad_norm"])
        for i, (l, g) in enumerate(zip(self.losses, self.grad_norms)):
            w.writerow([i, repr(l), repr(g)])
        return buf.getvalue()


def batch_loss(model: DetectorModel, batch: Batch) -> tuple[float, np.ndarray, object]:
    logits, tape = model.forward(batch.probs, batch.presence)
    mask = batch.epochs & tape.valid
    loss, dlogits = cross_entropy(logits, batch.targets, mask)
    return loss, dlogits, tape


def train(model: DetectorModel, pairs: Sequence[EncodedPair], quantizer: QuantizerParams,
          cfg: TrainConfig, checkpoint_dir: str | Path | None = None,
          metadata: dict | None = None, progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam on paired batches drawn by a seeded epoch-wise shuffle."""
    if not pairs:
        raise ValueError("no training pairs")
    model.quantizer = quantizer
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.grad_clip)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    order = np.empty(0, dtype=int)
    result = TrainResult(model)
    L = model.config.max_satellites
    for step in range(cfg.max_steps):
        if order.size < cfg.pair_batch_size:
            order = np.concatenate([order, rng.permutation(len(pairs))])
        idx, order = order[:cfg.pair_batch_size], order[cfg.pair_batch_size:]
        batch = make_batch([pairs[i] for i in idx], quantizer, L)
        loss, dlogits, tape = batch_loss(model, batch)
        if not math.isfinite(loss):
            norms = {k: float(np.linalg.norm(v)) for k, v in model.params.items()}
            raise NumericFailure(step, loss, norms)
        grads = model.backward(tape, dlogits)
        result.grad_norms.append(opt.step(model.params, grads))
        result.losses.append(loss)
        if progress is not None:
            progress(step, loss)
        if checkpoint_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            path = Path(checkpoint_dir) / f"step_{step + 1:07d}.psrd"
            model.save(path, metadata)
            result.checkpoints.append(path)
    return result


# -- evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class SubsetMetrics:
    positives: int
    negatives: int
    false_positives: int
    false_negatives: int

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    @property
    def errors(self) -> int:
        return self.false_positives + self.false_negatives

    @property
    def err(self) -> float:
        return self.errors / self.total if self.total else 0.0

    @property
    def fa(self) -> float:
        return self.false_positives / self.negatives if self.negatives else 0.0

    @property
    def md(self) -> float:
        return self.false_negatives / self.positives if self.positives else 0.0

    @classmethod
    def from_predictions(cls, predicted: np.ndarray, targets: np.ndarray) -> "SubsetMetrics":
        predicted, targets = np.asarray(predicted, bool), np.asarray(targets, bool)
        return cls(int(targets.sum()), int((~targets).sum()),
                   int((predicted & ~targets).sum()), int((~predicted & targets).sum()))


@dataclass
class MetricsReport:
    subsets: dict[str, SubsetMetrics]
    threshold: float = 0.5

    CSV_HEADER = ("subset", "err", "fa", "md", "positives", "negatives")

    def __getitem__(self, name: str) -> SubsetMetrics:
        return self.subsets[name]

    def rows(self):
        for name in SUBSETS:
            if name in self.subsets:
                m = self.subsets[name]
                yield name, m.err, m.fa, m.md, m.positives, m.negatives

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for r in self.rows():
            w.writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3]), r[4], r[5]])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'subset':<10} {'err %':>8} {'FA %':>8} {'MD %':>8} {'pos':>8} {'neg':>8}"]
        for name, err, fa, md, pos, neg in self.rows():
            lines.append(f"{name:<10} {100 * err:8.3f} {100 * fa:8.3f} {100 * md:8.3f} {pos:8d} {neg:8d}")
        return "\n".join(lines)


def sequence_scores(model: DetectorModel, seqs: Sequence[EncodedSequence], quantizer: QuantizerParams,
                    batch_size: int = 4) -> list[np.ndarray]:
    """Per-epoch spoofing scores for every sequence, in order."""
    out = []
    for i in range(0, len(seqs), batch_size):
        chunk = seqs[i:i + batch_size]
        batch = batch_sequences(chunk, quantizer, model.config.max_satellites)
        logits, _ = model.forward(batch.probs, batch.presence)
        scores = two_class_softmax(logits)[..., 0]
        out += [scores[j, :s.labels.shape[0]] for j, s in enumerate(chunk)]
    return out


def metrics_from_scores(scores: Iterable[np.ndarray], seqs: Sequence[EncodedSequence],
                        threshold: float = 0.5) -> MetricsReport:
    """Per-epoch metrics: an epoch is flagged iff its score exceeds ``threshold``."""
    groups: dict[str, list] = {name: [] for name in SUBSETS}
    for sc, s in zip(scores, seqs):
        entry = (np.asarray(sc) > threshold, s.labels)
        groups["Total"].append(entry)
        if s.kind is AttackKind.TARGETED:
            groups["Targeted"].append(entry)
        elif s.kind is AttackKind.REGIONAL:
            groups["Regional"].append(entry)
    subsets = {}
    for name, items in groups.items():
        if items:
            subsets[name] = SubsetMetrics.from_predictions(np.concatenate([p for p, _ in items]),
                                                           np.concatenate([t for _, t in items]))
    return MetricsReport(subsets, threshold)


def evaluate(model: DetectorModel, testset: Sequence[EncodedSequence], threshold: float = 0.5,
             quantizer: QuantizerParams | None = None) -> MetricsReport:
    quantizer = quantizer or model.quantizer
    if quantizer is None:
        raise ValueError("model carries no quantizer; pass one explicitly")
    return metrics_from_scores(sequence_scores(model, testset, quantizer), testset, threshold)


# -- layer sweep ------------------------------------------------------------------

SWEEP_HEADER = ("variant", "N", "err", "fa", "md", "positives", "negatives", "targeted_err", "targeted_fa",
                "targeted_md", "regional_err", "regional_fa", "regional_md")


@dataclass(frozen=True)
class SweepRow:
    variant: str
    blocks: int
    report: MetricsReport


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    """One line per (variant, N) cell: total metrics, then the per-kind error rates."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        total = r.report["Total"]
        line = [r.variant, r.blocks, repr(total.err), repr(total.fa), repr(total.md), total.positives,
                total.negatives]
        for name in ("Targeted", "Regional"):
            m = r.report.subsets.get(name)
            line += [repr(m.err), repr(m.fa), repr(m.md)] if m else ["", "", ""]
        w.writerow(line)
    return buf.getvalue()


def layer_sweep(pairs: Sequence[EncodedPair], testset: Sequence[EncodedSequence], quantizer: QuantizerParams,
                cfg: Config, variants: Sequence[str], layers: Sequence[int], seed: int,
                threshold: float = 0.5, progress: Callable[[str], None] | None = None) -> list[SweepRow]:
    """Train and evaluate every (variant, N) cell on the same data and seed."""
    tcfg = TrainConfig.from_config(cfg, seed)
    rows = []
    for variant in variants:
        for n in layers:
            model = DetectorModel(model_config(cfg, seed, variant, n), quantizer=quantizer)
            train(model, pairs, quantizer, tcfg)
            rows.append(SweepRow(variant, n, evaluate(model, testset, threshold)))
            if progress is not None:
                progress(f"{variant} N={n}: err {100 * rows[-1].report['Total'].err:.3f}%")
    return rows
