"""Corpus-to-model glue shared by the command line and the end-to-end tests."""
from __future__ import annotations

import numpy as np

from .dataset import Corpus
from .features import QuantizerParams, pretrain_quantizer
from .train import EncodedPair, EncodedSequence


def load_training_pairs(corpus: Corpus) -> list[EncodedPair]:
    return [EncodedPair.from_pair(pair) for _, pair in corpus.pairs("train")]


def load_testset(corpus: Corpus) -> list[EncodedSequence]:
    return [EncodedSequence.from_sequence(seq, e.kind) for e, seq in corpus.test_sequences()]


def quantizer_samples(pairs: list[EncodedPair], count: int, seed: int) -> np.ndarray:
    """Uniform draw of ``count`` defined compressed values from both members of every pair."""
    pool = np.concatenate([s.features.values[s.features.defined]
                           for p in pairs for s in (p.spoofed, p.clean)])
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    if pool.size <= count:
        return pool
    return pool[np.sort(rng.choice(pool.size, size=count, replace=False))]


def fit_quantizer(pairs: list[EncodedPair], levels: int, epochs: int, samples: int,
                  seed: int) -> tuple[QuantizerParams, float]:
    data = quantizer_samples(pairs, samples, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(12,)))
    return pretrain_quantizer(data, N=levels, epochs=epochs, rng=rng)
