import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psrspoof.features import (QuantizerFormatError, QuantizerParams, build_features, compress,
                               pretrain_quantizer, quantize, quantizer_rmse, second_difference)
from psrspoof.signal import PsrSequence


def _col(x):
    x = np.asarray(x, float)[:, None]
    return x, np.ones_like(x, dtype=bool)


def test_second_difference_polynomials():
    k = np.arange(20.0)
    for series, want in ((np.full(20, 7.0), 0.0), (3.0 * k - 2, 0.0), (0.5 * 4.0 * k**2, 4.0)):
        d2, ok = second_difference(*_col(series))
        assert not ok[:2].any() and ok[2:].all()
        np.testing.assert_allclose(d2[2:, 0], want, atol=1e-12)


def test_second_difference_does_not_bridge_gaps():
    x, pres = _col(np.arange(12.0) ** 2)
    pres[5, 0] = False
    d2, ok = second_difference(x, pres)
    assert ok[:, 0].tolist() == [False, False, True, True, True, False, False, False,
                                 True, True, True, True]
    assert np.all(d2[~ok] == 0.0)
    with pytest.raises(ValueError):
        second_difference(np.zeros((2, 1)), np.ones((2, 1), bool))


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.lists(st.booleans(), min_size=3, max_size=40))
@settings(max_examples=100, deadline=None)
def test_affine_series_second_difference_is_exactly_zero(a, b, mask):
    k = np.arange(len(mask), dtype=float)
    # exactly representable affine samples
    a, b = round(a), round(b)
    d2, ok = second_difference((a * k + b)[:, None], np.array(mask)[:, None])
    assert np.all(d2[ok] == 0.0)


def test_compress_identities():
    assert compress(0.0) == 0.0
    assert compress(math.e - 1) == 1.0
    assert compress(-(math.e - 1)) == -1.0
    x = np.random.default_rng(0).normal(0, 100, 10_000)
    np.testing.assert_array_equal(compress(-x), -compress(x))
    assert np.all(np.abs(compress(x)) <= np.abs(x))
    xs = np.sort(x)
    assert np.all(np.diff(compress(xs)) >= 0)


def _params(levels, lam):
    levels = np.asarray(levels, float)
    return QuantizerParams(levels, np.full(len(levels), float(lam)), levels.copy(), 0.0)


def test_quantize_examples():
    np.testing.assert_array_equal(quantize(2.0, _params([0.3], -1)), [1.0])
    p = _params([-1.0, 0.0, 2.0, 5.0], -1)
    assert quantize(2.0, p).argmax() == 2
    np.testing.assert_allclose(quantize(1.3, _params([-1.0, 0.0, 2.0, 5.0], 0)), 0.25)


@given(st.floats(-20, 20))
@settings(max_examples=100, deadline=None)
def test_quantize_sums_to_one_and_nearest_wins(y):
    p = _params(np.linspace(-5, 5, 16), -4)
    probs = quantize(y, p)
    assert abs(probs.sum() - 1.0) < 1e-6 and np.all(probs > 0)
    assert probs.argmax() == np.abs(p.levels - y).argmin() or \
        np.isclose(np.sort(np.abs(p.levels - y))[0], np.sort(np.abs(p.levels - y))[1])


def test_quantize_shift_invariance():
    p = _params(np.linspace(-2, 2, 9), -3)
    y = np.linspace(-3, 3, 50)
    base = quantize(y, p)
    # adding c to every logit: equivalent to the softmax of shifted logits
    logits = p.sharpness * np.abs(y[:, None] - p.levels) + 7.5
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    np.testing.assert_allclose(base, e / e.sum(axis=1, keepdims=True), rtol=1e-12)


def test_pretrain_uniform_corpus_rmse():
    rng = np.random.default_rng(0)
    samples = rng.uniform(-5, 5, 100_000)
    p, rmse = pretrain_quantizer(samples, N=64, epochs=10, rng=1)
    assert rmse < 0.05
    assert abs(p.reconstruct(quantize(0.0, p))) < 2 * rmse
    held = rng.uniform(-5, 5, 20_000)
    assert quantizer_rmse(held, p) < 1.5 * rmse


def test_pretrain_single_value_corpus():
    p, rmse = pretrain_quantizer(np.full(10_000, 0.7), N=8, epochs=5, rng=0)
    assert rmse < 1e-3


def test_pretrain_rejects_small_corpus():
    with pytest.raises(ValueError):
        pretrain_quantizer(np.zeros(100))


def test_pretrain_is_deterministic():
    s = np.random.default_rng(2).uniform(-1, 1, 10_000)
    a, _ = pretrain_quantizer(s, N=8, epochs=2, rng=4)
    b, _ = pretrain_quantizer(s, N=8, epochs=2, rng=4)
    assert a.to_bytes() == b.to_bytes()


def test_quantizer_file_round_trip(tmp_path, small_quantizer):
    path = tmp_path / "q.qntz"
    small_quantizer.save(path)
    data = path.read_bytes()
    assert data[:4] == b"QNTZ"
    assert len(data) == 12 + 8 * (3 * small_quantizer.N + 1)
    back = QuantizerParams.load(path)
    assert back.to_bytes() == data
    with pytest.raises(QuantizerFormatError):
        QuantizerParams.from_bytes(data[:-3])
    with pytest.raises(QuantizerFormatError):
        QuantizerParams.from_bytes(b"XXXX" + data[4:])


def test_build_features_absence_and_indicator(small_quantizer):
    K, L = 30, 3
    psr = np.tile(np.arange(K, dtype=float)[:, None] * 50.0, (1, L))
    pres = np.ones((K, L), bool)
    pres[:, 2] = False
    pres[10, 0] = False
    seq = PsrSequence(np.where(pres, psr, 0.0), pres, np.zeros(K, bool), 0)
    ft = build_features(seq, small_quantizer)
    assert ft.probs.shape == (K, L, small_quantizer.N)
    assert not ft.presence[:, 2].any() and not ft.probs[:, 2].any()
    assert ft.presence[11:13, 0].sum() == 0 and ft.presence[13, 0] == 1
    defined = ft.presence > 0
    np.testing.assert_allclose(ft.probs[defined].sum(-1), 1.0, atol=1e-6)
    # constant velocity: every defined feature equals quantize(0)
    np.testing.assert_allclose(ft.probs[defined], np.broadcast_to(quantize(0.0, small_quantizer),
                                                                  ft.probs[defined].shape))
    assert ft.valid_from.tolist() == [2, 2, -1]
    assert ft.channels.shape == (K, L, small_quantizer.N + 1)


def test_features_never_defined_right_after_dropout(pairs, small_quantizer):
    for pair in pairs:
        seq = pair.spoofed
        ft = build_features(seq, small_quantizer)
        pres = seq.present
        for lag in (0, 1, 2):
            after = np.zeros_like(pres)
            after[lag:] = ~pres[:pres.shape[0] - lag]
            assert not np.any((ft.presence > 0) & after)
