import numpy as np
import pytest

from psrspoof.nn import kernels
from psrspoof.nn import _kernels_py
from psrspoof.nn.layers import (CausalSelfAttention, EncoderBlock, LSTMLayer, SatelliteTimeAttention,
                                layer_norm)
from psrspoof.nn.model import (CheckpointError, DetectorModel, ModelConfig, late_fusion_aggregate,
                               late_fusion_scores, two_class_softmax)

from test_gradients import toy_inputs, toy_model

ALL = [("mha-early", "attention-mask"), ("lstm-early", "attention-mask"), ("mha-late", "attention-mask"),
       ("mha-late", "input-indicator"), ("lstm-late", "attention-mask")]


@pytest.mark.parametrize("variant,mask_mode", ALL)
def test_causality_100_trials(variant, mask_mode):
    K, L, N = 12, 4, 4
    m = toy_model(variant, mask_mode, L=L, K=K, N=N)
    rng = np.random.default_rng(7)
    for trial in range(100):
        probs, presence = toy_inputs(B=1, K=K, L=L, N=N, seed=trial)
        base = m.scores(probs, presence)
        k = int(rng.integers(1, K))
        p2, pr2 = probs.copy(), presence.copy()
        p2[:, k:] = rng.random(p2[:, k:].shape)
        if trial % 2:
            pr2[:, k:] = (rng.random(pr2[:, k:].shape) > 0.5).astype(float)
        after = m.scores(p2, pr2)
        assert base[:, :k].tobytes() == after[:, :k].tobytes(), f"trial {trial}, k={k}"


@pytest.mark.parametrize("variant,mask_mode", ALL)
def test_absent_slot_values_never_matter(variant, mask_mode):
    m = toy_model(variant, mask_mode)
    probs, presence = toy_inputs()
    base = m.scores(probs, presence)
    noisy = probs + np.random.default_rng(1).random(probs.shape) * (presence[..., None] == 0)
    np.testing.assert_array_equal(m.scores(noisy, presence), base)


@pytest.mark.parametrize("variant", ["mha-late", "lstm-late"])
def test_late_fusion_satellite_exchangeability(variant):
    m = toy_model(variant)
    probs, presence = toy_inputs(B=1)
    base = m.scores(probs, presence)
    perm = [1, 0, 2]
    m2 = m.copy()
    m2.params["pos.sat"] = m.params["pos.sat"][perm]
    swapped = m2.scores(probs[:, :, perm], presence[:, :, perm])
    np.testing.assert_allclose(swapped, base, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("variant,mask_mode", ALL)
def test_zeroed_head_gives_half(variant, mask_mode):
    m = toy_model(variant, mask_mode)
    m.params["head.w"][:] = 0
    m.params["head.b"][:] = 0
    probs, presence = toy_inputs()
    assert np.all(m.scores(probs, presence) == 0.5)


@pytest.mark.parametrize("variant,mask_mode", ALL)
def test_scores_are_probabilities(variant, mask_mode):
    m = toy_model(variant, mask_mode)
    probs, presence = toy_inputs()
    logits, _ = m.forward(probs, presence)
    sm = two_class_softmax(logits)
    assert np.all((sm >= 0) & (sm <= 1))
    np.testing.assert_allclose(sm.sum(-1), 1.0, atol=1e-9)
    assert logits.shape == (2, 6, 2)


def test_late_epoch_without_satellites_scores_half():
    m = toy_model("mha-late")
    probs, presence = toy_inputs()
    scores = m.scores(probs, presence)
    empty = presence.sum(-1) == 0
    assert empty.any() and np.all(scores[empty] == 0.5)


def test_early_embedding_is_channel_order_sensitive():
    m = toy_model("mha-early")
    probs, presence = toy_inputs(B=1)
    presence[:] = 1.0
    x, _ = m.inputs(probs, presence)
    xs, _ = m.inputs(probs[:, :, [1, 0, 2]], presence)
    assert not np.array_equal(x, xs)
    a = m.scores(probs, presence)
    np.testing.assert_array_equal(a, m.scores(probs.copy(), presence.copy()))


def test_late_satellite_embedding_row_added_everywhere():
    m = toy_model("mha-late", blocks=1)
    probs, presence = toy_inputs(B=1)
    x, _ = m.inputs(probs, presence)
    base = x @ m.params["embed.w"] + m.params["embed.b"] + m.params["pos.time"][:6][None, :, None]
    full = base + m.params["pos.sat"][None, None]
    diff = full - base
    for s in range(3):
        np.testing.assert_allclose(diff[0, :, s], np.broadcast_to(m.params["pos.sat"][s], (6, 8)),
                                   rtol=0, atol=1e-15)


def test_model_rejects_too_many_channels():
    m = toy_model("mha-early")
    probs, presence = toy_inputs(L=4)
    with pytest.raises(ValueError):
        m.forward(probs, presence)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(blocks=9)
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig.from_variant("gru-early")


def test_lstm_zero_weights_give_zero_states():
    layer = LSTMLayer("l", 4)
    p = {k: np.zeros_like(v) for k, v in layer.init(np.random.default_rng(0)).items()}
    y, _ = layer.forward(p, np.random.default_rng(1).standard_normal((2, 5, 4)))
    assert not y.any()


def test_attention_singleton_is_value_projection():
    att = CausalSelfAttention("a", 4, 2)
    p = att.init(np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((1, 1, 4))
    y, _ = att.forward(p, x)
    v = (x @ p["a.qkv.w"] + p["a.qkv.b"])[..., 8:]
    np.testing.assert_allclose(y, v @ p["a.out.w"] + p["a.out.b"], rtol=1e-12)


def test_late_attention_weights_cover_admissible_set():
    att = SatelliteTimeAttention("s", 4, 2)
    rng = np.random.default_rng(2)
    p = att.init(rng)
    K, L = 4, 3
    x = rng.standard_normal((1, K, L, 4))
    km = rng.random((1, K, L)) > 0.3
    km[0, 3, :] = True
    maps = att.attention_weights(p, x, km)
    for at, as_ in maps[0]:
        # at: (L, K query, K key), as_: (K, L query, L key)
        for k in range(K):
            for s in range(L):
                time_part = at[s, k]
                sat_part = as_[k, s]
                admissible_time = (np.arange(K) <= k) & km[0, :, s]
                admissible_sat = (np.arange(L) != s) & km[0, k, :]
                assert np.all(time_part[~admissible_time] == 0)
                assert np.all(sat_part[~admissible_sat] == 0)
                total = time_part.sum() + sat_part.sum()
                if admissible_time.any() or admissible_sat.any():
                    assert total == pytest.approx(1.0, abs=1e-12)
                else:
                    assert total == 0.0


def test_block_with_zero_sublayers_is_double_layer_norm():
    d = 6
    blk = EncoderBlock("b", CausalSelfAttention("b.attn", d, 2), d, 5)
    p = blk.init(np.random.default_rng(0))
    for k in p:
        if ".attn." in k or ".ffn." in k:
            p[k][:] = 0.0
    x = np.random.default_rng(1).standard_normal((2, 4, d))
    y, _ = blk.forward(p, x)
    np.testing.assert_allclose(y, layer_norm(layer_norm(x)[0])[0], rtol=1e-12)
    out, _ = layer_norm(x * 50 + 3)
    np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(-1), 1.0, atol=1e-5)


def test_aggregation_examples():
    y1 = np.array([[[0.3, -1.2]]])
    out, _ = late_fusion_aggregate(y1, np.array([[2.0]]), np.array([[True]]))
    np.testing.assert_allclose(out, y1[:, 0])
    y = np.tile(np.array([0.7, 0.1]), (1, 4, 1))
    out, _ = late_fusion_aggregate(y, np.zeros((1, 4)), np.ones((1, 4), bool))
    np.testing.assert_allclose(out[0], [0.7, 0.1])
    rng = np.random.default_rng(0)
    y = rng.standard_normal((5, 4, 2))
    w = rng.standard_normal((5, 4))
    pres = rng.random((5, 4)) > 0.4
    a, _ = late_fusion_aggregate(y, w, pres)
    b, _ = late_fusion_aggregate(y, w + 3.7, pres)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    scores, informative = late_fusion_scores(y, w, np.zeros((5, 4), bool))
    assert np.all(scores == 0.5) and not informative.any()


@pytest.mark.parametrize("variant,mask_mode", ALL)
def test_checkpoint_round_trip(tmp_path, variant, mask_mode, small_quantizer):
    m = toy_model(variant, mask_mode, N=small_quantizer.N)
    m.quantizer = small_quantizer
    path = tmp_path / "m.psrd"
    m.save(path, {"config_hash": "abc"})
    data = path.read_bytes()
    assert data[:4] == b"PSRD"
    back, meta = DetectorModel.load(path)
    assert meta == {"config_hash": "abc"}
    assert back.config == m.config
    assert back.quantizer.to_bytes() == small_quantizer.to_bytes()
    for k, v in m.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert back.to_bytes({"config_hash": "abc"}) == data


def test_checkpoint_corruption_detected(tmp_path):
    m = toy_model("lstm-early")
    data = m.to_bytes()
    with pytest.raises(CheckpointError):
        DetectorModel.from_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        DetectorModel.from_bytes(b"NOPE" + data[4:])
    with pytest.raises(CheckpointError):
        DetectorModel.from_bytes(data + b"\0")


def test_kernel_backends_agree():
    rng = np.random.default_rng(0)
    T, R, H = 7, 5, 6
    xw = rng.standard_normal((T, R, 4 * H))
    w = rng.standard_normal((H, 4 * H)) * 0.5
    ref = _kernels_py.lstm_forward(xw, w)
    got = kernels.lstm_forward(xw, w)
    for a, b in zip(ref, got):
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-13)
    dh = rng.standard_normal((T, R, H))
    np.testing.assert_allclose(kernels.lstm_backward(dh, ref[2], ref[1], w),
                               _kernels_py.lstm_backward(dh, ref[2], ref[1], w), rtol=1e-10, atol=1e-12)
    x = rng.standard_normal((50, 30)) * 4
    for a, b in zip(kernels.gelu(x), _kernels_py.gelu(x)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    # saturated inputs stay finite
    big = np.array([[-1e4, -50.0, 0.0, 50.0, 1e4]])
    assert all(np.all(np.isfinite(a)) for a in kernels.gelu(big))


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")
