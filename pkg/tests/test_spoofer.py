import math

import numpy as np
import pytest

from psrspoof.generator import nominal_scenario, scenario_pair, spoofer_site
from psrspoof.scenario import enu_basis
from psrspoof.spoofer import (AttackKind, AttackRanges, AttackSpec, EstimationErrorParams,
                              apply_attack, regional_transform, sample_attack_spec,
                              spoofer_estimation_noise, targeted_offset_profile)


def _spec(kind="targeted", start=184, dur=200.0, shift=500.0, rot=0.0, bearing=30.0, peak=284):
    return AttackSpec(AttackKind(kind), start, dur, shift, rot, bearing, peak)


def test_profile_boundaries_and_peak():
    s = _spec()
    assert targeted_offset_profile(s.start_epoch, s) == 0.0
    assert targeted_offset_profile(s.peak_epoch, s) == s.shift_m
    assert targeted_offset_profile(s.end_epoch, s) == 0.0
    assert targeted_offset_profile(s.start_epoch - 1, s) == 0.0


def test_profile_first_difference_bound():
    s = _spec(start=200, dur=150.0, shift=1000.0)
    k = np.arange(568)
    prof = targeted_offset_profile(k, s)
    ramp_up, ramp_down = s.peak_epoch - s.start_epoch, s.end_epoch - s.peak_epoch
    bound = s.shift_m * math.pi / (2 * min(ramp_up, ramp_down))
    assert np.abs(np.diff(prof)).max() <= bound + 1e-9


def test_profile_direction_is_horizontal():
    s = _spec(bearing=90.0)
    rx = np.array([[6_371_000.0, 0.0, 0.0]])
    v = targeted_offset_profile(np.array([s.peak_epoch]), s, rx)
    E, N, U = enu_basis(rx[0])
    assert abs(v[0] @ U) < 1e-9
    np.testing.assert_allclose(v[0], s.shift_m * E, atol=1e-9)


def test_regional_identity_and_rotation_chord():
    traj = np.cumsum(np.tile([[0.0, 70.0, 10.0]], (568, 1)), axis=0) + [6_371_900.0, 0, 0]
    ident = regional_transform(traj, _spec("regional", shift=0.0, rot=0.0))
    np.testing.assert_allclose(ident, traj, atol=1e-8)
    s = _spec("regional", start=100, dur=368.0, shift=0.0, rot=20.0)
    out = regional_transform(traj, s)
    center = traj[s.peak_epoch]
    E, N, U = enu_basis(center)
    for k in (120, 250, 400):
        d = traj[k] - center
        r = math.hypot(d @ E, d @ N)
        chord = np.linalg.norm(out[k] - traj[k])
        assert chord == pytest.approx(2 * r * math.sin(math.radians(10)), rel=1e-9)
    np.testing.assert_array_equal(out[:100], traj[:100])


def test_regional_boundary_step_at_least_min_shift():
    traj = np.cumsum(np.tile([[0.0, 75.0, 0.0]], (568, 1)), axis=0) + [6_372_000.0, 0, 0]
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = _spec("regional", start=int(rng.integers(50, 284)), dur=300.0,
                  shift=rng.uniform(300, 1000), bearing=rng.uniform(0, 360))
        out = regional_transform(traj, s)
        assert np.linalg.norm(out[s.start_epoch] - traj[s.start_epoch]) >= 300.0 - 1e-6


def test_sample_spec_ranges_and_marginals():
    n = 10_000
    specs = [sample_attack_spec("targeted" if i % 2 else "regional", i) for i in range(n)]
    d = np.array([s.duration_s for s in specs])
    sh = np.array([s.shift_m for s in specs])
    assert d.min() >= 100 and d.max() <= 568
    assert sh.min() >= 300 and sh.max() <= 1000
    assert sh.mean() == pytest.approx(650, rel=0.03)
    assert d.mean() == pytest.approx(334, rel=0.03)
    for s in specs:
        assert s.start_epoch <= s.peak_epoch < s.end_epoch <= 568
        if s.kind is AttackKind.TARGETED:
            assert s.rotation_deg == 0.0
        else:
            assert abs(s.rotation_deg) <= 20.0
    rot = np.array([s.rotation_deg for s in specs if s.kind is AttackKind.REGIONAL])
    assert abs(rot.mean()) < 1.0 and rot.std() == pytest.approx(40 / math.sqrt(12), rel=0.05)


def test_sample_spec_deterministic():
    assert sample_attack_spec("regional", 9) == sample_attack_spec("regional", 9)


def test_drift_rate_cap_holds_for_every_sample():
    for i in range(5000):
        s = sample_attack_spec("targeted", i)
        ramp = min(s.peak_epoch - s.start_epoch, s.end_epoch - s.peak_epoch)
        assert s.shift_m * math.pi / (2 * ramp) < 10.0


def test_strata_infeasible_cap_rejected():
    with pytest.raises(ValueError):
        AttackRanges(max_drift_rate_mps=0.5).strata()


def test_spec_validation():
    with pytest.raises(ValueError):
        _spec(rot=5.0)
    with pytest.raises(ValueError):
        _spec("regional", rot=25.0)
    with pytest.raises(ValueError):
        _spec(start=500, dur=200.0).validate(568)
    with pytest.raises(ValueError):
        _spec(shift=100.0).validate(568)


def test_estimation_noise_zero_and_gain_cases():
    K, L = 50, 4
    rng = np.random.default_rng(0)
    los = np.tile([[[1.0, 0.0, 0.0]]], (K, L, 1))
    xi = rng.standard_normal((K, L))
    perfect = spoofer_estimation_noise(EstimationErrorParams(0.0, 0.0, 1.0), K, rng, los, xi)
    assert not np.any(perfect.total)
    g0 = spoofer_estimation_noise(EstimationErrorParams(0.0, 0.0, 0.0), K, rng, los, xi)
    np.testing.assert_array_equal(g0.tracking, xi)


def test_estimation_time_error_stationary_variance():
    K = 100_000
    rng = np.random.default_rng(5)
    los = np.zeros((K, 1, 3))
    e = spoofer_estimation_noise(EstimationErrorParams(0.0, 3.0, 1.0), K, rng, los, np.zeros((K, 1)))
    assert e.time.var() == pytest.approx(9.0, rel=0.1)


def test_estimation_params_validation():
    with pytest.raises(ValueError):
        EstimationErrorParams(noise_tracking_gain=1.5)
    with pytest.raises(ValueError):
        EstimationErrorParams(position_error_sigma_m=-1.0)


@pytest.mark.parametrize("kind", ["targeted", "regional"])
def test_pair_invariants(cfg, kind):
    for seed in range(3):
        try:
            pair = scenario_pair(cfg, 500 + seed, kind)
        except ValueError:
            continue
        c, s = pair.clean, pair.spoofed
        win = pair.attack.window(c.epochs)
        np.testing.assert_array_equal(s.labels, win)
        assert s.labels.sum() == pair.attack.duration_epochs
        assert not c.labels.any()
        assert c.psr_m[~win].tobytes() == s.psr_m[~win].tobytes()
        np.testing.assert_array_equal(c.present, s.present)
        assert c.seed == s.seed


def test_targeted_zero_noise_midpoint_delta(quiet_cfg):
    nominal = nominal_scenario(quiet_cfg, 42)
    pair = scenario_pair(quiet_cfg, 42, "targeted")
    spec = pair.attack
    k = spec.peak_epoch
    rx = nominal.trajectory.positions[k]
    off = targeted_offset_profile(np.array([k]), spec, rx[None])[0]
    assert np.linalg.norm(off) == pytest.approx(spec.shift_m, rel=1e-12)
    pres = pair.clean.present[k]
    sats = nominal.sat_pos[k, pres]
    expected = np.linalg.norm(sats - (rx + off), axis=1) - np.linalg.norm(sats - rx, axis=1)
    got = pair.spoofed.psr_m[k, pres] - pair.clean.psr_m[k, pres]
    np.testing.assert_allclose(got, expected, atol=1e-6)


def test_regional_zero_noise_step(quiet_cfg):
    pair = scenario_pair(quiet_cfg, 43, "regional")
    k = pair.attack.start_epoch
    pres = pair.clean.present[k]
    assert np.abs(pair.spoofed.psr_m[k, pres] - pair.clean.psr_m[k, pres]).max() > 0


def test_attack_rejects_out_of_bounds_window(cfg):
    nominal = nominal_scenario(cfg, 1)
    with pytest.raises(ValueError):
        apply_attack(nominal, _spec(start=480, dur=200.0), EstimationErrorParams(), np.random.default_rng(0))


def test_spoofer_site_near_midpoint(cfg):
    nominal = nominal_scenario(cfg, 3)
    site = spoofer_site(nominal, 3)
    mid = nominal.trajectory.positions[nominal.trajectory.midpoint_epoch]
    assert np.linalg.norm(site - mid) < 5100
