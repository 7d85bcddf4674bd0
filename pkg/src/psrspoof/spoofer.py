"""Targeted and regional spoofing attacks applied at the pseudo-range level.

The aircraft keeps flying its nominal path; only the received pseudo-ranges
change.  Every attack yields a ScenarioPair whose two members share geometry,
presence and noise realisations outside the attack window.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .scenario import enu_basis
from .signal import (NominalScenario, PsrSequence, correlated_sigma, gauss_markov_series,
                     white_sigma)


class AttackKind(enum.Enum):
    TARGETED = "targeted"
    REGIONAL = "regional"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    start_epoch: int
    duration_s: float
    shift_m: float
    rotation_deg: float
    bearing_deg: float           # horizontal direction of the shift
    peak_epoch: int              # nominal-trajectory midpoint
    spoofer_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    epoch_interval_s: float = 1.0

    def __post_init__(self):
        if self.kind is AttackKind.TARGETED and self.rotation_deg != 0.0:
            raise ValueError("targeted attacks do not rotate")
        if abs(self.rotation_deg) > 20.0:
            raise ValueError("rotation exceeds 20 degrees")

    @property
    def duration_epochs(self) -> int:
        return int(round(self.duration_s / self.epoch_interval_s))

    @property
    def end_epoch(self) -> int:
        """First epoch after the window."""
        return self.start_epoch + self.duration_epochs

    def window(self, K: int) -> np.ndarray:
        labels = np.zeros(K, dtype=bool)
        labels[self.start_epoch:self.end_epoch] = True
        return labels

    def validate(self, K: int, strict_ranges: bool = True) -> None:
        if self.start_epoch < 0 or self.end_epoch > K:
            raise ValueError(f"attack window [{self.start_epoch}, {self.end_epoch}) exceeds {K} epochs")
        if strict_ranges:
            if not 100.0 <= self.duration_s <= 568.0:
                raise ValueError(f"duration {self.duration_s} outside [100, 568] s")
            if not 300.0 <= self.shift_m <= 1000.0:
                raise ValueError(f"shift {self.shift_m} outside [300, 1000] m")


@dataclass(frozen=True)
class EstimationErrorParams:
    position_error_sigma_m: float = 15.0
    time_error_sigma_m: float = 3.0
    noise_tracking_gain: float = 0.7
    position_error_tau_s: float = 30.0
    time_error_tau_s: float = 30.0

    def __post_init__(self):
        if self.position_error_sigma_m < 0 or self.time_error_sigma_m < 0:
            raise ValueError("sigmas must be non-negative")
        if not 0.0 <= self.noise_tracking_gain <= 1.0:
            raise ValueError("tracking gain must lie in [0, 1]")

    @classmethod
    def from_config(cls, cfg) -> "EstimationErrorParams":
        return cls(cfg.position_error_sigma_m, cfg.time_error_sigma_m, cfg.noise_tracking_gain,
                   cfg.position_error_tau_s, cfg.time_error_tau_s)


@dataclass
class ScenarioPair:
    clean: PsrSequence
    spoofed: PsrSequence
    attack: AttackSpec


@dataclass(frozen=True)
class AttackRanges:
    duration_s: tuple[float, float] = (100.0, 568.0)
    shift_m: tuple[float, float] = (300.0, 1000.0)
    rotation_deg: float = 20.0
    max_drift_rate_mps: float = 9.8

    @classmethod
    def from_config(cls, cfg) -> "AttackRanges":
        return cls((cfg.duration_min_s, cfg.duration_max_s), (cfg.shift_min_m, cfg.shift_max_m),
                   cfg.rotation_max_deg, cfg.max_drift_rate_mps)

    def strata(self) -> list[float]:
        """Quantile cut points pairing short durations with small shifts.

        Duration and shift keep uniform marginals, but both are drawn inside
        the same quantile band, so the targeted drift rate, bounded by
        shift*pi/duration, stays below ``max_drift_rate_mps`` even in the worst
        corner of each band.
        """
        (d0, d1), (s0, s1) = self.duration_s, self.shift_m
        cuts = [0.0]
        while cuts[-1] < 1.0:
            lo = cuts[-1]
            # odd durations give the ramp one epoch less than half the window
            shortest = d0 + (d1 - d0) * lo - 1.0
            nxt = (self.max_drift_rate_mps * shortest / math.pi - s0) / (s1 - s0)
            if nxt <= lo + 1e-9:
                raise ValueError("drift-rate cap is infeasible for these ranges")
            cuts.append(min(1.0, nxt))
        return cuts


def sample_attack_spec(kind: AttackKind | str, seed: int, K: int = 568, epoch_interval_s: float = 1.0,
                       ranges: AttackRanges | None = None, spoofer_position=None) -> AttackSpec:
    """Draw an attack with uniform duration and shift marginals.

    Targeted windows are centred on the trajectory midpoint; regional windows
    are placed uniformly among those containing it.
    """
    kind = AttackKind(kind)
    ranges = ranges or AttackRanges()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    cuts = ranges.strata()
    widths = np.diff(cuts)
    band = rng.choice(len(widths), p=widths / widths.sum())
    u_dur = cuts[band] + widths[band] * rng.random()
    u_shift = cuts[band] + widths[band] * rng.random()
    (d0, d1), (s0, s1) = ranges.duration_s, ranges.shift_m
    # rounded up to whole epochs; longer windows only lower the drift rate
    dur_epochs = int(math.ceil((d0 + (d1 - d0) * u_dur) / epoch_interval_s - 1e-9))
    dur_epochs = min(max(dur_epochs, int(math.ceil(d0 / epoch_interval_s))), K)
    duration = dur_epochs * epoch_interval_s
    shift = s0 + (s1 - s0) * u_shift
    bearing = rng.uniform(0.0, 360.0)
    mid = K // 2
    if kind is AttackKind.TARGETED:
        rotation = 0.0
        start = mid - dur_epochs // 2
    else:
        rotation = rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)
        lo, hi = max(0, mid - dur_epochs + 1), min(mid, K - dur_epochs)
        start = int(rng.integers(lo, hi + 1))
    pos = tuple(float(v) for v in spoofer_position) if spoofer_position is not None else (0.0, 0.0, 0.0)
    return AttackSpec(kind, int(start), float(duration), float(shift), float(rotation), float(bearing),
                      mid, pos, epoch_interval_s)


def _raised_cosine_profile(k, spec: AttackSpec) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    start, peak, end = spec.start_epoch, spec.peak_epoch, spec.end_epoch
    if not start < peak < end:
        raise ValueError("targeted window must strictly contain the peak epoch")
    up = 0.5 * (1.0 - np.cos(np.pi * (k - start) / (peak - start)))
    down = 0.5 * (1.0 + np.cos(np.pi * (k - peak) / (end - peak)))
    a = np.where(k <= peak, up, down)
    a = np.where((k < start) | (k >= end), 0.0, a)
    return spec.shift_m * a


def targeted_offset_profile(k, spec: AttackSpec, receiver_positions: np.ndarray | None = None) -> np.ndarray:
    """Horizontal spoofing offset at epoch(s) ``k``.

    Returns the scalar magnitude when ``receiver_positions`` is None, otherwise
    the ECEF offset vectors (shape (..., 3)) along the spec bearing in each
    receiver's local horizontal plane.
    """
    mag = _raised_cosine_profile(k, spec)
    if receiver_positions is None:
        return mag
    basis = enu_basis(receiver_positions)
    b = math.radians(spec.bearing_deg)
    direction = math.sin(b) * basis[..., 0, :] + math.cos(b) * basis[..., 1, :]
    return mag[..., None] * direction


def regional_transform(nominal: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Shifted and rotated copy of the nominal positions inside the window.

    Rotation is horizontal, about the nominal midpoint, in the midpoint's local
    tangent frame; positive angles turn east toward north.  Returns a full
    (K, 3) array equal to ``nominal`` outside the window.
    """
    nominal = np.asarray(nominal, dtype=float)
    out = nominal.copy()
    sl = slice(spec.start_epoch, spec.end_epoch)
    center = nominal[spec.peak_epoch]
    E, N, U = enu_basis(center)
    d = nominal[sl] - center
    e, n, u = d @ E, d @ N, d @ U
    th = math.radians(spec.rotation_deg)
    c, s = math.cos(th), math.sin(th)
    b = math.radians(spec.bearing_deg)
    e2 = c * e - s * n + spec.shift_m * math.sin(b)
    n2 = s * e + c * n + spec.shift_m * math.cos(b)
    out[sl] = center + e2[:, None] * E + n2[:, None] * N + u[:, None] * U
    return out


@dataclass
class EstimationNoise:
    """Spoofer-side estimation residuals, all in meters.

    ``position`` is the victim-position error projected on each line of sight
    (K, L), ``time`` the common-mode time error (K,), and ``tracking`` the part
    of the victim's correlated noise the spoofer failed to reproduce (K, L).
    """
    position: np.ndarray
    time: np.ndarray
    tracking: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.position + self.time[:, None] - self.tracking


def _gm(sigma: float, K: int, shape: tuple, dt: float, tau: float, rng) -> np.ndarray:
    sig = np.full((K,) + shape, float(sigma))
    return gauss_markov_series(sig, dt, tau, rng)


def spoofer_estimation_noise(params: EstimationErrorParams, K: int, rng: np.random.Generator,
                             line_of_sight: np.ndarray, correlated: np.ndarray,
                             dt: float = 1.0) -> EstimationNoise:
    """Residual errors of a targeted spoofer tracking the victim.

    ``line_of_sight`` holds receiver-to-satellite unit vectors (K, L, 3) and
    ``correlated`` the victim's Gauss-Markov noise (K, L).
    """
    pos_err = _gm(params.position_error_sigma_m, K, (3,), dt, params.position_error_tau_s, rng)
    time_err = _gm(params.time_error_sigma_m, K, (), dt, params.time_error_tau_s, rng)
    # believing the victim sits at p + e shortens ranges along the line of sight
    position = -np.einsum("kli,ki->kl", line_of_sight, pos_err)
    tracking = (1.0 - params.noise_tracking_gain) * correlated
    return EstimationNoise(position, time_err, tracking)


def _ranges(sat_pos: np.ndarray, receivers: np.ndarray) -> np.ndarray:
    return np.linalg.norm(sat_pos - receivers[:, None, :], axis=-1)


def apply_attack(nominal: NominalScenario, spec: AttackSpec, err: EstimationErrorParams,
                 rng: np.random.Generator, strict_ranges: bool = True) -> ScenarioPair:
    """Build the (clean, spoofed) pair for one attack on a nominal scenario."""
    clean = nominal.sequence
    K = clean.epochs
    spec.validate(K, strict_ranges)
    traj = nominal.trajectory
    dt = traj.epoch_interval_s
    labels = spec.window(K)
    sl = slice(spec.start_epoch, spec.end_epoch)
    used = nominal.channel_sat >= 0
    present = nominal.present
    psr = clean.psr_m.copy()

    if spec.kind is AttackKind.TARGETED:
        nominal_pos = traj.positions[sl]
        offset = targeted_offset_profile(np.arange(K)[sl], spec, nominal_pos)
        spoof_pos = nominal_pos + offset
        los = nominal.sat_pos[sl] - nominal_pos[:, None, :]
        los /= np.where(used[None, :, None], np.linalg.norm(los, axis=-1, keepdims=True), 1.0)
        est = spoofer_estimation_noise(err, spec.duration_epochs, rng, los, nominal.correlated[sl], dt)
        delta = (_ranges(nominal.sat_pos[sl], spoof_pos) - nominal.geometric_range[sl]) + est.total
        window = psr[sl] + delta
    else:
        spoof_track = regional_transform(traj.positions, spec)[sl]
        el = nominal.elevation[sl]
        n = spec.duration_epochs
        L = psr.shape[1]
        xi = gauss_markov_series(correlated_sigma(el, nominal.noise), dt,
                                 nominal.noise.correlation_time_s, rng)
        white = white_sigma(el, nominal.noise) * rng.standard_normal((n, L))
        time_err = _gm(err.time_error_sigma_m, n, (), dt, err.time_error_tau_s, rng)
        window = (_ranges(nominal.sat_pos[sl], spoof_track) + nominal.bias[sl, None]
                  + xi + white + time_err[:, None])
    psr[sl] = np.where(present[sl], window, 0.0)
    spoofed = PsrSequence(psr, present.copy(), labels, clean.seed, dt, spec)
    clean.attack = spec
    return ScenarioPair(clean, spoofed, spec)
