"""Nominal corrected pseudo-range generation.

psr = |sat - rx| + clock bias + correlated (Gauss-Markov) noise + white noise,
with both noise sigmas scaled by 1/sin(elevation).  Satellites are mapped to a
fixed number of receiver channels in order of first visibility.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import (ConstellationConfig, OrbitalElements, Trajectory, Visibility,
                       satellite_positions, visibility)

SIDEREAL_DAY_S = 86_164.0905


class DegenerateScenario(ValueError):
    """Too few (or too many) satellites; the caller should draw a new scenario."""


@dataclass(frozen=True)
class NoiseParams:
    white_sigma_zenith_m: float = 0.5
    correlated_sigma_zenith_m: float = 1.5
    correlation_time_s: float = 120.0
    min_elevation_rad: float = math.radians(5.0)

    def __post_init__(self):
        if self.min_elevation_rad <= 0 or self.correlation_time_s <= 0:
            raise ValueError("min elevation and correlation time must be positive")
        if self.white_sigma_zenith_m < 0 or self.correlated_sigma_zenith_m < 0:
            raise ValueError("noise sigmas must be non-negative")

    @classmethod
    def from_config(cls, cfg) -> "NoiseParams":
        return cls(cfg.white_sigma_zenith_m, cfg.correlated_sigma_zenith_m,
                   cfg.correlation_time_s, math.radians(cfg.min_elevation_deg))


@dataclass(frozen=True)
class ClockState:
    bias_m: float
    drift_mps: float
    drift_noise_sigma: float


@dataclass
class PsrSequence:
    psr_m: np.ndarray      # (K, L) meters, 0.0 where absent
    present: np.ndarray    # (K, L) bool
    labels: np.ndarray     # (K,) bool
    seed: int
    epoch_interval_s: float = 1.0
    attack: object | None = None

    @property
    def epochs(self) -> int:
        return self.psr_m.shape[0]

    @property
    def satellites(self) -> int:
        return self.psr_m.shape[1]

    def copy(self) -> "PsrSequence":
        return PsrSequence(self.psr_m.copy(), self.present.copy(), self.labels.copy(),
                           self.seed, self.epoch_interval_s, self.attack)


@dataclass
class NominalScenario:
    """Everything the attack generator needs to rebuild PSR under a false position.

    Per-channel arrays are (K, L); ``channel_sat`` maps channels to satellite
    indices (-1 for unused channels).
    """
    trajectory: Trajectory
    sat_pos: np.ndarray          # (K, L, 3) per channel, zeros for unused channels
    elevation: np.ndarray        # (K, L)
    visible: np.ndarray          # (K, L)
    present: np.ndarray          # (K, L) visible and not dropped
    geometric_range: np.ndarray  # (K, L)
    bias: np.ndarray             # (K,)
    correlated: np.ndarray       # (K, L)
    white: np.ndarray            # (K, L)
    channel_sat: np.ndarray      # (L,)
    seed: int
    noise: NoiseParams = field(default_factory=NoiseParams)

    @property
    def sequence(self) -> PsrSequence:
        psr = self.geometric_range + self.bias[:, None] + self.correlated + self.white
        psr = np.where(self.present, psr, 0.0)
        K = psr.shape[0]
        return PsrSequence(psr, self.present.copy(), np.zeros(K, dtype=bool), self.seed,
                           self.trajectory.epoch_interval_s)


def elevation_scaled_sigma(sigma_zenith: float, el, min_elevation_rad: float):
    return sigma_zenith / np.sin(np.maximum(el, min_elevation_rad))


def white_sigma(el, p: NoiseParams):
    """Standard deviation of the white PSR noise at elevation ``el`` (radians)."""
    return elevation_scaled_sigma(p.white_sigma_zenith_m, el, p.min_elevation_rad)


def correlated_sigma(el, p: NoiseParams):
    return elevation_scaled_sigma(p.correlated_sigma_zenith_m, el, p.min_elevation_rad)


def gauss_markov_coefficient(dt: float, tau: float) -> float:
    return math.exp(-dt / tau)


def correlated_step(xi, dt: float, el, p: NoiseParams, rng: np.random.Generator | None):
    """One first-order Gauss-Markov update per satellite.

    The driving noise keeps the stationary standard deviation equal to the
    elevation-dependent sigma.  ``rng=None`` disables the driving noise.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    phi = gauss_markov_coefficient(dt, p.correlation_time_s)
    xi = np.asarray(xi, dtype=float)
    if rng is None:
        return phi * xi
    q = correlated_sigma(el, p) * math.sqrt(1.0 - phi * phi)
    return phi * xi + q * rng.standard_normal(xi.shape)


def gauss_markov_series(sigma: np.ndarray, dt: float, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Gauss-Markov realisation along axis 0 with per-step stationary sigma.

    Starts from the stationary distribution; ``sigma`` is (K, ...) and the
    result has the same shape.
    """
    sigma = np.asarray(sigma, dtype=float)
    phi = gauss_markov_coefficient(dt, tau)
    drive = rng.standard_normal(sigma.shape)
    out = np.empty_like(sigma)
    out[0] = sigma[0] * drive[0]
    scale = sigma * math.sqrt(1.0 - phi * phi)
    for k in range(1, len(sigma)):
        out[k] = phi * out[k - 1] + scale[k] * drive[k]
    return out


def clock_step(state: ClockState, dt: float, rng: np.random.Generator | None) -> ClockState:
    """Bias integrates drift; drift random-walks with variance q^2 dt per step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    bias = state.bias_m + state.drift_mps * dt
    drift = state.drift_mps
    if rng is not None and state.drift_noise_sigma > 0:
        drift = drift + state.drift_noise_sigma * math.sqrt(dt) * rng.standard_normal()
    return ClockState(bias, drift, state.drift_noise_sigma)


def clock_series(state: ClockState, K: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    bias = np.empty(K)
    for k in range(K):
        bias[k] = state.bias_m
        state = clock_step(state, dt, rng)
    return bias


def burst_dropouts(shape: tuple[int, int], probability: float, mean_length: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Two-state Markov dropout mask (True = dropped) along axis 0.

    Bursts have geometric lengths with mean ``mean_length``; the stationary
    dropped fraction is ``probability``.
    """
    K, L = shape
    if probability <= 0:
        return np.zeros(shape, dtype=bool)
    leave = 1.0 / mean_length
    enter = probability * leave / (1.0 - probability)
    u = rng.random(shape)
    dropped = np.empty(shape, dtype=bool)
    dropped[0] = u[0] < probability
    for k in range(1, K):
        dropped[k] = np.where(dropped[k - 1], u[k] >= leave, u[k] < enter)
    return dropped


def assign_channels(visible: np.ndarray, max_satellites: int) -> np.ndarray:
    """Channel -> satellite index, ordered by first visible epoch (ties by index)."""
    ever = np.flatnonzero(visible.any(axis=0))
    if len(ever) > max_satellites:
        raise DegenerateScenario(f"{len(ever)} satellites visible, only {max_satellites} channels")
    first = visible[:, ever].argmax(axis=0)
    order = ever[np.lexsort((ever, first))]
    channels = np.full(max_satellites, -1, dtype=int)
    channels[: len(order)] = order
    return channels


@dataclass(frozen=True)
class SignalConfig:
    noise: NoiseParams = field(default_factory=NoiseParams)
    clock_bias_range_m: float = 1.0e4
    clock_drift_sigma_mps: float = 1.0
    clock_drift_noise: float = 0.01
    dropout_probability: float = 0.01
    dropout_mean_length: float = 5.0
    max_satellites: int = 16

    @classmethod
    def from_config(cls, cfg) -> "SignalConfig":
        return cls(NoiseParams.from_config(cfg), cfg.clock_bias_range_m, cfg.clock_drift_sigma_mps,
                   cfg.clock_drift_noise, cfg.dropout_probability, cfg.dropout_mean_length,
                   cfg.max_satellites)


def simulate_nominal(traj: Trajectory, elements: OrbitalElements, cfg: ConstellationConfig,
                     signal: SignalConfig, seed: int, start_time_s: float | None = None,
                     clock: ClockState | None = None) -> NominalScenario:
    """Simulate one nominal scenario; raises DegenerateScenario when unusable.

    Random streams (start time, clock, dropouts, and one per satellite) are
    independent children of ``seed``.
    """
    K = len(traj)
    dt = traj.epoch_interval_s
    ss = np.random.SeedSequence(seed, spawn_key=(2,))
    time_ss, clock_ss, drop_ss, sat_ss = ss.spawn(4)
    if start_time_s is None:
        start_time_s = float(np.random.default_rng(time_ss).uniform(0.0, SIDEREAL_DAY_S))
    all_pos = satellite_positions(elements, start_time_s + np.arange(K) * dt)
    vis = visibility(traj, all_pos, cfg)
    if vis.counts().min() < 4:
        raise DegenerateScenario("fewer than 4 satellites visible at some epoch")
    channels = assign_channels(vis.visible, signal.max_satellites)
    used = channels >= 0
    L = signal.max_satellites
    idx = np.where(used, channels, 0)

    sat_pos = np.where(used[None, :, None], all_pos[:, idx, :], 0.0)
    elevation = np.where(used[None, :], vis.elevation_rad[:, idx], 0.0)
    visible = vis.visible[:, idx] & used[None, :]
    rng_range = np.linalg.norm(sat_pos - traj.positions[:, None, :], axis=-1)
    rng_range = np.where(used[None, :], rng_range, 0.0)

    if clock is None:
        crng = np.random.default_rng(clock_ss)
        clock = ClockState(crng.uniform(-signal.clock_bias_range_m, signal.clock_bias_range_m),
                           signal.clock_drift_sigma_mps * crng.standard_normal(),
                           signal.clock_drift_noise)
        bias = clock_series(clock, K, dt, crng)
    else:
        bias = clock_series(clock, K, dt, np.random.default_rng(clock_ss))

    dropped = burst_dropouts((K, L), signal.dropout_probability, signal.dropout_mean_length,
                             np.random.default_rng(drop_ss))
    present = visible & ~dropped

    # per-satellite streams keyed by satellite index, not channel
    sat_children = sat_ss.spawn(elements.count)
    correlated = np.zeros((K, L))
    white = np.zeros((K, L))
    noise = signal.noise
    for ch in np.flatnonzero(used):
        srng = np.random.default_rng(sat_children[channels[ch]])
        el = elevation[:, ch]
        correlated[:, ch] = gauss_markov_series(correlated_sigma(el, noise), dt,
                                                noise.correlation_time_s, srng)
        white[:, ch] = white_sigma(el, noise) * srng.standard_normal(K)

    return NominalScenario(traj, sat_pos, elevation, visible, present, rng_range, bias,
                           correlated, white, channels, seed, noise)


def generate_nominal(traj: Trajectory, elements: OrbitalElements, cfg: ConstellationConfig,
                     noise: NoiseParams, seed: int, **kwargs) -> PsrSequence:
    signal = kwargs.pop("signal", None) or SignalConfig(noise=noise)
    return simulate_nominal(traj, elements, cfg, signal, seed, **kwargs).sequence
