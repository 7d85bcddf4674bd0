"""One-call scenario factory tying geometry, signal and attack together."""
from __future__ import annotations

import math

import numpy as np

from .config import Config
from .scenario import (ConstellationConfig, build_constellation, enu_basis,
                       sample_landing_trajectory)
from .signal import DegenerateScenario, NominalScenario, SignalConfig, simulate_nominal
from .spoofer import (AttackKind, AttackRanges, EstimationErrorParams, ScenarioPair,
                      apply_attack, sample_attack_spec)

MAX_ATTEMPTS = 50


def nominal_scenario(cfg: Config, seed: int) -> NominalScenario:
    const = ConstellationConfig.from_config(cfg)
    traj = sample_landing_trajectory(seed, cfg.duration_s, cfg.epoch_interval_s, cfg.earth_radius_m,
                                     cfg.glide_slope_deg, cfg.ground_speed_mps, cfg.approach_altitude_m)
    return simulate_nominal(traj, build_constellation(const), const, SignalConfig.from_config(cfg), seed)


def spoofer_site(nominal: NominalScenario, seed: int, radius_m: float = 5000.0) -> np.ndarray:
    """Static ground position within ``radius_m`` of the trajectory midpoint."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    mid = nominal.trajectory.positions[nominal.trajectory.midpoint_epoch]
    E, N, U = enu_basis(mid)
    r = radius_m * math.sqrt(rng.random())
    a = rng.uniform(0.0, 2.0 * math.pi)
    ground = mid - (nominal.trajectory.altitude_m[nominal.trajectory.midpoint_epoch]) * U
    return ground + r * (math.cos(a) * E + math.sin(a) * N)


def scenario_pair(cfg: Config, seed: int, kind: AttackKind | str) -> ScenarioPair:
    """Clean/spoofed pair for ``seed``; raises DegenerateScenario if unusable."""
    nominal = nominal_scenario(cfg, seed)
    K = nominal.present.shape[0]
    spec = sample_attack_spec(kind, seed, K, cfg.epoch_interval_s, AttackRanges.from_config(cfg),
                              spoofer_site(nominal, seed))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))
    return apply_attack(nominal, spec, EstimationErrorParams.from_config(cfg), rng)


def usable_pair(cfg: Config, seed_fn, kind) -> tuple[int, ScenarioPair]:
    """Try successive seeds from ``seed_fn(attempt)`` until a scenario is usable."""
    for attempt in range(MAX_ATTEMPTS):
        seed = seed_fn(attempt)
        try:
            return seed, scenario_pair(cfg, seed, kind)
        except DegenerateScenario:
            continue
    raise DegenerateScenario(f"no usable scenario after {MAX_ATTEMPTS} attempts")
