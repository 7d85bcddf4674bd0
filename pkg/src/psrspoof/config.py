"""Flat ``key = value`` configuration shared by every pipeline stage.

A config file holds one assignment per line; ``#`` starts a comment.
Unknown keys are rejected so that typos never silently fall back to a
default.  The hash of the canonical rendering tags every artifact.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Raised for unknown keys or unparsable values."""


@dataclass(frozen=True)
class Config:
    # scenario geometry
    earth_radius_m: float = 6_371_000.0
    satellite_count: int = 31
    orbit_radius_m: float = 26_560_000.0
    inclination_deg: float = 55.0
    plane_count: int = 6
    elevation_mask_deg: float = 5.0
    epoch_interval_s: float = 1.0
    duration_s: float = 568.0
    glide_slope_deg: float = 3.0
    ground_speed_mps: float = 75.0
    approach_altitude_m: float = 900.0
    max_satellites: int = 16
    # nominal signal
    white_sigma_zenith_m: float = 0.5
    correlated_sigma_zenith_m: float = 1.5
    correlation_time_s: float = 120.0
    min_elevation_deg: float = 5.0
    clock_bias_range_m: float = 1.0e4
    clock_drift_sigma_mps: float = 1.0
    clock_drift_noise: float = 0.01
    dropout_probability: float = 0.01
    dropout_mean_length: float = 5.0
    # attacks
    attack_kind: str = "balanced"
    duration_min_s: float = 100.0
    duration_max_s: float = 568.0
    shift_min_m: float = 300.0
    shift_max_m: float = 1000.0
    rotation_max_deg: float = 20.0
    max_drift_rate_mps: float = 9.8
    position_error_sigma_m: float = 15.0
    position_error_tau_s: float = 30.0
    time_error_sigma_m: float = 3.0
    time_error_tau_s: float = 30.0
    noise_tracking_gain: float = 0.7
    test_attack_fraction: float = 0.375
    # features
    quantizer_levels: int = 64
    quantizer_epochs: int = 30
    quantizer_samples: int = 200_000
    # model
    variant: str = "mha-early"
    blocks: int = 2
    d_model: int = 128
    ffn_hidden: int = 1024
    heads: int = 8
    mask_mode: str = "attention-mask"
    # training
    learning_rate: float = 3.0e-4
    max_steps: int = 2000
    pair_batch_size: int = 2
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1.0e-8
    checkpoint_every: int = 0
    threshold: float = 0.5

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, pairs: dict[str, str]) -> "Config":
        """Return a copy with string-valued overrides parsed to field types."""
        types = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, raw in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _parse(key, raw, types[key])
        return self.replace(**parsed)

    def render(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))

    def hash(self, keys: tuple[str, ...] | None = None) -> str:
        """SHA-256 over the canonical rendering (optionally a key subset)."""
        names = keys if keys is not None else tuple(f.name for f in fields(self))
        text = "".join(f"{k} = {getattr(self, k)!r}\n" for k in sorted(names))
        return hashlib.sha256(text.encode()).hexdigest()

    def generator_hash(self) -> str:
        return self.hash(GENERATOR_KEYS)


# keys that influence corpus content; changing any of them changes the corpus hash
GENERATOR_KEYS = tuple(
    f.name
    for f in fields(Config)
    if f.name
    not in {
        "quantizer_levels", "quantizer_epochs", "quantizer_samples", "variant", "blocks",
        "d_model", "ffn_hidden", "heads", "mask_mode", "learning_rate", "max_steps",
        "pair_batch_size", "grad_clip", "beta1", "beta2", "adam_eps", "checkpoint_every",
        "threshold",
    }
)


def _parse(key: str, raw: str, typ) -> object:
    raw = raw.strip().strip("'\"")
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def parse_assignments(lines: list[str]) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> Config:
    cfg = Config()
    if path is not None:
        cfg = cfg.with_overrides(parse_assignments(Path(path).read_text().splitlines()))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
