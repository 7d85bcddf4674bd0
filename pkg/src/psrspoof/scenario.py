"""Landing-scenario geometry: spherical Earth, circular constellation, approach path.

All positions are ECEF meters on a spherical Earth.  Satellites fly circular
Keplerian orbits; the receiver flies a three-phase approach (level, glide,
rollout) toward a runway threshold placed uniformly on the sphere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
GM_EARTH = 3.986004418e14
EARTH_ROTATION_RADPS = 7.2921151467e-5

# vertical-speed blend at glide capture and flare; rollout on the runway
TRANSITION_S = 8.0
ROLLOUT_S = 40.0


@dataclass(frozen=True)
class GeodeticPoint:
    latitude_deg: float
    longitude_deg: float
    altitude_m: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ValueError(f"latitude {self.latitude_deg} outside [-90, 90]")
        if not -180.0 <= self.longitude_deg < 180.0:
            raise ValueError(f"longitude {self.longitude_deg} outside [-180, 180)")


@dataclass(frozen=True)
class ConstellationConfig:
    satellite_count: int = 31
    orbit_radius_m: float = 26_560_000.0
    inclination_deg: float = 55.0
    plane_count: int = 6
    elevation_mask_deg: float = 5.0

    def __post_init__(self):
        if self.satellite_count < 4:
            raise ValueError("need at least 4 satellites")
        if self.plane_count < 1 or self.plane_count > self.satellite_count:
            raise ValueError("plane_count must be in [1, satellite_count]")
        if self.orbit_radius_m <= EARTH_RADIUS_M:
            raise ValueError("orbit radius must exceed the Earth radius")
        if not 0.0 <= self.elevation_mask_deg < 90.0:
            raise ValueError("elevation mask must be in [0, 90)")

    @classmethod
    def from_config(cls, cfg) -> "ConstellationConfig":
        return cls(cfg.satellite_count, cfg.orbit_radius_m, cfg.inclination_deg,
                   cfg.plane_count, cfg.elevation_mask_deg)


@dataclass(frozen=True)
class OrbitalElements:
    """Circular-orbit elements, one entry per satellite."""
    radius_m: float
    inclination_rad: float
    raan_rad: np.ndarray        # (S,)
    arg_latitude_rad: np.ndarray  # (S,) argument of latitude at t = 0
    plane: np.ndarray           # (S,) plane index

    @property
    def count(self) -> int:
        return len(self.raan_rad)

    @property
    def mean_motion(self) -> float:
        return math.sqrt(GM_EARTH / self.radius_m**3)

    @property
    def period_s(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class Trajectory:
    epoch_interval_s: float
    positions: np.ndarray   # (K, 3) ECEF
    scenario_seed: int
    threshold: GeodeticPoint
    heading_deg: float
    altitude_m: np.ndarray  # (K,) above the reference sphere

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def midpoint_epoch(self) -> int:
        return len(self.positions) // 2


@dataclass(frozen=True)
class VisibilityRecord:
    epoch: int
    satellite: int
    visible: bool
    elevation_rad: float


@dataclass(frozen=True)
class Visibility:
    """Dense visibility table: ``visible`` and ``elevation_rad`` are (K, S)."""
    visible: np.ndarray
    elevation_rad: np.ndarray

    def counts(self) -> np.ndarray:
        return self.visible.sum(axis=1)

    def records(self) -> list[VisibilityRecord]:
        K, S = self.visible.shape
        return [
            VisibilityRecord(k, s, bool(self.visible[k, s]), float(self.elevation_rad[k, s]))
            for k in range(K) for s in range(S)
        ]


def geodetic_to_ecef(p: GeodeticPoint, earth_radius_m: float = EARTH_RADIUS_M) -> np.ndarray:
    lat, lon = math.radians(p.latitude_deg), math.radians(p.longitude_deg)
    r = earth_radius_m + p.altitude_m
    return np.array([r * math.cos(lat) * math.cos(lon),
                     r * math.cos(lat) * math.sin(lon),
                     r * math.sin(lat)])


def ecef_to_geodetic(x: np.ndarray, earth_radius_m: float = EARTH_RADIUS_M) -> GeodeticPoint:
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    lat = math.degrees(math.asin(x[2] / r))
    lon = math.degrees(math.atan2(x[1], x[0]))
    if lon >= 180.0:
        lon -= 360.0
    return GeodeticPoint(lat, lon, r - earth_radius_m)


def enu_basis(p: np.ndarray) -> np.ndarray:
    """Rows are the local east, north, up unit vectors at ECEF point(s) ``p``.

    Returns shape (..., 3, 3).  The spherical-Earth "up" is the radial direction.
    """
    p = np.asarray(p, dtype=float)
    up = p / np.linalg.norm(p, axis=-1, keepdims=True)
    east = np.stack([-p[..., 1], p[..., 0], np.zeros_like(p[..., 0])], axis=-1)
    norm = np.linalg.norm(east, axis=-1, keepdims=True)
    # at the poles pick an arbitrary but fixed east
    east = np.where(norm > 1e-9, east / np.where(norm > 1e-9, norm, 1.0), np.array([0.0, 1.0, 0.0]))
    north = np.cross(up, east)
    return np.stack([east, north, up], axis=-2)


def build_constellation(cfg: ConstellationConfig) -> OrbitalElements:
    """Spread satellites over equally spaced planes, evenly phased within each.

    When the count does not divide evenly, the first ``count % planes`` planes
    carry one extra satellite (31 over 6 planes gives 6,5,5,5,5,5).
    """
    P, S = cfg.plane_count, cfg.satellite_count
    per_plane = [S // P + (1 if p < S % P else 0) for p in range(P)]
    raan, arg, plane = [], [], []
    for p, n in enumerate(per_plane):
        for j in range(n):
            raan.append(2.0 * math.pi * p / P)
            # stagger planes so satellites do not line up across planes
            arg.append((2.0 * math.pi * j / n + 2.0 * math.pi * p / S) % (2.0 * math.pi))
            plane.append(p)
    return OrbitalElements(
        radius_m=cfg.orbit_radius_m,
        inclination_rad=math.radians(cfg.inclination_deg),
        raan_rad=np.array(raan),
        arg_latitude_rad=np.array(arg),
        plane=np.array(plane, dtype=int),
    )


def satellite_positions(elements: OrbitalElements, epoch_time_s, earth_rotation: bool = True) -> np.ndarray:
    """ECEF satellite positions at one time (-> (S, 3)) or many times (-> (T, S, 3))."""
    t = np.asarray(epoch_time_s, dtype=float)
    if np.any(t < 0):
        raise ValueError("epoch time must be non-negative")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)[:, None]
    u = elements.arg_latitude_rad[None, :] + elements.mean_motion * t
    raan = elements.raan_rad[None, :]
    if earth_rotation:
        raan = raan - EARTH_ROTATION_RADPS * t
    ci, si = math.cos(elements.inclination_rad), math.sin(elements.inclination_rad)
    cu, su = np.cos(u), np.sin(u)
    cO, sO = np.cos(raan), np.sin(raan)
    r = elements.radius_m
    pos = np.stack([r * (cO * cu - sO * su * ci),
                    r * (sO * cu + cO * su * ci),
                    r * (su * si) * np.ones_like(cO)], axis=-1)
    return pos[0] if scalar else pos


def _altitude_profile(duration_s: float, dt: float, approach_alt: float,
                      glide_slope_deg: float, speed: float) -> tuple[np.ndarray, np.ndarray]:
    """Altitude above the runway and signed along-track distance for each epoch.

    Vertical speed ramps linearly over ``TRANSITION_S`` at glide capture and at the
    flare, so altitude is C1.  Touchdown happens ``ROLLOUT_S`` before the end.
    """
    K = int(round(duration_s / dt))
    t = np.arange(K) * dt
    t_end = (K - 1) * dt
    t_touch = t_end - ROLLOUT_S
    vz = speed * math.tan(math.radians(glide_slope_deg))
    descent = approach_alt / vz + TRANSITION_S  # glide capture to touchdown
    t_capture = t_touch - descent
    # piecewise-linear descent rate, integrated in closed form
    a, c, d = t_capture, t_touch - TRANSITION_S, t_touch

    def ramp_integral(x, x0):
        # integral of the unit ramp (x - x0)/T clipped to [0, 1]
        y = np.clip(x - x0, 0.0, TRANSITION_S)
        return y**2 / (2.0 * TRANSITION_S) + np.maximum(x - x0 - TRANSITION_S, 0.0)

    drop = vz * (ramp_integral(np.minimum(t, d), a) - ramp_integral(np.minimum(t, d), c))
    alt = np.maximum(approach_alt - drop, 0.0)
    along = speed * (t - t_touch)
    return alt, along


def sample_landing_trajectory(seed: int, duration_s: float = 568.0, epoch_interval_s: float = 1.0,
                              earth_radius_m: float = EARTH_RADIUS_M, glide_slope_deg: float = 3.0,
                              ground_speed_mps: float = 75.0, approach_altitude_m: float = 900.0) -> Trajectory:
    """Approach toward a runway at a uniformly random place and heading."""
    if duration_s < 100:
        raise ValueError("duration must be at least 100 s")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    lat = math.degrees(math.asin(rng.uniform(-1.0, 1.0)))
    lon = rng.uniform(-180.0, 180.0)
    heading = rng.uniform(0.0, 360.0)
    thr = GeodeticPoint(lat, lon, 0.0)

    alt, along = _altitude_profile(duration_s, epoch_interval_s, approach_altitude_m,
                                   glide_slope_deg, ground_speed_mps)
    u0 = geodetic_to_ecef(thr, 1.0)
    east, north, _ = enu_basis(u0)
    h = math.radians(heading)
    tangent = math.sin(h) * east + math.cos(h) * north
    delta = along / earth_radius_m  # great-circle angle from the threshold
    dirs = np.cos(delta)[:, None] * u0[None, :] + np.sin(delta)[:, None] * tangent[None, :]
    positions = (earth_radius_m + alt)[:, None] * dirs
    return Trajectory(epoch_interval_s, positions, seed, thr, heading, alt)


def elevation_angles(receivers: np.ndarray, sats: np.ndarray) -> np.ndarray:
    """Elevation of each satellite above each receiver's local horizon.

    ``receivers`` is (K, 3), ``sats`` is (K, S, 3); returns (K, S) radians.
    """
    los = sats - receivers[:, None, :]
    los /= np.linalg.norm(los, axis=-1, keepdims=True)
    up = receivers / np.linalg.norm(receivers, axis=-1, keepdims=True)
    return np.arcsin(np.clip(np.einsum("ksi,ki->ks", los, up), -1.0, 1.0))


def visibility(traj: Trajectory, sat_pos: np.ndarray, cfg: ConstellationConfig) -> Visibility:
    """Satellite ``s`` is visible at epoch ``k`` iff its elevation exceeds the mask.

    ``sat_pos`` holds ECEF satellite positions per epoch, shape (K, S, 3).
    """
    if sat_pos.shape[0] != len(traj):
        raise ValueError("satellite positions and trajectory disagree on epoch count")
    el = elevation_angles(traj.positions, sat_pos)
    visible = el > math.radians(cfg.elevation_mask_deg)
    return Visibility(visible, np.clip(el, 0.0, math.pi / 2))
