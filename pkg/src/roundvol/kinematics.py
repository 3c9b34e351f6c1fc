"""Per-track scalar kinematic series: speed, longitudinal acceleration, jerk."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectory_io import Track, TrackKey

DEFAULT_FRAME_RATE = 25.0


class SeriesTooShort(ValueError):
    pass


@dataclass(frozen=True)
class KinematicSeries:
    track_key: TrackKey
    speed: np.ndarray
    lon_accel: np.ndarray
    accel_part: np.ndarray
    decel_part: np.ndarray
    jerk: np.ndarray | None = None
    frame_rate: float = DEFAULT_FRAME_RATE

    @property
    def zero_accel_count(self) -> int:
        return len(self.lon_accel) - len(self.accel_part) - len(self.decel_part)


def speed_from_velocity(vx, vy) -> np.ndarray:
    return np.hypot(np.asarray(vx, dtype=np.float64), np.asarray(vy, dtype=np.float64))


def lon_accel_from_components(ax, ay, heading_deg) -> np.ndarray:
    """Project (ax, ay) onto the heading direction (degrees, counter-clockwise from +x)."""
    h = np.deg2rad(np.asarray(heading_deg, dtype=np.float64))
    return np.asarray(ax, dtype=np.float64) * np.cos(h) + np.asarray(ay, dtype=np.float64) * np.sin(h)


def derive_speed(track: Track) -> np.ndarray:
    r = track.records
    return speed_from_velocity(r["xVelocity"].to_numpy(), r["yVelocity"].to_numpy())


def derive_lon_accel(track: Track) -> np.ndarray:
    """Longitudinal acceleration; the ``lonAcceleration`` column wins when present."""
    r = track.records
    if "lonAcceleration" in r.columns:
        return r["lonAcceleration"].to_numpy(dtype=np.float64)
    return lon_accel_from_components(
        r["xAcceleration"].to_numpy(), r["yAcceleration"].to_numpy(), r["heading"].to_numpy()
    )


def partition_accel(lon_accel) -> tuple[np.ndarray, np.ndarray]:
    """Split into (positive values, negative values), order kept; exact zeros dropped."""
    a = np.asarray(lon_accel, dtype=np.float64)
    return a[a > 0], a[a < 0]


def derive_jerk(lon_accel, frame_rate: float = DEFAULT_FRAME_RATE) -> np.ndarray:
    a = np.asarray(lon_accel, dtype=np.float64)
    if len(a) < 2:
        raise SeriesTooShort(f"jerk needs at least 2 samples, got {len(a)}")
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    return np.diff(a) * frame_rate


def kinematic_series(track: Track, frame_rate: float = DEFAULT_FRAME_RATE) -> KinematicSeries:
    speed = derive_speed(track)
    lon = derive_lon_accel(track)
    accel, decel = partition_accel(lon)
    jerk = derive_jerk(lon, frame_rate) if len(lon) >= 2 else None
    return KinematicSeries(track.key, speed, lon, accel, decel, jerk, frame_rate)
