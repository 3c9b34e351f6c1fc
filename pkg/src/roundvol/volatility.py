"""Driving-volatility measures DV1-DV10.

=====  ==========================================  ==========================
name   statistic                                   series
=====  ==========================================  ==========================
DV1    population standard deviation               speed
DV2    population standard deviation               signed lon. acceleration
DV3    coefficient of variation (%)                speed
DV4    coefficient of variation (%)                positive lon. acceleration
DV5    coefficient of variation (%)                |negative lon. acceleration|
DV6    mean absolute deviation                     speed
DV7    mean absolute deviation                     signed lon. acceleration
DV8    quartile coefficient of variation (%)       speed
DV9    quartile coefficient of variation (%)       positive lon. acceleration
DV10   quartile coefficient of variation (%)       negative lon. acceleration
=====  ==========================================  ==========================

DV5 takes deceleration magnitudes, so it is positive. DV10 keeps the sign,
so it is negative, or zero when the quartiles coincide.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .kinematics import DEFAULT_FRAME_RATE, KinematicSeries, SeriesTooShort, kinematic_series
from .trajectory_io import TrackKey

DV_NAMES = tuple(f"DV{i}" for i in range(1, 11))
DEFAULT_MIN_SAMPLES = 50

ACCEL_PART_EMPTY = "accelPartEmpty"
DECEL_PART_EMPTY = "decelPartEmpty"
SHORT_SERIES = "shortSeries"
ZERO_MEAN_SPEED = "zeroMeanSpeed"
ZERO_SPEED_QUARTILES = "zeroSpeedQuartiles"


class VolatilityError(ValueError):
    pass


class EmptySeries(VolatilityError):
    pass


class InvalidFraction(VolatilityError):
    pass


class ZeroMean(VolatilityError):
    pass


class ZeroQuartileSum(VolatilityError):
    pass


def _as_series(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size == 0:
        raise EmptySeries("statistic of an empty series")
    return a


def _deviations(a: np.ndarray) -> np.ndarray:
    # Shift by the first sample first, so a constant series yields exact zeros.
    s = a - a[0]
    return s - s.mean()


def pop_std(x) -> float:
    """Standard deviation with divisor N."""
    return float(np.sqrt(np.mean(_deviations(_as_series(x)) ** 2)))


def mean_abs_dev(x) -> float:
    return float(np.mean(np.abs(_deviations(_as_series(x)))))


def quantile(x, p: float) -> float:
    """Quantile by linear interpolation between the order statistics at
    positions floor(h) and floor(h)+1, where h = (N-1)p."""
    if not 0.0 <= p <= 1.0:
        raise InvalidFraction(f"quantile fraction must lie in [0, 1], got {p}")
    s = np.sort(_as_series(x))
    h = (len(s) - 1) * p
    lo = int(math.floor(h))
    if lo >= len(s) - 1:
        return float(s[-1])
    return float(s[lo] + (h - lo) * (s[lo + 1] - s[lo]))


def coeff_var(x) -> float:
    a = _as_series(x)
    m = a.mean()
    if m == 0:
        raise ZeroMean("coefficient of variation undefined for zero mean")
    return float(100.0 * pop_std(a) / m)


def quantile_coeff_var(x) -> float:
    a = _as_series(x)
    q1, q3 = quantile(a, 0.25), quantile(a, 0.75)
    if q1 + q3 == 0:
        raise ZeroQuartileSum("quartile coefficient of variation undefined when Q1 + Q3 = 0")
    return float(100.0 * (q3 - q1) / (q3 + q1)) + 0.0  # no negative zero


@dataclass(frozen=True)
class FeatureVector:
    track_key: TrackKey
    vehicle_class: str
    dv: np.ndarray  # length 10; NaN marks an undefined measure
    flags: frozenset = field(default_factory=frozenset)

    @property
    def complete(self) -> bool:
        return bool(np.all(np.isfinite(self.dv)))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(DV_NAMES, map(float, self.dv)))


def compute_volatility(
    k: KinematicSeries,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    vehicle_class: str = "",
) -> FeatureVector:
    """All ten measures for one track.

    Raises :class:`SeriesTooShort` below ``min_samples`` frames. Measures that
    are undefined for this track (empty partition, zero denominator) are NaN and
    the reason is added to ``flags``.
    """
    n = len(k.speed)
    if n < max(min_samples, 1):
        raise SeriesTooShort(f"track {k.track_key}: {n} samples < minimum {min_samples}")
    dv = np.full(10, np.nan)
    flags = set()
    speed, lon = k.speed, k.lon_accel
    accel, decel = k.accel_part, k.decel_part

    dv[0] = pop_std(speed)
    dv[1] = pop_std(lon)
    dv[5] = mean_abs_dev(speed)
    dv[6] = mean_abs_dev(lon)
    try:
        dv[2] = coeff_var(speed)
    except ZeroMean:
        flags.add(ZERO_MEAN_SPEED)
    try:
        dv[7] = quantile_coeff_var(speed)
    except ZeroQuartileSum:
        flags.add(ZERO_MEAN_SPEED if ZERO_MEAN_SPEED in flags else ZERO_SPEED_QUARTILES)
    if len(accel):
        dv[3] = coeff_var(accel)
        dv[8] = quantile_coeff_var(accel)
    else:
        flags.add(ACCEL_PART_EMPTY)
    if len(decel):
        dv[4] = coeff_var(np.abs(decel))
        dv[9] = quantile_coeff_var(decel)
    else:
        flags.add(DECEL_PART_EMPTY)
    return FeatureVector(k.track_key, vehicle_class, dv, frozenset(flags))


@dataclass
class FeatureSet:
    vectors: list[FeatureVector]
    excluded: Counter = field(default_factory=Counter)

    @property
    def complete(self) -> list[FeatureVector]:
        return [v for v in self.vectors if v.complete]

    def incomplete_counts(self) -> dict[str, int]:
        c = Counter()
        for v in self.vectors:
            if not v.complete:
                c.update(v.flags)
        return dict(sorted(c.items()))


def _one(args):
    track, min_samples, frame_rate = args
    try:
        return compute_volatility(kinematic_series(track, frame_rate), min_samples, track.meta.class_name)
    except SeriesTooShort:
        return None


def extract_features(
    tracks,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    frame_rate: float = DEFAULT_FRAME_RATE,
    jobs: int = 1,
) -> FeatureSet:
    """Volatility vectors for every track long enough, in track-key order."""
    tracks = sorted(tracks, key=lambda t: t.key)
    work = [(t, min_samples, frame_rate) for t in tracks]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_one(w) for w in work]
    vectors = [r for r in results if r is not None]
    excluded = Counter({SHORT_SERIES: len(results) - len(vectors)}) if len(vectors) < len(results) else Counter()
    return FeatureSet(vectors, excluded)


FEATURE_HEADER = ("recordingId", "trackId", "class") + DV_NAMES


def features_frame(vectors) -> pd.DataFrame:
    rows = [(v.track_key[0], v.track_key[1], v.vehicle_class, *map(float, v.dv)) for v in vectors]
    frame = pd.DataFrame(rows, columns=list(FEATURE_HEADER))
    return frame.astype({"recordingId": "int64", "trackId": "int64", "class": "object"})


def write_features(vectors, path) -> None:
    features_frame(vectors).to_csv(path, index=False, na_rep="NA", lineterminator="\n")


def read_features(path) -> list[FeatureVector]:
    path = Path(path)
    frame = pd.read_csv(path, na_values=["NA"], keep_default_na=False, dtype={"class": str})
    missing = [c for c in FEATURE_HEADER if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: features file lacks columns {missing}")
    dv = frame[list(DV_NAMES)].to_numpy(dtype=np.float64)
    return [
        FeatureVector((int(r), int(t)), str(c), dv[i])
        for i, (r, t, c) in enumerate(zip(frame["recordingId"], frame["trackId"], frame["class"]))
    ]
