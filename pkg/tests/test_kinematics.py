import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roundvol.kinematics import (
    SeriesTooShort,
    derive_jerk,
    derive_lon_accel,
    derive_speed,
    kinematic_series,
    lon_accel_from_components,
    partition_accel,
    speed_from_velocity,
)
from roundvol.trajectory_io import Track, TrackMeta, VehicleClass


def _track(**cols):
    n = len(next(iter(cols.values())))
    base = {"recordingId": [0] * n, "trackId": [0] * n, "frame": list(range(n))}
    meta = TrackMeta(0, 0, 0, n - 1, n, 2.0, 4.5, VehicleClass.CAR, "car")
    return Track(meta, pd.DataFrame({**base, **cols}))


def test_speed_reference_row_matches_lon_velocity():
    t = _track(xVelocity=[-0.2620], yVelocity=[0.7691], lonVelocity=[0.8123])
    (v,) = derive_speed(t)
    assert v == pytest.approx(0.8125, abs=5e-5)
    assert abs(v - 0.8123) < 3e-4


@pytest.mark.parametrize("vx,vy,v", [(0, 0, 0), (3, 4, 5)])
def test_speed_simple(vx, vy, v):
    assert derive_speed(_track(xVelocity=[vx], yVelocity=[vy]))[0] == v


def test_lon_accel_column_verbatim():
    t = _track(xAcceleration=[9.0], yAcceleration=[9.0], heading=[45.0], lonAcceleration=[0.52])
    assert derive_lon_accel(t).tolist() == [0.52]


@pytest.mark.parametrize("ax,ay,h,expected", [(1.0, 0.0, 0.0, 1.0), (0.0, 2.0, 90.0, 2.0), (1.0, 1.0, 180.0, -1.0)])
def test_lon_accel_projection(ax, ay, h, expected):
    t = _track(xAcceleration=[ax], yAcceleration=[ay], heading=[h])
    assert derive_lon_accel(t)[0] == pytest.approx(expected, abs=1e-12)


def test_partition():
    a, d = partition_accel([-1, 0, 2, -3, 4])
    assert a.tolist() == [2, 4] and d.tolist() == [-1, -3]
    a, d = partition_accel([0, 0, 0])
    assert a.size == 0 and d.size == 0
    a, d = partition_accel([1, 2, 3])
    assert a.tolist() == [1, 2, 3] and d.size == 0


@given(st.lists(st.sampled_from([-2.0, -0.5, 0.0, 0.25, 3.0]), max_size=40))
def test_partition_accounts_for_every_sample(xs):
    a, d = partition_accel(xs)
    zeros = sum(1 for x in xs if x == 0)
    assert len(a) + len(d) + zeros == len(xs)
    assert list(a) == [x for x in xs if x > 0] and list(d) == [x for x in xs if x < 0]


def test_jerk_examples():
    assert derive_jerk([0, 1], 25).tolist() == [25]
    assert np.all(derive_jerk([0.7] * 5, 25) == 0)
    np.testing.assert_allclose(derive_jerk([0, 0.1, 0.3], 10), [1.0, 2.0], atol=1e-12)
    with pytest.raises(SeriesTooShort):
        derive_jerk([1.0], 25)


@given(st.floats(-5, 5), st.floats(-1, 1), st.integers(2, 50))
def test_jerk_of_linear_series_is_constant(a0, slope, n):
    j = derive_jerk(a0 + slope * np.arange(n), 25.0)
    np.testing.assert_allclose(j, slope * 25.0, atol=1e-9)


@given(st.lists(st.tuples(st.floats(-40, 40), st.floats(-40, 40)), min_size=1, max_size=30),
       st.floats(0, 2 * math.pi))
def test_speed_rotation_invariant(vel, theta):
    vx, vy = np.array(vel).T
    c, s = math.cos(theta), math.sin(theta)
    rotated = speed_from_velocity(c * vx - s * vy, s * vx + c * vy)
    np.testing.assert_allclose(rotated, speed_from_velocity(vx, vy), atol=1e-9)


def test_projection_equals_dot_with_heading_unit_vector():
    rng = np.random.default_rng(3)
    ax, ay, h = rng.normal(size=50), rng.normal(size=50), rng.uniform(0, 360, 50)
    direct = [x * math.cos(math.radians(d)) + y * math.sin(math.radians(d)) for x, y, d in zip(ax, ay, h)]
    np.testing.assert_allclose(lon_accel_from_components(ax, ay, h), direct, atol=1e-12)


def test_kinematic_series():
    t = _track(xVelocity=[3.0, 0.0, 1.0], yVelocity=[4.0, 0.0, 0.0], lonAcceleration=[0.5, 0.0, -0.5])
    k = kinematic_series(t, frame_rate=10)
    assert k.track_key == (0, 0)
    assert k.speed.tolist() == [5.0, 0.0, 1.0]
    assert k.accel_part.tolist() == [0.5] and k.decel_part.tolist() == [-0.5]
    assert k.zero_accel_count == 1
    np.testing.assert_allclose(k.jerk, [-5.0, -5.0])
