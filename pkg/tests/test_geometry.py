import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from share.geometry import (
    CameraPose,
    GeometryError,
    build_grid,
    from_cartesian,
    read_grid_csv,
    to_cartesian,
    write_grid_csv,
)


def test_default_grid_has_2500_poses():
    grid = build_grid(50, 50, (-60, 60), (0, 360), 2.5)
    assert len(grid) == 2500
    assert grid.n_theta == grid.n_phi == 50


def test_degenerate_grid():
    grid = build_grid(1, 1, (0, 0), (0, 0), 1.0)
    assert list(grid) == [CameraPose(0.0, 0.0, 1.0)]


def test_small_grid_values_and_order():
    grid = build_grid(3, 4, (-60, 60), (0, 360), 1.0)
    assert sorted(set(grid.thetas)) == [-60.0, 0.0, 60.0]
    assert sorted(set(grid.phis)) == [0.0, 90.0, 180.0, 270.0]
    keys = [(p.phi_deg, p.theta_deg) for p in grid]
    assert keys == sorted(keys)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_theta=0),
        dict(n_phi=-1),
        dict(theta_range=(10, -10)),
        dict(theta_range=(-70, 0)),
        dict(phi_range=(0, 400)),
        dict(radius=0),
    ],
)
def test_grid_rejects_bad_arguments(kwargs):
    with pytest.raises(GeometryError):
        build_grid(**kwargs)


def test_grid_spacing_is_uniform_and_poses_unique():
    grid = build_grid(50, 50)
    thetas = np.unique(grid.thetas)
    phis = np.unique(grid.phis)
    assert np.ptp(np.diff(thetas)) < 1e-9
    assert np.ptp(np.diff(phis)) < 1e-9
    assert len(set(grid)) == len(grid)
    assert phis.max() < 360


def test_pose_invariants():
    assert CameraPose(0, 360, 1) == CameraPose(0, 0, 1)
    assert CameraPose(0, -90, 1).phi_deg == 270.0
    with pytest.raises(GeometryError):
        CameraPose(61, 0, 1)
    with pytest.raises(GeometryError):
        CameraPose(0, 0, 0)


@pytest.mark.parametrize(
    "pose, expected",
    [
        (CameraPose(0, 0, 1), (1, 0, 0)),
        (CameraPose(0, 90, 1), (0, 1, 0)),
        (CameraPose(60, 0, 2), (1.0, 0, math.sqrt(3))),
    ],
)
def test_to_cartesian_axis_cases(pose, expected):
    np.testing.assert_allclose(to_cartesian(pose), expected, atol=1e-12)


@given(
    st.floats(-60, 60),
    st.floats(0, 359.999),
    st.floats(0.1, 100),
)
def test_cartesian_round_trip_and_radius(theta, phi, r):
    pose = CameraPose(theta, phi, r)
    point = to_cartesian(pose)
    assert abs(np.linalg.norm(point) - r) < 1e-9 * max(1.0, r)
    back = from_cartesian(point)
    assert abs(back.theta_deg - pose.theta_deg) < 1e-9
    d_phi = abs(back.phi_deg - pose.phi_deg)
    # near the wrap both 0 and 359.999... describe the same azimuth
    assert min(d_phi, 360 - d_phi) < 1e-9 or abs(theta) > 90 - 1e-6
    assert abs(back.radius - r) < 1e-9 * max(1.0, r)


def test_grid_csv_round_trip(tmp_path):
    grid = build_grid(5, 8, radius=2.5)
    path = write_grid_csv(tmp_path / "grid.csv", grid)
    lines = path.read_text().splitlines()
    assert lines[0] == "theta_deg,phi_deg,radius"
    assert len(lines) == 41
    back = read_grid_csv(path)
    assert (back.n_theta, back.n_phi) == (5, 8)
    np.testing.assert_allclose(back.as_array(), grid.as_array(), atol=1e-6)
