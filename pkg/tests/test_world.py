import math

import numpy as np
import pytest

from vegplan.exceptions import OutOfBounds
from vegplan.geometry import extract_pitch, extract_roll
from vegplan.support import fit_surf_plane
from vegplan.world import (
    Bump,
    Obstacle,
    SensorNoise,
    Vegetation,
    WorldModel,
    cloud_points,
    ground_truth_plane,
    sample_cloud,
    simulate_traverse,
)

FLAT = WorldModel(bounds=(0, 4, 0, 4))
RAMP = WorldModel(bounds=(0, 4, 0, 4), ramp=(0.0, 0.2, 0.0))
BUMPY = WorldModel(bounds=(0, 6, 0, 6), ramp=(0.1, 0.05, -0.03),
                   bumps=(Bump((2, 3), 0.3, 0.8), Bump((4, 1), -0.2, 1.2)))


def fd_attitude(world, x, y, h=1e-6):
    gx = (world.support(x + h, y) - world.support(x - h, y)) / (2 * h)
    gy = (world.support(x, y + h) - world.support(x, y - h)) / (2 * h)
    n = np.array([-gx, -gy, 1.0])
    n /= np.linalg.norm(n)
    return math.atan2(n[1], math.hypot(n[0], n[2])), math.atan2(-n[0], n[2])


def test_density_zero_is_empty():
    assert len(sample_cloud(FLAT, SensorNoise(density=0))) == 0


def test_flat_vegetation_cloud():
    w = WorldModel(bounds=(0, 2, 0, 2), vegetation=Vegetation(base=0.15))
    pts = cloud_points(w, SensorNoise(cloud_sigma=0.0, density=400), seed=3)
    assert len(pts) > 1000
    assert np.all(pts[:, 2] == 0.15)


def test_cloud_noise_level():
    w = WorldModel(bounds=(0, 5, 0, 5), ramp=(0, 0.1, 0), vegetation=Vegetation(0.15, amplitude=0.05,
                                                                                  wavelength=(2, 3)))
    pts = cloud_points(w, SensorNoise(cloud_sigma=0.02, density=900), seed=1)
    assert len(pts) >= 10_000
    res = pts[:, 2] - w.support(pts[:, 0], pts[:, 1]) - w.vegetation_height(pts[:, 0], pts[:, 1])
    assert 0.015 <= res.std() <= 0.025


def test_obstacle_top_surface():
    w = WorldModel(bounds=(0, 4, 0, 4), vegetation=Vegetation(0.1), obstacles=(Obstacle((2, 2), 0.5, 1.2),))
    pts = cloud_points(w, SensorNoise(cloud_sigma=0.0, density=400))
    inside = np.hypot(pts[:, 0] - 2, pts[:, 1] - 2) <= 0.5
    assert np.all(pts[inside, 2] == 1.2) and np.all(pts[~inside, 2] == 0.1)


def test_cloud_deterministic():
    n = SensorNoise()
    a = cloud_points(BUMPY, n, seed=4)
    np.testing.assert_array_equal(a, cloud_points(BUMPY, n, seed=4))
    assert not np.array_equal(a, cloud_points(BUMPY, n, seed=5))


def test_region_outside_bounds():
    with pytest.raises(OutOfBounds):
        sample_cloud(FLAT, SensorNoise(), region=(-1, 1, 0, 1))


def test_vegetation_nonnegative(rng):
    veg = Vegetation(base=0.05, gradient=(0.01, -0.02), amplitude=0.2, wavelength=(1, 2))
    x, y = rng.uniform(-10, 10, size=(2, 5000))
    assert np.all(veg.value(x, y) >= 0)


def test_ground_truth_flat_and_ramp():
    p = ground_truth_plane(FLAT, 1.0, 1.0)
    assert (p.z, p.roll, p.pitch, p.var_z) == (0.0, 0.0, 0.0, 0.0)
    q = ground_truth_plane(RAMP, 1.0, 2.0)
    assert abs(q.pitch) == pytest.approx(math.atan(0.2), abs=1e-12)
    assert q.roll == pytest.approx(0.0, abs=1e-12)
    assert (q.roll, q.pitch) == pytest.approx(fd_attitude(RAMP, 1.0, 2.0), abs=1e-8)
    with pytest.raises(OutOfBounds):
        ground_truth_plane(FLAT, 5.0, 1.0)


def test_ground_truth_bumps_match_finite_differences(rng):
    for x, y in rng.uniform(0.5, 5.5, size=(50, 2)):
        p = ground_truth_plane(BUMPY, x, y)
        assert (p.roll, p.pitch) == pytest.approx(fd_attitude(BUMPY, x, y), abs=1e-6)


def test_traverse_flat_and_ramp():
    h = simulate_traverse(FLAT, SensorNoise(), [(0.5, 0.5), (3, 3)], 0.1)
    assert np.all(h.positions()[:, 2] == 0) and np.allclose(h.attitudes(), 0)
    h = simulate_traverse(RAMP, SensorNoise(), [(0.5, 1), (3, 3)], 0.1)
    want = ground_truth_plane(RAMP, 1, 1).pitch
    for s in h:
        assert extract_pitch(s.rotation) == pytest.approx(want, abs=1e-9)
        assert extract_roll(s.rotation) == pytest.approx(0.0, abs=1e-9)


def test_traverse_attitude_noise():
    w = WorldModel(bounds=(0, 200, 0, 2))
    noise = SensorNoise(odom_att_sigma=0.01)
    h = simulate_traverse(w, noise, [(0.5, 1), (150, 1)], 0.1, seed=2, max_len=2000)
    att = h.attitudes()
    assert len(att) >= 1000
    assert att.std() == pytest.approx(0.01, rel=0.2)


def test_traverse_deterministic_and_bounds():
    n = SensorNoise(odom_pos_sigma=0.01, odom_att_sigma=0.01)
    a = simulate_traverse(BUMPY, n, [(1, 1), (4, 5)], 0.1, seed=9)
    b = simulate_traverse(BUMPY, n, [(1, 1), (4, 5)], 0.1, seed=9)
    np.testing.assert_array_equal(a.positions(), b.positions())
    with pytest.raises(OutOfBounds):
        simulate_traverse(FLAT, n, [(1, 1), (6, 1)], 0.1)


def test_surface_fit_consistent_with_truth():
    w = WorldModel(bounds=(0, 4, 0, 4), ramp=(0.2, 0.05, 0.02), vegetation=Vegetation(0.15))
    cloud = sample_cloud(w, SensorNoise(cloud_sigma=0.0, density=2500), seed=0)
    for x, y in [(1, 1), (2.5, 3), (3.2, 0.7)]:
        dz = fit_surf_plane(cloud, (x, y)).z - ground_truth_plane(w, x, y).z
        assert abs(dz - 0.15) < 5e-3
