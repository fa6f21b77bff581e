"""Synthetic vegetated worlds with analytic ground truth, and sensor simulation.

A world is a rigid support surface ``g(x, y)`` (planar ramp plus Gaussian
bumps), a vegetation height field ``h(x, y) >= 0`` lying on top of it, and
rigid cylindrical obstacles.  The simulated LiDAR map only sees the top
surface: ``g + h`` on vegetation, ``g + height`` over obstacle footprints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import OutOfBounds
from .geometry import (
    PlaneEstimate,
    PointCloudIndex,
    RobotPoseSample,
    TrajectoryHistory,
    attitude_from_normal,
    attitude_to_rotation,
)


@dataclass(frozen=True)
class Bump:
    """Gaussian bump ``amplitude * exp(-r^2 / (2 width^2))``."""

    center: tuple
    amplitude: float
    width: float

    def value(self, x, y):
        r2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        return self.amplitude * np.exp(-r2 / (2.0 * self.width ** 2))

    def grad(self, x, y):
        v = self.value(x, y)
        w2 = self.width ** 2
        return -v * (x - self.center[0]) / w2, -v * (y - self.center[1]) / w2


@dataclass(frozen=True)
class Obstacle:
    """Rigid vertical cylinder."""

    center: tuple
    radius: float
    height: float


@dataclass(frozen=True)
class Vegetation:
    """Vegetation height ``base + gradient.(x, y) + wave + bumps``, clipped at 0.

    The wave term is ``amplitude * sin(2 pi x / wavelength_x) *
    cos(2 pi y / wavelength_y)``; an infinite wavelength flattens its axis.
    """

    base: float = 0.0
    gradient: tuple = (0.0, 0.0)
    amplitude: float = 0.0
    wavelength: tuple = (math.inf, math.inf)
    bumps: tuple = ()

    def value(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        h = self.base + self.gradient[0] * x + self.gradient[1] * y
        if self.amplitude:
            kx = 2 * math.pi / self.wavelength[0] if math.isfinite(self.wavelength[0]) else 0.0
            ky = 2 * math.pi / self.wavelength[1] if math.isfinite(self.wavelength[1]) else 0.0
            sx = np.sin(kx * x) if kx else 1.0
            h = h + self.amplitude * sx * np.cos(ky * y)
        for b in self.bumps:
            h = h + b.value(x, y)
        return np.clip(h, 0.0, None)


@dataclass(frozen=True)
class WorldModel:
    bounds: tuple = (0.0, 20.0, 0.0, 20.0)
    ramp: tuple = (0.0, 0.0, 0.0)
    bumps: tuple = ()
    vegetation: Vegetation = field(default_factory=Vegetation)
    obstacles: tuple = ()

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"invalid bounds {self.bounds}")
        for ob in self.obstacles:
            if ob.radius <= 0 or ob.height <= 0:
                raise ValueError(f"invalid obstacle {ob}")

    def in_bounds(self, x, y) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return bool(xmin <= x <= xmax and ymin <= y <= ymax)

    def support(self, x, y):
        """Rigid ground height g(x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = self.ramp[0] + self.ramp[1] * x + self.ramp[2] * y
        for b in self.bumps:
            z = z + b.value(x, y)
        return z

    def support_grad(self, x, y):
        gx = np.full(np.shape(x), self.ramp[1], dtype=float)
        gy = np.full(np.shape(y), self.ramp[2], dtype=float)
        for b in self.bumps:
            bx, by = b.grad(x, y)
            gx = gx + bx
            gy = gy + by
        return gx, gy

    def vegetation_height(self, x, y):
        return self.vegetation.value(x, y)

    def obstacle_height(self, x, y):
        """Height of the obstacle covering each point, 0 where there is none."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for ob in self.obstacles:
            inside = (x - ob.center[0]) ** 2 + (y - ob.center[1]) ** 2 <= ob.radius ** 2
            out = np.where(inside, np.maximum(out, ob.height), out)
        return out

    def surface(self, x, y):
        """Top surface a range sensor sees."""
        obs = self.obstacle_height(x, y)
        return self.support(x, y) + np.where(obs > 0, obs, self.vegetation_height(x, y))

    def obstacle_clearance(self, pts) -> float:
        """Smallest 2D distance from any of ``pts`` to an obstacle, 0 if inside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        best = math.inf
        for ob in self.obstacles:
            d = np.hypot(pts[:, 0] - ob.center[0], pts[:, 1] - ob.center[1]) - ob.radius
            best = min(best, float(np.min(d)))
        return max(best, 0.0)


@dataclass(frozen=True)
class SensorNoise:
    cloud_sigma: float = 0.02
    odom_pos_sigma: float = 0.0
    odom_att_sigma: float = 0.0
    density: float = 2500.0

    def __post_init__(self):
        if min(self.cloud_sigma, self.odom_pos_sigma, self.odom_att_sigma, self.density) < 0:
            raise ValueError("noise parameters must be non-negative")


def _check_region(world: WorldModel, region):
    xmin, xmax, ymin, ymax = region
    bx0, bx1, by0, by1 = world.bounds
    if xmin < bx0 or xmax > bx1 or ymin < by0 or ymax > by1 or xmax < xmin or ymax < ymin:
        raise OutOfBounds(f"region {region} not inside bounds {world.bounds}")


def cloud_points(world: WorldModel, noise: SensorNoise, region=None, seed: int = 0) -> np.ndarray:
    """Raw ``(n, 3)`` points of a simulated registered map."""
    region = world.bounds if region is None else tuple(region)
    _check_region(world, region)
    if noise.density <= 0:
        return np.empty((0, 3))
    xmin, xmax, ymin, ymax = region
    spacing = 1.0 / math.sqrt(noise.density)
    nx = max(1, int(math.ceil((xmax - xmin) / spacing)))
    ny = max(1, int(math.ceil((ymax - ymin) / spacing)))
    dx, dy = (xmax - xmin) / nx, (ymax - ymin) / ny
    rng = np.random.default_rng(seed)
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    x = xmin + (ii.ravel() + rng.random(nx * ny)) * dx
    y = ymin + (jj.ravel() + rng.random(nx * ny)) * dy
    z = world.surface(x, y)
    if noise.cloud_sigma > 0:
        z = z + rng.normal(0.0, noise.cloud_sigma, size=z.shape)
    return np.column_stack([x, y, z])


def sample_cloud(world: WorldModel, noise: SensorNoise, region=None, seed: int = 0,
                 cell_size: float = 0.15) -> PointCloudIndex:
    """Simulated map on a jittered grid of ``noise.density`` points per m^2."""
    return PointCloudIndex(cloud_points(world, noise, region, seed), cell_size)


def ground_truth_plane(world: WorldModel, x: float, y: float) -> PlaneEstimate:
    """Exact support plane of the rigid ground at ``(x, y)``."""
    if not world.in_bounds(x, y):
        raise OutOfBounds(f"({x}, {y}) outside {world.bounds}")
    gx, gy = world.support_grad(x, y)
    roll, pitch = attitude_from_normal((-float(gx), -float(gy), 1.0))
    return PlaneEstimate(float(x), float(y), float(world.support(x, y)), roll, pitch)


def traverse_points(waypoints: Sequence, stride: float) -> tuple[np.ndarray, np.ndarray]:
    """Points every ``stride`` meters along a polyline, with segment headings."""
    wp = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if stride <= 0:
        raise ValueError("stride must be positive")
    if len(wp) < 2:
        return wp.copy(), np.zeros(len(wp))
    seg = np.diff(wp, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = np.arange(0.0, cum[-1] + 1e-12, stride)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / np.where(seg_len[idx] > 0, seg_len[idx], 1.0)
    pts = wp[idx] + seg[idx] * frac[:, None]
    yaw = np.arctan2(seg[idx, 1], seg[idx, 0])
    return pts, yaw


def simulate_traverse(world: WorldModel, noise: SensorNoise, waypoints, stride: float,
                      seed: int = 0, max_len: int = 50, min_stride: float = 0.05,
                      sigma_n_pro: float = 1e-4) -> TrajectoryHistory:
    """Noisy odometry of a robot driving along ``waypoints`` on the rigid ground.

    Each sample's rotation is the ZYX composition of the ground-truth
    roll/pitch (perturbed by ``odom_att_sigma``) with the segment heading as
    yaw.  Positions are perturbed by ``odom_pos_sigma`` per axis.
    """
    pts, yaw = traverse_points(waypoints, stride)
    for x, y in pts:
        if not world.in_bounds(x, y):
            raise OutOfBounds(f"waypoint path leaves bounds at ({x:.3f}, {y:.3f})")
    rng = np.random.default_rng(seed)
    hist = TrajectoryHistory(max_len, min_stride, sigma_n_pro)
    for i, ((x, y), psi) in enumerate(zip(pts, yaw)):
        truth = ground_truth_plane(world, x, y)
        pos = np.array([x, y, truth.z])
        roll, pitch = truth.roll, truth.pitch
        if noise.odom_pos_sigma > 0:
            pos = pos + rng.normal(0.0, noise.odom_pos_sigma, size=3)
        if noise.odom_att_sigma > 0:
            roll += rng.normal(0.0, noise.odom_att_sigma)
            pitch += rng.normal(0.0, noise.odom_att_sigma)
        hist.append(RobotPoseSample(pos, attitude_to_rotation(roll, pitch, psi), float(i)))
    return hist
