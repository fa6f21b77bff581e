"""Shared geometric types, attitude extraction and the 2D point-cloud index.

Attitude convention
-------------------
Rotations are composed Z-Y-X (yaw, then pitch, then roll).  Roll and pitch
are reported in the convention of :func:`extract_pitch` / :func:`extract_roll`:
pitch is positive when the body x-axis points upward and roll is positive
when the body y-axis (left side) points downward.  This is the standard
aerospace ZYX composition with pitch and roll negated, so

    R = Rz(yaw) @ Ry(-pitch) @ Rx(-roll)

and extraction of ``(roll, pitch)`` from ``R`` is exact and independent of
``yaw``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .exceptions import GimbalLock

GIMBAL_TOL = 1e-8


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def attitude_to_rotation(roll: float, pitch: float, yaw: float = 0.0) -> np.ndarray:
    """Compose a rotation matrix from roll, pitch and yaw (ZYX order)."""
    return rot_z(yaw) @ rot_y(-pitch) @ rot_x(-roll)


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return bool(
        np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def extract_pitch(R: np.ndarray) -> float:
    """Pitch of a rotation matrix, ``atan2(R31, hypot(R32, R33))``."""
    R = np.asarray(R, dtype=float)
    return math.atan2(R[2, 0], math.hypot(R[2, 1], R[2, 2]))


def extract_roll(R: np.ndarray) -> float:
    """Roll of a rotation matrix.

    Raises
    ------
    GimbalLock
        If ``|cos(pitch)| <= 1e-8``.
    """
    R = np.asarray(R, dtype=float)
    cp = math.cos(extract_pitch(R))
    if abs(cp) <= GIMBAL_TOL:
        raise GimbalLock(f"cos(pitch) = {cp:.3e}, roll is undefined")
    return math.atan2(-R[2, 1] / cp, R[2, 2] / cp)


def slope_from_attitude(roll: float, pitch: float) -> float:
    """Inclination of a plane with the given roll and pitch, in radians."""
    c = math.cos(roll) * math.cos(pitch)
    return math.acos(min(1.0, max(-1.0, c)))


def attitude_from_normal(normal: Sequence[float]) -> tuple[float, float]:
    """Heading-free ``(roll, pitch)`` of a plane with the given normal.

    The normal is flipped to point upward if needed.  The result is the
    attitude of a body with yaw 0 resting on the plane.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if n[2] < 0:
        n = -n
    pitch = math.atan2(-n[0], n[2])
    roll = math.atan2(n[1], math.hypot(n[0], n[2]))
    return roll, pitch


def normal_from_attitude(roll: float, pitch: float) -> np.ndarray:
    """Upward unit normal of a plane with the given heading-free attitude."""
    return attitude_to_rotation(roll, pitch)[:, 2].copy()


@dataclass(frozen=True)
class PlaneEstimate:
    """A local plane: center, attitude and per-channel variances.

    Used for every plane flavour in the package (surface fit,
    proprioceptive, exteroceptive and fused support plane).
    """

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    var_z: float = 0.0
    var_roll: float = 0.0
    var_pitch: float = 0.0

    def __post_init__(self):
        if min(self.var_z, self.var_roll, self.var_pitch) < 0:
            raise ValueError("plane variances must be non-negative")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def slope(self) -> float:
        return slope_from_attitude(self.roll, self.pitch)

    def channel(self, name: str) -> tuple[float, float]:
        """``(value, variance)`` for channel ``'z'``, ``'roll'`` or ``'pitch'``."""
        return getattr(self, name), getattr(self, "var_" + name)

    def with_channels(self, **kw) -> "PlaneEstimate":
        return replace(self, **kw)


@dataclass(frozen=True)
class RobotPoseSample:
    position: np.ndarray
    rotation: np.ndarray
    time: float

    @property
    def roll(self) -> float:
        return extract_roll(self.rotation)

    @property
    def pitch(self) -> float:
        return extract_pitch(self.rotation)


class TrajectoryHistory:
    """The most recent proprioceptive pose samples.

    Samples closer than ``min_stride`` (horizontally) to the previous kept
    sample are skipped, samples in gimbal lock are dropped, and only the
    last ``max_len`` samples are retained.

    Parameters
    ----------
    max_len : int
        History length N.
    min_stride : float
        Minimum horizontal spacing between consecutive samples, meters.
    sigma_n_pro : float
        Constant odometry noise variance of the height channel, m^2.
    """

    def __init__(self, max_len: int = 50, min_stride: float = 0.05,
                 sigma_n_pro: float = 1e-4):
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self.max_len = int(max_len)
        self.min_stride = float(min_stride)
        self.sigma_n_pro = float(sigma_n_pro)
        self._samples: deque[RobotPoseSample] = deque(maxlen=self.max_len)

    def append(self, sample: RobotPoseSample) -> bool:
        """Add a sample; return whether it was kept."""
        if self._samples:
            last = self._samples[-1]
            if sample.time <= last.time:
                raise ValueError("sample times must be strictly increasing")
            step = np.hypot(*(np.asarray(sample.position[:2]) - last.position[:2]))
            if step < self.min_stride:
                return False
        try:
            sample.roll
        except GimbalLock:
            return False
        self._samples.append(RobotPoseSample(
            np.asarray(sample.position, dtype=float).copy(),
            np.asarray(sample.rotation, dtype=float).copy(),
            float(sample.time),
        ))
        return True

    def extend(self, samples: Iterable[RobotPoseSample]) -> None:
        for s in samples:
            self.append(s)

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self) -> Iterator[RobotPoseSample]:
        return iter(self._samples)

    def __getitem__(self, i: int) -> RobotPoseSample:
        return self._samples[i]

    @property
    def samples(self) -> list[RobotPoseSample]:
        return list(self._samples)

    def positions(self) -> np.ndarray:
        """``(n, 3)`` array of sample positions."""
        if not self._samples:
            return np.empty((0, 3))
        return np.array([s.position for s in self._samples])

    def attitudes(self) -> np.ndarray:
        """``(n, 2)`` array of ``(roll, pitch)``."""
        if not self._samples:
            return np.empty((0, 2))
        return np.array([(s.roll, s.pitch) for s in self._samples])

    def training_data(self) -> tuple[np.ndarray, np.ndarray]:
        """Horizontal inputs ``(n, 2)`` and outputs ``(z, roll, pitch)``."""
        pos = self.positions()
        return pos[:, :2].copy(), np.column_stack([pos[:, 2], self.attitudes()])


class PointCloudIndex:
    """Uniform 2D grid over the ``(x, y)`` coordinates of a point cloud.

    Parameters
    ----------
    points : array_like, shape (n, 3)
    cell_size : float
        Grid cell edge; queries are cheapest when the radius equals it.
    """

    def __init__(self, points, cell_size: float = 0.15):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        keys = np.floor(pts[:, :2] / self.cell_size).astype(np.int64)
        order = np.lexsort((keys[:, 1], keys[:, 0]))
        self.points = pts[order]
        self.points.setflags(write=False)
        keys = keys[order]
        self._cells: dict[tuple[int, int], tuple[int, int]] = {}
        if len(keys):
            change = np.any(np.diff(keys, axis=0) != 0, axis=1)
            starts = np.concatenate([[0], np.flatnonzero(change) + 1])
            stops = np.concatenate([starts[1:], [len(keys)]])
            for a, b in zip(starts.tolist(), stops.tolist()):
                self._cells[(int(keys[a, 0]), int(keys[a, 1]))] = (a, b)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, center, radius: float) -> np.ndarray:
        """Points whose 2D distance to ``center`` is at most ``radius``."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        cx, cy = float(center[0]), float(center[1])
        c = self.cell_size
        i0, i1 = math.floor((cx - radius) / c), math.floor((cx + radius) / c)
        j0, j1 = math.floor((cy - radius) / c), math.floor((cy + radius) / c)
        chunks = []
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                span = self._cells.get((i, j))
                if span is not None:
                    chunks.append(self.points[span[0]:span[1]])
        if not chunks:
            return np.empty((0, 3))
        cand = np.concatenate(chunks)
        d2 = (cand[:, 0] - cx) ** 2 + (cand[:, 1] - cy) ** 2
        return cand[d2 <= radius * radius]


def radius_query(index: PointCloudIndex, center, radius: float) -> np.ndarray:
    return index.query(center, radius)


def _data_lines(path: Path) -> Iterator[list[float]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                yield [float(v) for v in line.split()]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None


def load_cloud(path, cell_size: float = 0.15) -> PointCloudIndex:
    """Read an ASCII ``x y z`` cloud file."""
    rows = list(_data_lines(Path(path)))
    if any(len(r) != 3 for r in rows):
        raise ValueError(f"{path}: expected 3 columns per line")
    return PointCloudIndex(np.array(rows).reshape(-1, 3), cell_size)


def save_cloud(points, path) -> None:
    pts = np.asarray(points.points if isinstance(points, PointCloudIndex) else points)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x y z [m]\n")
        for p in pts.reshape(-1, 3):
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")


def load_trajectory(path, max_len: int = 50, min_stride: float = 0.05,
                    sigma_n_pro: float = 1e-4) -> TrajectoryHistory:
    """Read ``t x y z r00 r01 ... r22`` lines into a history."""
    hist = TrajectoryHistory(max_len, min_stride, sigma_n_pro)
    for row in _data_lines(Path(path)):
        if len(row) != 13:
            raise ValueError(f"{path}: expected 13 columns per line")
        hist.append(RobotPoseSample(np.array(row[1:4]), np.array(row[4:]).reshape(3, 3), row[0]))
    return hist


def save_trajectory(history: Iterable[RobotPoseSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# t x y z r00 r01 r02 r10 r11 r12 r20 r21 r22\n")
        for s in history:
            vals = [s.time, *s.position, *np.asarray(s.rotation).ravel()]
            fh.write(" ".join(f"{v:.17g}" for v in vals) + "\n")
