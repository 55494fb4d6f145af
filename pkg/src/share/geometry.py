"""Camera poses on a viewing sphere around the subject, and uniform pose grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._io import fmt, read_csv, write_csv

THETA_LIMITS = (-60.0, 60.0)
PHI_LIMITS = (0.0, 360.0)
DEFAULT_RADIUS = 2.5
GRID_CSV_HEADER = ("theta_deg", "phi_deg", "radius")


class GeometryError(ValueError):
    pass


def canonical_phi(phi: float) -> float:
    """Wrap an azimuth into [0, 360)."""
    p = math.fmod(float(phi), 360.0)
    if p < 0:
        p += 360.0
    if p >= 360.0:
        p = 0.0
    return p + 0.0  # folds -0.0 into 0.0


@dataclass(frozen=True, order=True)
class CameraPose:
    """Viewpoint given by elevation ``theta_deg``, azimuth ``phi_deg`` and ``radius`` (m).

    The azimuth is canonicalized into [0, 360) on construction, so poses that
    differ by full turns compare equal.
    """

    theta_deg: float
    phi_deg: float
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        theta, radius = float(self.theta_deg), float(self.radius)
        if not math.isfinite(theta) or not (THETA_LIMITS[0] <= theta <= THETA_LIMITS[1]):
            raise GeometryError(f"theta_deg={self.theta_deg} outside [-60, 60]")
        if not math.isfinite(float(self.phi_deg)):
            raise GeometryError(f"phi_deg={self.phi_deg} is not finite")
        if not (math.isfinite(radius) and radius > 0):
            raise GeometryError(f"radius={self.radius} must be > 0")
        object.__setattr__(self, "theta_deg", theta + 0.0)
        object.__setattr__(self, "phi_deg", canonical_phi(self.phi_deg))
        object.__setattr__(self, "radius", radius)

    def key(self) -> tuple[float, float, float]:
        return (self.theta_deg, self.phi_deg, self.radius)


@dataclass(frozen=True)
class PoseGrid:
    """Poses ordered by (phi, theta): phi is the outer loop, theta the inner."""

    poses: tuple[CameraPose, ...]
    n_theta: int
    n_phi: int

    def __post_init__(self):
        if len(self.poses) != self.n_theta * self.n_phi:
            raise GeometryError(
                f"grid holds {len(self.poses)} poses, expected {self.n_theta}x{self.n_phi}"
            )

    def __len__(self) -> int:
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    @property
    def thetas(self) -> np.ndarray:
        return np.array([p.theta_deg for p in self.poses])

    @property
    def phis(self) -> np.ndarray:
        return np.array([p.phi_deg for p in self.poses])

    @property
    def radii(self) -> np.ndarray:
        return np.array([p.radius for p in self.poses])

    def as_array(self) -> np.ndarray:
        """(n, 3) array of theta, phi, radius."""
        return np.array([p.key() for p in self.poses], dtype=float).reshape(-1, 3)

    @classmethod
    def from_poses(cls, poses: Sequence[CameraPose]) -> "PoseGrid":
        """Wrap an explicit pose list, inferring the grid shape when it is a full grid."""
        poses = tuple(poses)
        n_theta = len({p.theta_deg for p in poses})
        n_phi = len({p.phi_deg for p in poses})
        if n_theta * n_phi != len(poses):
            n_theta, n_phi = len(poses), 1
        return cls(poses, n_theta, n_phi)


def build_grid(
    n_theta: int = 50,
    n_phi: int = 50,
    theta_range: tuple[float, float] = THETA_LIMITS,
    phi_range: tuple[float, float] = PHI_LIMITS,
    radius: float = DEFAULT_RADIUS,
) -> PoseGrid:
    """Uniform angular grid of ``n_theta * n_phi`` poses.

    Elevations include both endpoints of ``theta_range``. Azimuths cover the
    half-open ``[phi_lo, phi_hi)`` so that 0 and 360 are not both emitted.
    """
    for name, n in (("n_theta", n_theta), ("n_phi", n_phi)):
        if isinstance(n, bool) or int(n) != n or n < 1:
            raise GeometryError(f"{name} must be a positive integer, got {n!r}")
    n_theta, n_phi = int(n_theta), int(n_phi)
    t_lo, t_hi = map(float, theta_range)
    p_lo, p_hi = map(float, phi_range)
    if t_lo > t_hi or not (THETA_LIMITS[0] <= t_lo and t_hi <= THETA_LIMITS[1]):
        raise GeometryError(f"theta_range {theta_range} must be an ordered subset of [-60, 60]")
    if p_lo > p_hi or not (PHI_LIMITS[0] <= p_lo and p_hi <= PHI_LIMITS[1]):
        raise GeometryError(f"phi_range {phi_range} must be an ordered subset of [0, 360]")
    if not (math.isfinite(radius) and radius > 0):
        raise GeometryError(f"radius must be > 0, got {radius}")

    thetas = np.linspace(t_lo, t_hi, n_theta) if n_theta > 1 else np.array([t_lo])
    phis = p_lo + (p_hi - p_lo) * np.arange(n_phi) / n_phi
    poses = tuple(
        CameraPose(float(t), float(p), radius) for p in phis for t in thetas
    )
    if len(set(poses)) != len(poses):
        raise GeometryError("grid contains duplicate poses")
    return PoseGrid(poses, n_theta, n_phi)


def to_cartesian(pose: CameraPose) -> np.ndarray:
    t, p = math.radians(pose.theta_deg), math.radians(pose.phi_deg)
    r = pose.radius
    return np.array([r * math.cos(t) * math.cos(p), r * math.cos(t) * math.sin(p), r * math.sin(t)])


def from_cartesian(point) -> CameraPose:
    x, y, z = map(float, point)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0:
        raise GeometryError("cannot place a camera at the subject center")
    theta = math.degrees(math.asin(max(-1.0, min(1.0, z / r))))
    phi = math.degrees(math.atan2(y, x))
    return CameraPose(theta, phi, r)


def angular_distance(theta1, phi1, theta2, phi2) -> np.ndarray:
    """Great-circle angle in degrees between view directions; broadcasts like numpy."""
    t1, p1, t2, p2 = (np.radians(np.asarray(v, dtype=float)) for v in (theta1, phi1, theta2, phi2))
    c = np.sin(t1) * np.sin(t2) + np.cos(t1) * np.cos(t2) * np.cos(p1 - p2)
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def write_grid_csv(path, poses: Iterable[CameraPose]):
    rows = ((fmt(p.theta_deg, 9), fmt(p.phi_deg, 9), fmt(p.radius, 9)) for p in poses)
    return write_csv(path, GRID_CSV_HEADER, rows)


def read_grid_csv(path) -> PoseGrid:
    rows = read_csv(path, GRID_CSV_HEADER)
    return PoseGrid.from_poses([CameraPose(r["theta_deg"], r["phi_deg"], r["radius"]) for r in rows])
