"""
Joint-position error metrics: MPJPE and Procrustes-aligned PA-MPJPE.

Joint sets are ``(J, 3)`` float arrays in millimeters. Transforms use the row
vector convention ``T(x) = s * x @ R + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._io import CsvFormatError, read_csv

JOINT_CSV_HEADER = ("x_mm", "y_mm", "z_mm")


class DegenerateGeometryError(ValueError):
    """The alignment problem has no unique similarity transform."""


class JointCountMismatch(ValueError):
    pass


def as_joints(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
        raise ValueError(f"joint set must have shape (J, 3) with J >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("joint set contains non-finite coordinates")
    return arr


def _pair(pred, gt):
    pred, gt = as_joints(pred), as_joints(gt)
    if pred.shape[0] != gt.shape[0]:
        raise JointCountMismatch(
            f"joint count mismatch: prediction has {pred.shape[0]}, ground truth has {gt.shape[0]}"
        )
    return pred, gt


@dataclass(frozen=True)
class RigidTransform:
    s: float = 1.0
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not (np.isfinite(self.s) and self.s > 0):
            raise ValueError(f"scale must be positive, got {self.s}")
        if R.shape != (3, 3):
            raise ValueError("R must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("R must be a proper rotation")
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(1.0 / self.s, self.R.T, -(self.t @ self.R.T) / self.s)


def apply_transform(T: RigidTransform, x) -> np.ndarray:
    return T.s * as_joints(x) @ T.R + T.t


def mpjpe(pred, gt) -> float:
    """Mean Euclidean distance between corresponding joints."""
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def procrustes_align(pred, gt, rank_tol: float = 1e-10) -> RigidTransform:
    """Similarity transform minimizing the squared distance from ``T(pred)`` to ``gt``.

    Reflections are not allowed. Raises DegenerateGeometryError when the
    prediction collapses to a point or the cross-covariance has rank < 2, in
    which case the rotation is not unique.
    """
    pred, gt = _pair(pred, gt)
    if pred.shape[0] < 3:
        raise DegenerateGeometryError("Procrustes alignment needs at least 3 joints")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    X, Y = pred - mu_p, gt - mu_g
    var_x = float(np.sum(X * X))
    if var_x <= 0 or var_x < 1e-24 * max(1.0, float(np.sum(pred * pred))):
        raise DegenerateGeometryError("prediction joints are all coincident")

    U, S, Vt = np.linalg.svd(X.T @ Y)
    if S[0] <= 0 or S[1] <= rank_tol * S[0]:
        raise DegenerateGeometryError(
            f"cross-covariance is rank-deficient (singular values {S.tolist()}); rotation is not unique"
        )
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = U @ D @ Vt
    s = float(np.sum(S * np.diag(D))) / var_x
    if s <= 0:
        raise DegenerateGeometryError("optimal scale is not positive")
    t = mu_g - s * mu_p @ R
    return RigidTransform(s, R, t)


def pa_mpjpe(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return mpjpe(apply_transform(procrustes_align(pred, gt), pred), gt)


def read_joints_csv(path, joints_per_set: int | None = None) -> list[np.ndarray]:
    """Read ``x_mm,y_mm,z_mm`` rows. With ``joints_per_set``, split consecutive row blocks into sets."""
    rows = read_csv(path, JOINT_CSV_HEADER)
    if not rows:
        raise CsvFormatError(path, 2, "no joint rows")
    arr = np.array([[r[c] for c in JOINT_CSV_HEADER] for r in rows], dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0][0])
        raise CsvFormatError(path, bad + 2, "non-finite coordinate")
    if joints_per_set is None:
        return [arr]
    if joints_per_set < 1 or len(arr) % joints_per_set:
        raise CsvFormatError(path, len(arr) + 1, f"{len(arr)} rows do not split into sets of {joints_per_set}")
    return list(arr.reshape(-1, joints_per_set, 3))
