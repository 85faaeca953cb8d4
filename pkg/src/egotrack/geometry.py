"""Pinhole camera model, centroid lifting and robust depth alignment."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

_ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def backproject(self, x: float, y: float) -> np.ndarray:
        """K^-1 (x, y, 1): the camera-frame ray with unit z."""
        return np.array([(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0])

    def project(self, p_cam) -> tuple[float, float]:
        p = np.asarray(p_cam, dtype=float)
        return self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform: ``p_world = rotation @ p_cam + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=_ORTHO_TOL):
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise GeometryError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q_wxyz, translation, tol: float = 1e-6) -> "CameraPose":
        """Build a pose from a (w, x, y, z) quaternion, normalising it first.

        Quaternions whose norm is further than ``tol`` from 1 are rejected.
        """
        q = np.asarray(q_wxyz, dtype=float)
        n = np.linalg.norm(q)
        if q.shape != (4,) or not np.isfinite(n) or abs(n - 1.0) > tol:
            raise GeometryError(f"quaternion norm {n} deviates from 1 by more than {tol}")
        w, x, y, z = q / n
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(rot, np.asarray(translation, dtype=float))

    def to_quaternion(self) -> np.ndarray:
        """(w, x, y, z) with w >= 0."""
        r = self.rotation
        tr = np.trace(r)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        q /= np.linalg.norm(q)
        return -q if q[0] < 0 else q

    def inverse(self) -> "CameraPose":
        """World-to-camera as a pose object (useful when converting foreign conventions)."""
        rt = self.rotation.T
        return CameraPose(rt, -rt @ self.translation)

    def world_to_camera(self, p_world) -> np.ndarray:
        return self.rotation.T @ (np.asarray(p_world, dtype=float) - self.translation)


def yaw_rotation(yaw: float) -> np.ndarray:
    """Rotation about the camera y axis (down), radians."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def lift_centroid(c, depth: float, k: Intrinsics, pose: CameraPose) -> np.ndarray:
    """Back-project pixel ``c = (x, y)`` at ``depth`` metres into world coordinates."""
    if not np.isfinite(depth) or depth <= 0:
        raise GeometryError(f"depth must be positive, got {depth}")
    p_cam = depth * k.backproject(float(c[0]), float(c[1]))
    return pose.rotation @ p_cam + pose.translation


def sample_depth(depth_map: np.ndarray, c) -> float:
    """Depth at the pixel nearest to ``c``, clamped to the image.

    The pixel is used even when it falls outside the segment (concave masks).
    """
    h, w = depth_map.shape
    col = min(max(int(np.floor(c[0] + 0.5)), 0), w - 1)
    row = min(max(int(np.floor(c[1] + 0.5)), 0), h - 1)
    return float(depth_map[row, col])


def apply_depth(raw: float, scale: float, shift: float) -> float:
    d = scale * raw + shift
    if not d > 0:
        raise GeometryError(f"aligned depth {d} is not positive")
    return d


def l1_objective(raw, ref, scale: float, shift: float) -> float:
    return float(np.abs(scale * np.asarray(raw) + shift - np.asarray(ref)).sum())


def align_depth(raw, reference, eps: float = 1e-6, tol: float = 1e-9, max_iter: int = 100):
    """Fit ``reference ~ scale * raw + shift`` under an L1 loss.

    Iteratively reweighted least squares with weights ``1 / max(|r|, eps)``;
    stops when both parameters move less than ``tol`` or after ``max_iter``
    iterations.  Returns ``(scale, shift)``.
    """
    x = np.asarray(raw, dtype=float).ravel()
    y = np.asarray(reference, dtype=float).ravel()
    if x.shape != y.shape:
        raise GeometryError("raw and reference sample counts differ")
    if x.size < 2:
        raise GeometryError("need at least two samples to fit scale and shift")
    if np.ptp(x) == 0:
        raise GeometryError("raw depths are constant: scale/shift fit is not unique")

    a = np.column_stack([x, np.ones_like(x)])
    params = np.linalg.lstsq(a, y, rcond=None)[0]
    for it in range(max_iter):
        w = 1.0 / np.maximum(np.abs(a @ params - y), eps)
        aw = a * w[:, None]
        new = np.linalg.solve(a.T @ aw, aw.T @ y)
        step = np.max(np.abs(new - params))
        params = new
        if step < tol:
            break
    else:
        log.debug("align_depth hit max_iter=%d", max_iter)
    return float(params[0]), float(params[1])
