"""Cross-camera alignment math.

A fronto-parallel alignment between two rigidly mounted cameras is a single
homography built from their calibrations. Because the cameras cannot share a
center of projection, a translated camera sees residual parallax; the
closed-form bound on that error in pixels is what justifies treating nearby
scenes as alignable at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import CameraModel, simple_intrinsics
from .errors import ContractViolation, DataError, NumericError, require


@dataclass(frozen=True)
class Homography:
    """3x3 projective map between pixel frames, scaled so H[2,2] = 1 when possible."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        require(m.shape == (3, 3), "homography must be 3x3")
        require(abs(np.linalg.det(m)) > 1e-12, "homography must be invertible")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class WorldPoint:
    """3D point in the first camera's frame, meters; depth must be positive."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        require(self.z > 0.0, "world point must lie in front of the camera")


def homography_from_calibration(m1, m2, rotation) -> Homography:
    """H = M1 * R * inv(M2), mapping camera-2 pixels into camera-1 pixels."""
    m1 = np.asarray(m1, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    r = np.asarray(rotation, dtype=np.float64)
    require(m1.shape == (3, 3) and m2.shape == (3, 3) and r.shape == (3, 3),
            "calibration matrices must be 3x3")
    if abs(np.linalg.det(m1)) < 1e-12 or abs(np.linalg.det(m2)) < 1e-12:
        raise ContractViolation("intrinsics must be invertible")
    if abs(np.linalg.det(r) - 1.0) > 1e-9 or np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
        raise ContractViolation("rotation must be orthonormal with det 1")
    return Homography(m1 @ r @ np.linalg.inv(m2))


def map_point(h: Homography, p) -> np.ndarray:
    """Apply the homography to pixel (u, v) and dehomogenize."""
    u, v = float(p[0]), float(p[1])
    q = h.matrix @ np.array([u, v, 1.0])
    if abs(q[2]) < 1e-15:
        raise NumericError(f"point ({u}, {v}) maps to infinity")
    return q[:2] / q[2]


def map_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Vectorized map_point for an (N, 2) array of pixel coordinates."""
    pts = np.asarray(pts, dtype=np.float64)
    ones = np.ones((pts.shape[0], 1))
    q = np.hstack([pts, ones]) @ h.matrix.T
    if np.any(np.abs(q[:, 2]) < 1e-15):
        raise NumericError("some points map to infinity")
    return q[:, :2] / q[:, 2:3]


def residual_error(point: WorldPoint, translation, fx: float, fy: float) -> float:
    """Parallax error in pixels left over after ideal homography alignment.

    `translation` is the second camera's extrinsic offset in meters: a point
    at P in camera-1 coordinates sits at P + t in camera-2 coordinates. For
    identical, rotation-free cameras the misregistration at depth z is

        e = || ( fx*(x*tz - z*tx), fy*(y*tz - z*ty) ) / (z*(z + tz)) ||
    """
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    x, y, z = point.x, point.y, point.z
    require(z > 0.0 and z + t[2] > 0.0, "point must be in front of both cameras")
    denom = z * (z + t[2])
    eu = fx * (x * t[2] - z * t[0]) / denom
    ev = fy * (y * t[2] - z * t[1]) / denom
    return float(np.hypot(eu, ev))


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to a 3x3 rotation matrix."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    require(n > 1e-12, "zero quaternion")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _camera_from_entry(entry: dict, name: str) -> CameraModel:
    try:
        fx = float(entry["fx"])
        fy = float(entry["fy"])
        cx, cy = (float(v) for v in entry["principal_point"])
        if "quaternion" in entry:
            rot = quaternion_to_rotation(entry["quaternion"])
        else:
            rot = np.asarray(entry["rotation"], dtype=np.float64)
        t = np.asarray(entry["translation"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"camera {name!r}: malformed calibration entry ({exc})") from exc
    return CameraModel(simple_intrinsics(fx, fy, cx, cy), rot, t)


def load_calibration(path) -> dict:
    """Read a calibration JSON file into named CameraModel objects.

    Expected shape: {"cameras": {name: {fx, fy, principal_point: [cx, cy],
    rotation: 3x3 | quaternion: [w, x, y, z], translation: [tx, ty, tz]}}}.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read calibration file {path}: {exc}") from exc
    cams = raw.get("cameras")
    if not isinstance(cams, dict) or not cams:
        raise DataError("calibration file must contain a non-empty 'cameras' object")
    return {name: _camera_from_entry(entry, name) for name, entry in cams.items()}


def alignment_homography(cam1: CameraModel, cam2: CameraModel) -> Homography:
    """Homography mapping cam2 pixels into cam1 pixels via their relative rotation."""
    rel = cam1.rotation @ cam2.rotation.T
    return homography_from_calibration(cam1.intrinsics, cam2.intrinsics, rel)
