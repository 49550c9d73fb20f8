"""Camera model and rigid-transform utilities shared by the simulator,
tracker and decoder.

World frame convention: origin at the marker's top-left outer corner,
x to the right along the top edge, y down along the left edge, z pointing
away from the camera (into the screen). Poses map world points into the
camera frame: ``X_cam = R @ X_world + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BehindCameraError(ValueError):
    """Raised when a point to be projected has nonpositive depth."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 1033.0
    fy: float = 1033.0
    cx: float = 640.0
    cy: float = 360.0
    width: int = 1280
    height: int = 720

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal length must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass
class Pose:
    """Rigid transform, world (marker) frame to camera frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (deviation {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must be proper (det +1)")

    def transform(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: maps X -> self(other(X))."""
        return Pose(
            orthonormalize(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())


def rotvec_to_matrix(w: np.ndarray) -> np.ndarray:
    """Exponential map of a rotation 3-vector (Rodrigues)."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        K = skew(w)
        return np.eye(3) + K + 0.5 * K @ K
    k = w / theta
    K = skew(k)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * K @ K


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    if theta < 1e-9:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    axis /= 2.0 * np.sin(theta)
    return axis * theta


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        out = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return out


def rotation_angle_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, degrees."""
    cos = np.clip((np.trace(Ra.T @ Rb) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def project(K: CameraIntrinsics, pose: Pose, points: np.ndarray) -> np.ndarray:
    """Pinhole projection of world points; raises if any depth <= 0."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cam = pose.transform(pts)
    z = cam[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("point has nonpositive depth")
    u = K.fx * cam[:, 0] / z + K.cx
    v = K.fy * cam[:, 1] / z + K.cy
    out = np.stack([u, v], axis=1)
    return out[0] if np.asarray(points).ndim == 1 else out


def plane_homography(K: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Homography mapping marker-plane (z=0) metric coordinates to pixels."""
    R, t = pose.rotation, pose.translation
    H = K.matrix @ np.column_stack([R[:, 0], R[:, 1], t])
    return H / H[2, 2]


def pose_from_plane_homography(K: CameraIntrinsics, H: np.ndarray) -> Pose:
    """Recover the pose from a marker-plane-to-image homography.

    The two leading columns of K^-1 H give the in-plane rotation axes up to
    a common scale; the rotation is re-orthonormalized and the sign chosen
    so the plane lies in front of the camera.
    """
    M = np.linalg.inv(K.matrix) @ H
    scale = (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1])) / 2.0
    if scale < 1e-12:
        raise ValueError("degenerate homography")
    M = M / scale
    if M[2, 2] < 0:
        M = -M
    r1, r2, t = M[:, 0], M[:, 1], M[:, 2]
    R = orthonormalize(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return Pose(R, t)


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """DLT homography from >= 4 point correspondences (rows of (x, y))."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 4 or len(src) != len(dst):
        raise ValueError("need at least 4 matching points")
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    A = np.array(rows)
    _, _, Vt = np.linalg.svd(A)
    H = Vt[-1].reshape(3, 3)
    if abs(H[2, 2]) < 1e-15:
        raise ValueError("degenerate correspondence set")
    return H / H[2, 2]


def apply_homography(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    hom = np.column_stack([pts, np.ones(len(pts))]) @ H.T
    out = hom[:, :2] / hom[:, 2:3]
    return out[0] if np.asarray(points).ndim == 1 else out
