"""
Core Geometry
=============
Rigid-body and projective geometry shared by every stage of the pipeline:
rotations, poses, pinhole projection, image lines, interpretation-plane
normals and the event-line distance.

CONVENTIONS:
- Vectors, axis-angle parameters and rotation matrices are plain numpy arrays
- Angles in radians, model coordinates in meters, image coordinates in pixels
- A Pose maps model coordinates into the camera frame: X_c = R @ X_m + T
- Events are assumed undistorted; there is no lens distortion model
"""

from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import DegenerateLine, LineAtInfinity, NonPositiveDepth


# NUMERIC TOLERANCES
MIN_DEPTH = 1e-9
MIN_PIXEL_SEPARATION = 1e-6
SMALL_ANGLE = 1e-10
ROTATION_TOLERANCE = 1e-6


# ============================================================================
# ROTATIONS
# ============================================================================

def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == np.cross(a, b)."""
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of skew for the antisymmetric part of m."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def rodrigues(r: np.ndarray) -> np.ndarray:
    """
    Exponential map from axis-angle parameters to a rotation matrix.

    R = cos(t) I + (1 - cos(t)) b b^T + sin(t) skew(b), with t = |r|, b = r / t.
    The zero vector maps to the identity.
    """
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r)
    if theta < SMALL_ANGLE:
        # First-order term keeps the map smooth around zero
        return np.eye(3) + skew(r)
    b = r / theta
    return (
        np.cos(theta) * np.eye(3)
        + (1.0 - np.cos(theta)) * np.outer(b, b)
        + np.sin(theta) * skew(b)
    )


def rodrigues_batch(rs: np.ndarray) -> np.ndarray:
    """Vectorized rodrigues over an (N, 3) array; returns (N, 3, 3)."""
    rs = np.asarray(rs, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(rs, axis=1)
    safe = np.where(theta < SMALL_ANGLE, 1.0, theta)
    b = rs / safe[:, None]
    b[theta < SMALL_ANGLE] = 0.0

    zeros = np.zeros(len(rs))
    b_hat = np.stack([
        np.stack([zeros, -b[:, 2], b[:, 1]], axis=1),
        np.stack([b[:, 2], zeros, -b[:, 0]], axis=1),
        np.stack([-b[:, 1], b[:, 0], zeros], axis=1),
    ], axis=1)
    c = np.cos(theta)[:, None, None]
    s = np.sin(theta)[:, None, None]
    out = c * np.eye(3) + (1.0 - c) * np.einsum("ni,nj->nij", b, b) + s * b_hat
    out[theta < SMALL_ANGLE] = np.eye(3)
    return out


def log_rotation(R: np.ndarray) -> np.ndarray:
    """
    Logarithm map: rotation matrix to axis-angle parameters with |r| <= pi.

    At exactly pi the axis sign is ambiguous; the axis whose first nonzero
    component is positive is returned so that round trips are deterministic.
    """
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = vee(R)  # = sin(theta) * b

    if theta < 1e-6:
        # sin(theta)/theta ~ 1 - theta^2/6
        return w * (1.0 + theta ** 2 / 6.0)

    if theta < np.pi / 2:
        return theta * w / np.sin(theta)

    # Near pi the antisymmetric part vanishes; read the axis from the
    # symmetric part instead: (R + R^T)/2 - cos(t) I = (1 - cos(t)) b b^T
    bbt = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    i = int(np.argmax(np.diag(bbt)))
    b = bbt[:, i] / np.sqrt(max(bbt[i, i], 1e-300))
    b = normalize(b)

    if np.linalg.norm(w) > 1e-12:
        if np.dot(b, w) < 0:
            b = -b
    else:
        nonzero = np.flatnonzero(np.abs(b) > 1e-12)
        if len(nonzero) and b[nonzero[0]] < 0:
            b = -b
    return theta * b


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two vectors in [0, pi], robust near 0 and pi."""
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


# ============================================================================
# DOMAIN TYPES
# ============================================================================

class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics; pixels throughout."""
    model_config = ConfigDict(frozen=True)

    fx: float = Field(800.0, gt=0, description="Focal length along x (px)")
    fy: float = Field(800.0, gt=0, description="Focal length along y (px)")
    cx: float = Field(320.0, description="Principal point x (px)")
    cy: float = Field(240.0, description="Principal point y (px)")
    width: int = Field(640, gt=0, description="Image width (px)")
    height: int = Field(480, gt=0, description="Image height (px)")

    @model_validator(mode="after")
    def _principal_point_inside(self):
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"Principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )
        return self

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    def contains(self, pixels: np.ndarray) -> np.ndarray:
        """Boolean mask of pixels inside the image bounds."""
        pixels = np.atleast_2d(pixels)
        return (
            (pixels[:, 0] >= 0) & (pixels[:, 0] < self.width)
            & (pixels[:, 1] >= 0) & (pixels[:, 1] < self.height)
        )


def _frozen_array(value, shape: Tuple[int, ...]) -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("Non-finite values are not allowed")
    arr.flags.writeable = False
    return arr


class Pose(BaseModel):
    """
    Rigid transform of the object into the camera frame.

    The rotation is checked against the rotation invariants on construction
    and re-projected onto SO(3) to remove accumulated round-off.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotation: np.ndarray
    translation: np.ndarray

    @field_validator("rotation", mode="before")
    @classmethod
    def _valid_rotation(cls, v):
        m = np.array(v, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise ValueError("Rotation contains non-finite values")
        if np.abs(m.T @ m - np.eye(3)).max() > ROTATION_TOLERANCE or np.linalg.det(m) <= 0:
            raise ValueError("Rotation matrix is not orthonormal with det = +1")
        return _frozen_array(project_to_rotation(m), (3, 3))

    @field_validator("translation", mode="before")
    @classmethod
    def _valid_translation(cls, v):
        return _frozen_array(v, (3,))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Model-frame points (N, 3) or (3,) into the camera frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def retract(self, delta: np.ndarray) -> "Pose":
        """Apply a 6-vector local update: left axis-angle increment, additive translation."""
        return Pose(
            rotation=rodrigues(delta[:3]) @ self.rotation,
            translation=self.translation + delta[3:],
        )

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
        }


class Line2D(BaseModel):
    """
    Image line: unit-norm homogeneous coefficients plus two endpoints.

    coeffs (a, b, c) describe a*x + b*y + c = 0.
    """
    model_config = ConfigDict(frozen=True)

    coeffs: Tuple[float, float, float]
    endpoints: Tuple[Tuple[float, float], Tuple[float, float]]

    @field_validator("coeffs", mode="before")
    @classmethod
    def _unit_coeffs(cls, v):
        arr = np.asarray(v, dtype=float).reshape(3)
        norm = np.linalg.norm(arr)
        if norm == 0 or not np.isfinite(norm):
            raise ValueError("Line coefficients must be finite and nonzero")
        return tuple(float(x) for x in arr / norm)

    @model_validator(mode="after")
    def _endpoints_on_line(self):
        line = np.asarray(self.coeffs)
        for x, y in self.endpoints:
            scale = max(1.0, abs(x), abs(y))
            if abs(line[0] * x + line[1] * y + line[2]) > 1e-6 * scale:
                raise ValueError(f"Endpoint ({x}, {y}) does not lie on the line")
        return self

    @property
    def p1(self) -> np.ndarray:
        return np.asarray(self.endpoints[0])

    @property
    def p2(self) -> np.ndarray:
        return np.asarray(self.endpoints[1])

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.p1 + self.p2)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p2 - self.p1))

    @property
    def direction(self) -> np.ndarray:
        """Unit direction of the line in the image."""
        a, b, _ = self.coeffs
        return normalize(np.array([-b, a]))


class Line3D(BaseModel):
    """Model-frame line segment between two distinct endpoints (meters)."""
    model_config = ConfigDict(frozen=True)

    p1: Tuple[float, float, float]
    p2: Tuple[float, float, float]

    @model_validator(mode="after")
    def _distinct_endpoints(self):
        if np.linalg.norm(np.subtract(self.p2, self.p1)) <= 0:
            raise ValueError("3D line endpoints must be distinct")
        return self

    @property
    def direction(self) -> np.ndarray:
        return normalize(np.subtract(self.p2, self.p1).astype(float))


# ============================================================================
# PROJECTION
# ============================================================================

def project_points(K: CameraIntrinsics, pose: Pose, points: np.ndarray) -> np.ndarray:
    """
    Project model-frame points (N, 3) to pixels (N, 2).

    Raises:
        NonPositiveDepth: If any transformed point has Z <= 1e-9
    """
    cam = pose.transform(np.atleast_2d(points))
    if np.any(cam[:, 2] <= MIN_DEPTH):
        raise NonPositiveDepth("Point at or behind the camera plane")
    return np.column_stack([
        K.fx * cam[:, 0] / cam[:, 2] + K.cx,
        K.fy * cam[:, 1] / cam[:, 2] + K.cy,
    ])


def project_point(K: CameraIntrinsics, pose: Pose, point: np.ndarray) -> np.ndarray:
    """Pinhole projection of one model-frame point."""
    return project_points(K, pose, np.asarray(point, dtype=float).reshape(1, 3))[0]


def line_through(p1: np.ndarray, p2: np.ndarray) -> Line2D:
    """
    Line2D through two pixel points: normalized cross product of their
    homogeneous coordinates.

    Raises:
        DegenerateLine: If the points coincide within 1e-6 px
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if np.linalg.norm(p2 - p1) < MIN_PIXEL_SEPARATION:
        raise DegenerateLine("Line endpoints coincide")
    coeffs = np.cross(np.append(p1, 1.0), np.append(p2, 1.0))
    return Line2D(
        coeffs=coeffs / np.linalg.norm(coeffs),
        endpoints=(tuple(p1), tuple(p2)),
    )


def project_line(K: CameraIntrinsics, pose: Pose, line: Line3D) -> Line2D:
    """Project a model line: l = p1^h x p2^h / |p1^h x p2^h|."""
    pixels = project_points(K, pose, np.array([line.p1, line.p2], dtype=float))
    return line_through(pixels[0], pixels[1])


def interpretation_plane_normal(K: CameraIntrinsics, line: Line2D) -> np.ndarray:
    """
    Unit normal of the plane through the camera center and the image line.

    A pixel p on the line satisfies l^T p^h = 0, so the ray K^-1 p^h is
    perpendicular to K^T l.
    """
    return normalize(K.matrix().T @ np.asarray(line.coeffs))


def event_line_distance(event: np.ndarray, line: Line2D) -> float:
    """
    Signed perpendicular pixel distance e^h . l / sqrt(l_x^2 + l_y^2).

    Raises:
        LineAtInfinity: If l_x^2 + l_y^2 < 1e-18
    """
    return float(event_line_distances(np.atleast_2d(event), np.atleast_2d(line.coeffs))[0, 0])


def event_line_distances(points: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Signed distances of (N, 2) points to (M, 3) lines; returns (N, M)."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    norms_sq = coeffs[:, 0] ** 2 + coeffs[:, 1] ** 2
    if np.any(norms_sq < 1e-18):
        raise LineAtInfinity("Line has no finite image component")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    raw = points @ coeffs[:, :2].T + coeffs[:, 2]
    return raw / np.sqrt(norms_sq)
