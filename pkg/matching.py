"""
Event-Line Matching
===================
Frame-to-frame machinery for tracking a known wireframe model:

- Constant-velocity pose prediction (exponential map + SO(3) left Jacobian)
- Model-line visibility (depth, field of view, self-occlusion by model faces)
- Geometric event-to-line assignment with candidate and rejection regions

ASSIGNMENT RULES (per event):
1. Two nearest lines both closer than d_a -> rejected (ambiguous)
2. Nearest line closer than d_t and its midpoint closer than
   d_m = d_m_factor * projected length -> assigned to that line
3. Otherwise -> unmatched
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import MatchConfig
from errors import DegenerateLine, NoVisibleLines
from event_windowing import EventCluster
from geometry import (
    MIN_DEPTH,
    CameraIntrinsics,
    Line2D,
    Line3D,
    Pose,
    event_line_distances,
    line_through,
    log_rotation,
    rodrigues,
    skew,
)


logger = logging.getLogger(__name__)

SMALL_ROTATION = 1e-8
OCCLUSION_TOLERANCE = 1e-6
PARTIAL_SAMPLES = 16
MIN_VISIBLE_RUN = 4


# ============================================================================
# OBJECT MODEL
# ============================================================================

class ObjectModel(BaseModel):
    """Wireframe model in meters: vertices, line segments and optional planar faces."""
    model_config = ConfigDict(extra="forbid")

    vertices: List[Tuple[float, float, float]] = Field(..., min_length=2)
    lines: List[Tuple[int, int]] = Field(..., min_length=1)
    faces: List[List[int]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _valid_topology(self):
        n = len(self.vertices)
        verts = np.asarray(self.vertices, dtype=float)
        for i, j in self.lines:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"Line ({i}, {j}) references a missing vertex")
            if np.allclose(verts[i], verts[j], rtol=0, atol=0):
                raise ValueError(f"Line ({i}, {j}) has coincident endpoints")
        for face in self.faces:
            if len(face) < 3:
                raise ValueError("Faces need at least 3 vertices")
            if any(not (0 <= i < n) for i in face):
                raise ValueError(f"Face {face} references a missing vertex")
            loop = verts[face]
            centered = loop - loop.mean(axis=0)
            if np.linalg.svd(centered, compute_uv=False)[-1] > 1e-6 * max(1.0, np.sqrt(len(face))):
                raise ValueError(f"Face {face} is not planar")
        return self

    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        """(L, 3) arrays of first and second line endpoints."""
        verts = np.asarray(self.vertices, dtype=float)
        idx = np.asarray(self.lines, dtype=int)
        return verts[idx[:, 0]], verts[idx[:, 1]]

    def line(self, k: int) -> Line3D:
        i, j = self.lines[k]
        return Line3D(p1=self.vertices[i], p2=self.vertices[j])

    def centroid(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float).mean(axis=0)

    def triangles(self) -> np.ndarray:
        """Faces as fan triangles, (T, 3, 3) in model coordinates."""
        verts = np.asarray(self.vertices, dtype=float)
        tris = [
            (verts[face[0]], verts[face[k]], verts[face[k + 1]])
            for face in self.faces
            for k in range(1, len(face) - 1)
        ]
        return np.asarray(tris, dtype=float).reshape(-1, 3, 3)


# ============================================================================
# CONSTANT-VELOCITY MOTION MODEL
# ============================================================================

class Twist(BaseModel):
    """Angular velocity w (rad/s, axis * rate) and linear velocity v (m/s)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    w: np.ndarray
    v: np.ndarray

    @field_validator("w", "v", mode="before")
    @classmethod
    def _finite_vector(cls, value):
        arr = np.array(value, dtype=float).reshape(3)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Twist components must be finite")
        arr.flags.writeable = False
        return arr

    @classmethod
    def zero(cls) -> "Twist":
        return cls(w=np.zeros(3), v=np.zeros(3))


def left_jacobian(phi: np.ndarray) -> np.ndarray:
    """J = sin(t)/t I + (1 - sin(t)/t) b b^T + (1 - cos(t))/t skew(b); identity below 1e-8."""
    theta = float(np.linalg.norm(phi))
    if theta < SMALL_ROTATION:
        return np.eye(3)
    b = phi / theta
    sinc = np.sin(theta) / theta
    return sinc * np.eye(3) + (1.0 - sinc) * np.outer(b, b) + (1.0 - np.cos(theta)) / theta * skew(b)


def relative_motion(twist: Twist, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Rotation and translation accumulated over dt under a constant twist."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    phi = twist.w * dt
    delta_r = rodrigues(phi)
    delta_t = left_jacobian(phi) @ twist.v * dt
    return delta_r, delta_t


def predict_pose(pose: Pose, twist: Twist, dt: float) -> Pose:
    """R' = R dR^-1, T' = T - R dR^-1 dT."""
    delta_r, delta_t = relative_motion(twist, dt)
    rotation = pose.rotation @ delta_r.T
    return Pose(rotation=rotation, translation=pose.translation - rotation @ delta_t)


def estimate_twist(pose_prev: Pose, pose_curr: Pose, dt: float) -> Twist:
    """The constant twist that carries pose_prev to pose_curr in dt (inverse of predict_pose)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta_r = pose_curr.rotation.T @ pose_prev.rotation
    phi = log_rotation(delta_r)
    delta_t = -pose_curr.rotation.T @ (pose_curr.translation - pose_prev.translation)
    v = np.linalg.solve(left_jacobian(phi), delta_t) / dt
    return Twist(w=phi / dt, v=v)


# ============================================================================
# VISIBILITY
# ============================================================================

class VisibleLine(NamedTuple):
    index: int
    line: Line2D


def _occluded(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """
    Ray casting from the camera center to each camera-frame point.

    A point is occluded when its ray crosses a face strictly before reaching
    the point (distance margin 1e-6 m). Barycentric tests are inclusive so
    rays through shared edges and vertices still count as hits.
    """
    if len(triangles) == 0 or len(points) == 0:
        return np.zeros(len(points), dtype=bool)

    v0, v1, v2 = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    dirs = points[:, None, :]                        # (N, 1, 3)
    pvec = np.cross(dirs, e2[None])                  # (N, T, 3)
    det = np.einsum("ntk,tk->nt", pvec, e1)
    ok = np.abs(det) > 1e-12
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = -v0                                       # ray origin is the camera center
    u = np.einsum("tk,ntk->nt", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)                        # (T, 3)
    v = np.einsum("nk,tk->nt", points, qvec) * inv
    t = np.einsum("tk,tk->t", e2, qvec)[None, :] * inv

    dist = np.linalg.norm(points, axis=1)[:, None]
    slack = 1e-12
    hit = (
        ok & (u >= -slack) & (v >= -slack) & (u + v <= 1 + slack)
        & (t > 1e-9) & (t * dist < dist - OCCLUSION_TOLERANCE)
    )
    return hit.any(axis=1)


def _visible_mask(model_points: np.ndarray, pose: Pose, K: CameraIntrinsics, triangles: np.ndarray) -> np.ndarray:
    cam = pose.transform(model_points)
    in_front = cam[:, 2] > MIN_DEPTH
    mask = np.zeros(len(cam), dtype=bool)
    if not in_front.any():
        return mask
    front = cam[in_front]
    pixels = np.column_stack([
        K.fx * front[:, 0] / front[:, 2] + K.cx,
        K.fy * front[:, 1] / front[:, 2] + K.cy,
    ])
    inside = K.contains(pixels)
    visible = inside.copy()
    visible[inside] = ~_occluded(front[inside], triangles)
    mask[in_front] = visible
    return mask


def visible_lines(model: ObjectModel, pose: Pose, K: CameraIntrinsics) -> List[VisibleLine]:
    """
    Model lines usable for matching under a pose, projected to the image.

    A line is visible when both endpoints are in front of the camera, inside
    the image and not hidden by a model face. With exactly one visible
    endpoint the line is sampled at 16 interior points and the sub-segment
    reachable from the visible endpoint is kept if it spans at least 4
    consecutive visible samples.
    """
    p1, p2 = model.endpoints()
    triangles = model.triangles()
    if len(triangles):
        triangles = pose.transform(triangles.reshape(-1, 3)).reshape(-1, 3, 3)

    ends = _visible_mask(np.vstack([p1, p2]), pose, K, triangles)
    vis1, vis2 = ends[:len(p1)], ends[len(p1):]

    result: List[VisibleLine] = []
    fractions = np.linspace(0.0, 1.0, PARTIAL_SAMPLES + 2)
    for k in range(len(p1)):
        if vis1[k] and vis2[k]:
            segment = (p1[k], p2[k])
        elif vis1[k] or vis2[k]:
            samples = p1[k] + fractions[:, None] * (p2[k] - p1[k])
            flags = _visible_mask(samples, pose, K, triangles)
            if not vis1[k]:
                samples, flags = samples[::-1], flags[::-1]
            run = int(np.argmin(flags)) if not flags.all() else len(flags)
            if run - 1 < MIN_VISIBLE_RUN:
                continue
            segment = (samples[0], samples[run - 1])
        else:
            continue

        cam = pose.transform(np.asarray(segment))
        pixels = np.column_stack([
            K.fx * cam[:, 0] / cam[:, 2] + K.cx,
            K.fy * cam[:, 1] / cam[:, 2] + K.cy,
        ])
        try:
            result.append(VisibleLine(k, line_through(pixels[0], pixels[1])))
        except DegenerateLine:
            # Line seen end-on
            continue
    return result


# ============================================================================
# EVENT-LINE ASSIGNMENT
# ============================================================================

@dataclass(frozen=True)
class MatchSet:
    """
    Partition of a cluster's events into assigned, rejected and unmatched.

    Assigned events carry the model line index and their signed distance.
    """
    event_index: np.ndarray
    line_index: np.ndarray
    distance: np.ndarray
    rejected: np.ndarray
    unmatched: np.ndarray

    def __len__(self) -> int:
        return len(self.event_index)

    def drop_sparse_lines(self, min_events: int) -> "MatchSet":
        """Move assignments of lines with fewer than min_events events to unmatched."""
        if min_events <= 0 or len(self) == 0:
            return self
        lines, counts = np.unique(self.line_index, return_counts=True)
        sparse = lines[counts < min_events]
        drop = np.isin(self.line_index, sparse)
        if not drop.any():
            return self
        return MatchSet(
            event_index=self.event_index[~drop],
            line_index=self.line_index[~drop],
            distance=self.distance[~drop],
            rejected=self.rejected,
            unmatched=np.sort(np.concatenate([self.unmatched, self.event_index[drop]])),
        )


def match_events(cluster: EventCluster, visible: List[VisibleLine], cfg: MatchConfig) -> MatchSet:
    """
    Assign each event of a cluster to at most one visible model line.

    Raises:
        NoVisibleLines: If no line is visible
    """
    if not visible:
        raise NoVisibleLines("No model line is visible under the current pose")

    points = cluster.events.xy
    coeffs = np.array([v.line.coeffs for v in visible])
    model_index = np.array([v.index for v in visible])
    midpoints = np.array([v.line.midpoint for v in visible])
    lengths = np.array([v.line.length for v in visible])

    signed = event_line_distances(points, coeffs)
    dist = np.abs(signed)
    order = np.argsort(dist, axis=1, kind="stable")
    rows = np.arange(len(points))
    nearest = order[:, 0]
    d1 = dist[rows, nearest]
    d2 = dist[rows, order[:, 1]] if len(visible) > 1 else np.full(len(points), np.inf)

    rejected = (d1 < cfg.d_a) & (d2 < cfg.d_a)
    to_mid = np.linalg.norm(points - midpoints[nearest], axis=1)
    candidate = (d1 < cfg.d_t) & (to_mid < cfg.d_m_factor * lengths[nearest])
    assigned = candidate & ~rejected

    idx = np.flatnonzero(assigned)
    return MatchSet(
        event_index=idx,
        line_index=model_index[nearest[idx]],
        distance=signed[idx, nearest[idx]],
        rejected=np.flatnonzero(rejected),
        unmatched=np.flatnonzero(~assigned & ~rejected),
    )
