"""
Event Line Detection
====================
Detects object lines directly from an event cluster.

PIPELINE:
1. Lift events to a space-time point cloud (x, y, s) with s = time_scale * (t - t_start)
2. Drop isolated points (denoising)
3. Extract planes one at a time: sampled 3-point hypotheses, inlier counting,
   total-least-squares refinement, removal of the inliers
4. Intersect each plane with the window-start and window-end event planes

A line moving at constant image velocity sweeps a nearly planar sheet of
events in space-time, so each plane corresponds to one object line.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.spatial import cKDTree

from config import DetectionConfig
from errors import DegenerateLine, DegeneratePlane, TooFewEvents
from event_windowing import EventCluster
from geometry import Line2D, event_line_distances


logger = logging.getLogger(__name__)

HYPOTHESIS_BATCH = 64
MAX_REFIT_ROUNDS = 10


@dataclass(frozen=True)
class FittedPlane:
    """Plane normal . p + offset = 0 in (x, y, s) space, with its inlier indices."""
    normal: np.ndarray
    offset: float
    inliers: np.ndarray


@dataclass(frozen=True)
class DetectedLine:
    """End-of-window image line with the size of its supporting plane."""
    line: Line2D
    start_line: Line2D
    support: int

    def to_dict(self) -> dict:
        (x1, y1), (x2, y2) = self.line.endpoints
        return {"x1": x1, "y1": y1, "x2": x2, "y2": y2, "support": int(self.support)}


# ============================================================================
# SPACE-TIME CLOUD
# ============================================================================

def to_spacetime_cloud(cluster: EventCluster, cfg: DetectionConfig) -> np.ndarray:
    """One (x, y, s) row per event, in cluster order."""
    events = cluster.events
    s = cfg.time_scale * (events.t - cluster.t_start)
    return np.column_stack([events.x, events.y, s])


def denoise_cloud(cloud: np.ndarray, cfg: DetectionConfig) -> np.ndarray:
    """Indices of points with at least denoise_min_neighbors neighbours within denoise_radius."""
    if cfg.denoise_min_neighbors == 0 or len(cloud) == 0:
        return np.arange(len(cloud))
    tree = cKDTree(cloud)
    counts = tree.query_ball_point(cloud, r=cfg.denoise_radius, return_length=True) - 1
    return np.flatnonzero(counts >= cfg.denoise_min_neighbors)


# ============================================================================
# PLANE SEGMENTATION
# ============================================================================

def _hypotheses_needed(inlier_ratio: float, probability: float) -> float:
    if inlier_ratio <= 0:
        return math.inf
    if inlier_ratio >= 1:
        return 1
    return math.log(1 - probability) / math.log(1 - inlier_ratio ** 3)


def _fit_plane(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """Total-least-squares plane with a deterministic normal sign."""
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    nonzero = np.flatnonzero(np.abs(normal) > 1e-12)
    # Orient so the s component (or the first nonzero one) is positive
    pivot = 2 if abs(normal[2]) > 1e-12 else nonzero[0]
    if normal[pivot] < 0:
        normal = -normal
    return normal, float(-normal @ centroid)


def _best_hypothesis(points: np.ndarray, cfg: DetectionConfig, rng: np.random.Generator):
    """Best sampled plane by inlier count; returns (normal, offset, count)."""
    tree = cKDTree(points)
    k = min(cfg.sample_neighbors, len(points))
    floor = _hypotheses_needed(0.5, cfg.success_probability)
    needed = floor
    tried = 0
    best = (None, 0.0, 0)

    while tried < min(needed, cfg.max_hypotheses):
        seeds = rng.integers(len(points), size=HYPOTHESIS_BATCH)
        _, neighbours = tree.query(points[seeds], k=k)
        first = rng.integers(1, k, size=HYPOTHESIS_BATCH)
        second = rng.integers(1, k - 1, size=HYPOTHESIS_BATCH)
        second = second + (second >= first)
        rows = np.arange(HYPOTHESIS_BATCH)
        p0 = points[seeds]
        p1 = points[neighbours[rows, first]]
        p2 = points[neighbours[rows, second]]

        normals = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(normals, axis=1)
        valid = norms > 1e-12
        normals[valid] /= norms[valid, None]
        offsets = -np.einsum("ij,ij->i", normals, p0)

        counts = (np.abs(points @ normals.T + offsets) <= cfg.plane_inlier_tol).sum(axis=0)
        counts[~valid] = 0
        i = int(np.argmax(counts))
        if counts[i] > best[2]:
            best = (normals[i], float(offsets[i]), int(counts[i]))
            needed = max(floor, _hypotheses_needed(best[2] / len(points), cfg.success_probability))
        tried += HYPOTHESIS_BATCH

    return best


def _refine(points: np.ndarray, normal: np.ndarray, offset: float, tol: float):
    """Alternate TLS fitting and inlier selection until the inlier set is stable."""
    inliers = np.flatnonzero(np.abs(points @ normal + offset) <= tol)
    for _ in range(MAX_REFIT_ROUNDS):
        if len(inliers) < 3:
            break
        normal, offset = _fit_plane(points[inliers])
        updated = np.flatnonzero(np.abs(points @ normal + offset) <= tol)
        if np.array_equal(updated, inliers):
            break
        inliers = updated
    return normal, offset, inliers


def segment_planes(cloud: np.ndarray, cfg: DetectionConfig) -> List[FittedPlane]:
    """
    Sequentially extract the best-supported planes from a space-time cloud.

    Returns:
        Planes with pairwise disjoint inlier sets (indices into cloud)

    Raises:
        TooFewEvents: If the cloud has fewer than min_plane_events points
    """
    if len(cloud) < cfg.min_plane_events:
        raise TooFewEvents(
            f"{len(cloud)} events, at least {cfg.min_plane_events} required"
        )

    rng = np.random.default_rng(cfg.seed)
    remaining = np.arange(len(cloud))
    planes: List[FittedPlane] = []

    while len(planes) < cfg.max_planes and len(remaining) >= max(cfg.min_plane_events, 3):
        points = cloud[remaining]
        normal, offset, count = _best_hypothesis(points, cfg, rng)
        if normal is None or count < cfg.min_plane_events:
            break

        normal, offset, local = _refine(points, normal, offset, cfg.plane_inlier_tol)
        if len(local) < cfg.min_plane_events:
            break

        planes.append(FittedPlane(normal=normal, offset=offset, inliers=remaining[local]))
        remaining = np.delete(remaining, local)

    logger.debug("segmented planes=%d leftover=%d", len(planes), len(remaining))
    return planes


# ============================================================================
# PLANE TO LINES
# ============================================================================

def _line_at(plane: FittedPlane, s: float, along: np.ndarray, percentiles) -> Line2D:
    a, b, c = plane.normal
    ab_sq = a * a + b * b
    constant = c * s + plane.offset
    foot = -constant * np.array([a, b]) / ab_sq
    u = np.array([-b, a]) / math.sqrt(ab_sq)
    lo, hi = np.percentile(along, percentiles)
    if hi - lo < 1e-6:
        raise DegenerateLine("Plane inliers collapse to a point along the line")
    return Line2D(
        coeffs=(a, b, constant),
        endpoints=(tuple(foot + lo * u), tuple(foot + hi * u)),
    )


def plane_to_lines(
    plane: FittedPlane,
    cluster: EventCluster,
    cfg: DetectionConfig,
) -> Tuple[Line2D, Line2D]:
    """
    Intersect a fitted plane with the s = 0 and s = s_end event planes.

    Endpoints come from robust percentiles of the inliers projected onto the
    line direction, which is the same at every s.

    Raises:
        DegeneratePlane: If the plane is parallel to the event plane
    """
    a, b, _ = plane.normal
    if math.hypot(a, b) < 1e-6:
        raise DegeneratePlane("Plane parallel to the event plane has no image line")

    cloud = to_spacetime_cloud(cluster, cfg)[plane.inliers]
    u = np.array([-b, a]) / math.hypot(a, b)
    along = cloud[:, :2] @ u

    s_end = cfg.time_scale * (cluster.t_end - cluster.t_start)
    percentiles = list(cfg.endpoint_percentiles)
    return (
        _line_at(plane, 0.0, along, percentiles),
        _line_at(plane, s_end, along, percentiles),
    )


def _is_duplicate(candidate: Line2D, kept: Line2D, cfg: DetectionConfig) -> bool:
    cos_angle = abs(float(candidate.direction @ kept.direction))
    if math.degrees(math.acos(min(1.0, cos_angle))) >= cfg.dedup_angle_deg:
        return False
    d1 = abs(event_line_distances(candidate.midpoint, kept.coeffs)[0, 0])
    d2 = abs(event_line_distances(kept.midpoint, candidate.coeffs)[0, 0])
    return d1 < cfg.dedup_distance and d2 < cfg.dedup_distance


def detect_lines(cluster: EventCluster, cfg: DetectionConfig) -> List[DetectedLine]:
    """
    Detect end-of-window image lines in an event cluster.

    Returns:
        Deduplicated lines ordered by decreasing support

    Raises:
        TooFewEvents: If the cluster has fewer than min_plane_events events
    """
    if len(cluster) < cfg.min_plane_events:
        raise TooFewEvents(
            f"{len(cluster)} events, at least {cfg.min_plane_events} required"
        )

    cloud = to_spacetime_cloud(cluster, cfg)
    keep = denoise_cloud(cloud, cfg)
    if len(keep) < cfg.min_plane_events:
        logger.info("detection: %d of %d events survive denoising, no lines", len(keep), len(cloud))
        return []

    detected: List[DetectedLine] = []
    for plane in segment_planes(cloud[keep], cfg):
        mapped = FittedPlane(normal=plane.normal, offset=plane.offset, inliers=keep[plane.inliers])
        try:
            start_line, end_line = plane_to_lines(mapped, cluster, cfg)
        except (DegeneratePlane, DegenerateLine) as e:
            logger.debug("skipping plane: %s", e)
            continue
        detected.append(DetectedLine(line=end_line, start_line=start_line, support=len(mapped.inliers)))

    detected = [d for d in detected if d.support >= cfg.min_plane_events]
    detected.sort(key=lambda d: -d.support)

    unique: List[DetectedLine] = []
    for candidate in detected:
        if not any(_is_duplicate(candidate.line, kept.line, cfg) for kept in unique):
            unique.append(candidate)

    logger.info("detection: events=%d planes=%d lines=%d", len(cluster), len(detected), len(unique))
    return unique
