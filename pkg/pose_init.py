"""
Correspondence-Free Pose Initialization
=======================================
Initial object pose from detected image lines and a wireframe model, with no
prior 2D-3D line correspondences.

METHOD:
1. Rotation by branch-and-bound over the axis-angle cube [-pi, pi]^3,
   maximizing the number of observed lines whose interpretation-plane normal
   is perpendicular (within epsilon_min) to some rotated model direction
2. Correspondences read off the optimal rotation
3. Translation from the linear constraints n_j^T (R P_k + T) = 0

BOUNDS (branch with center r0 and side delta):
- lower: objective evaluated at r0
- upper: objective at r0 with the threshold relaxed by
  mu = min(sqrt(3) * delta / 2, pi), which no rotation in the branch can beat
"""

import heapq
import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from config import BnbConfig
from errors import (
    NoInliers,
    NonPositiveDepth,
    QueueOverflow,
    RankDeficient,
    TooFewCorrespondences,
)
from geometry import (
    CameraIntrinsics,
    Line2D,
    Pose,
    event_line_distances,
    interpretation_plane_normal,
    project_line,
    rodrigues,
    rodrigues_batch,
)
from matching import ObjectModel


logger = logging.getLogger(__name__)

MAX_CONDITION = 1e8
SQRT3 = math.sqrt(3.0)

# Child center offsets for octree subdivision, in units of the child half side
_OCTANTS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)


@dataclass(frozen=True)
class LinePairSet:
    """
    Everything the rotation search needs.

    normals:    (J, 3) unit interpretation-plane normals of observed lines
    directions: (K, 3) unit model line directions
    points:     (K, 3) one point per model line (its midpoint)
    """
    normals: np.ndarray
    directions: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        if len(self.normals) == 0 or len(self.directions) == 0:
            raise ValueError("LinePairSet needs at least one observed and one model line")
        if len(self.directions) != len(self.points):
            raise ValueError("One point per model direction is required")

    @classmethod
    def from_observations(cls, observed: List[Line2D], model: ObjectModel, K: CameraIntrinsics) -> "LinePairSet":
        p1, p2 = model.endpoints()
        directions = p2 - p1
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return cls(
            normals=np.array([interpretation_plane_normal(K, line) for line in observed]),
            directions=directions,
            points=0.5 * (p1 + p2),
        )


@dataclass(frozen=True)
class RotationBranch:
    center: np.ndarray
    half_side: float
    lower: int
    upper: int

    @property
    def side(self) -> float:
        return 2.0 * self.half_side


@dataclass(frozen=True)
class Correspondences:
    """(observed index j, model index k) pairs; each j appears at most once."""
    pairs: Tuple[Tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def to_list(self) -> List[List[int]]:
        return [[int(j), int(k)] for j, k in self.pairs]


@dataclass(frozen=True)
class BnbResult:
    rotation: np.ndarray
    correspondences: Correspondences
    count: int
    upper_bound: int
    expanded: int


@dataclass(frozen=True)
class InitResult:
    pose: Pose
    correspondences: Correspondences
    achieved_count: int
    mean_residual: float
    low_confidence: bool

    def to_dict(self) -> dict:
        data = self.pose.to_dict()
        data.update({
            "correspondences": self.correspondences.to_list(),
            "achieved_count": int(self.achieved_count),
            "mean_residual": float(self.mean_residual),
            "low_confidence": bool(self.low_confidence),
        })
        return data


# ============================================================================
# OBJECTIVE AND BOUNDS
# ============================================================================

def _sin_threshold(eps: np.ndarray) -> np.ndarray:
    # |angle(n, Rv) - pi/2| = |arcsin(n . Rv)|, so the test is |n . Rv| <= sin(eps);
    # eps >= pi/2 accepts everything
    eps = np.asarray(eps, dtype=float)
    return np.where(eps >= math.pi / 2, np.inf, np.sin(np.minimum(eps, math.pi / 2)))


def inlier_counts(rotations: np.ndarray, pairs: LinePairSet, eps) -> np.ndarray:
    """Vectorized inlier cardinality for (B, 3, 3) rotations and per-rotation thresholds."""
    rotated = np.einsum("bij,kj->bki", rotations, pairs.directions)
    dots = np.einsum("jc,bkc->bjk", pairs.normals, rotated)
    limit = np.broadcast_to(_sin_threshold(eps), (len(rotations),))
    hits = np.abs(dots) <= limit[:, None, None]
    return hits.any(axis=2).sum(axis=1)


def inlier_count(R: np.ndarray, pairs: LinePairSet, eps: float) -> int:
    """Number of observed lines with some model direction perpendicular to their normal within eps."""
    return int(inlier_counts(np.asarray(R)[None], pairs, eps)[0])


def relaxation(half_side: float) -> float:
    """mu = min(sqrt(3) * side / 2, pi): the largest angular displacement inside a branch."""
    return min(SQRT3 * half_side, math.pi)


def branch_bounds(branch: RotationBranch, pairs: LinePairSet, eps: float) -> Tuple[int, int]:
    """(lower, upper) bounds of the inlier cardinality over a cube branch."""
    R0 = rodrigues(branch.center)
    lower = inlier_count(R0, pairs, eps)
    upper = inlier_count(R0, pairs, eps + relaxation(branch.half_side))
    return lower, upper


def assign_correspondences(R: np.ndarray, pairs: LinePairSet, eps: float) -> Correspondences:
    """For each inlier observed line, the model line closest to perpendicular."""
    dots = np.abs(pairs.normals @ (R @ pairs.directions.T))
    best = np.argmin(dots, axis=1)
    limit = float(_sin_threshold(eps))
    return Correspondences(tuple(
        (j, int(best[j])) for j in range(len(dots)) if dots[j, best[j]] <= limit
    ))


# ============================================================================
# BRANCH AND BOUND
# ============================================================================

def bnb_rotation_search(pairs: LinePairSet, cfg: BnbConfig) -> BnbResult:
    """
    Globally optimal rotation for the inlier-cardinality objective.

    Best-first search ordered by upper bound, ties broken by smaller branch
    and then by lexicographic center, so the result is deterministic.
    Branches narrower than min_branch_side are leaves: they are dropped
    without splitting and only their upper bound is kept for the report.
    The search ends when the queue is empty or the best pending upper bound
    cannot beat the incumbent.

    Raises:
        QueueOverflow: If more than max_queue branches are pending
        NoInliers: If no rotation makes any observed line an inlier
    """
    eps = cfg.epsilon_min
    root_center = np.zeros(3)
    root_half = math.pi
    lower, upper = branch_bounds(RotationBranch(root_center, root_half, 0, 0), pairs, eps)

    best_count = lower
    best_center = root_center
    queue = [(-upper, 2 * root_half, tuple(root_center))]
    leaf_upper = 0
    expanded = 0

    while queue:
        neg_upper, side, center = heapq.heappop(queue)
        branch_upper = -neg_upper
        if branch_upper <= best_count:
            break
        if side < cfg.min_branch_side:
            leaf_upper = max(leaf_upper, branch_upper)
            continue

        expanded += 1
        half = side / 4.0
        centers = np.asarray(center) + half * _OCTANTS
        # Children wholly outside the pi-ball duplicate rotations inside it
        centers = centers[np.linalg.norm(centers, axis=1) - SQRT3 * half <= math.pi]
        if len(centers) == 0:
            continue

        rotations = rodrigues_batch(centers)
        lowers = inlier_counts(rotations, pairs, eps)
        uppers = np.minimum(
            inlier_counts(rotations, pairs, eps + relaxation(half)),
            branch_upper,
        )

        i = int(np.argmax(lowers))
        if lowers[i] > best_count:
            best_count = int(lowers[i])
            best_center = centers[i]

        for c, up in zip(centers, uppers):
            if up > best_count:
                heapq.heappush(queue, (-int(up), 2 * half, tuple(c)))
        if len(queue) > cfg.max_queue:
            raise QueueOverflow(f"Branch queue exceeded {cfg.max_queue} entries")

        if expanded % 10000 == 0:
            logger.debug("bnb expanded=%d queue=%d best=%d upper=%d", expanded, len(queue), best_count, branch_upper)

    if best_count == 0:
        raise NoInliers("No rotation produces any inlier line")

    R = rodrigues(best_center)
    count = inlier_count(R, pairs, eps)
    logger.info("bnb: count=%d upper=%d expanded=%d", count, max(leaf_upper, count), expanded)
    return BnbResult(
        rotation=R,
        correspondences=assign_correspondences(R, pairs, eps),
        count=count,
        upper_bound=max(leaf_upper, count),
        expanded=expanded,
    )


# ============================================================================
# TRANSLATION
# ============================================================================

def solve_translation(R: np.ndarray, corr: Correspondences, pairs: LinePairSet) -> np.ndarray:
    """
    Least-squares T from n_j^T (R P_k + T) = 0 over all correspondences.

    Raises:
        TooFewCorrespondences: With fewer than 3 pairs
        RankDeficient: If the stacked normals are ill-conditioned (cond >= 1e8)
    """
    if len(corr) < 3:
        raise TooFewCorrespondences(f"{len(corr)} correspondences, at least 3 required")
    j_idx = np.array([j for j, _ in corr.pairs])
    k_idx = np.array([k for _, k in corr.pairs])
    A = pairs.normals[j_idx]
    b = -np.einsum("ij,ij->i", A, pairs.points[k_idx] @ R.T)

    singular = np.linalg.svd(A, compute_uv=False)
    if singular[-1] <= 0 or singular[0] / singular[-1] >= MAX_CONDITION:
        raise RankDeficient("Observed line normals do not constrain the translation")
    T, *_ = np.linalg.lstsq(A, b, rcond=None)
    return T


def _plane_normal(model: ObjectModel):
    """Unit normal of the model's vertices if they are coplanar, else None."""
    verts = np.asarray(model.vertices, dtype=float)
    centered = verts - verts.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=True)
    if len(s) < 3:
        return vt[-1]
    return vt[-1] if s[-1] <= 1e-9 * s[0] else None


def _mean_reprojection_residual(
    observed: List[Line2D],
    model: ObjectModel,
    K: CameraIntrinsics,
    pose: Pose,
    corr: Correspondences,
) -> float:
    residuals = []
    for j, k in corr.pairs:
        try:
            projected = project_line(K, pose, model.line(k))
        except (NonPositiveDepth, ValueError):
            return math.inf
        ends = np.array(observed[j].endpoints)
        residuals.extend(np.abs(event_line_distances(ends, projected.coeffs)[:, 0]))
    return float(np.mean(residuals)) if residuals else math.inf


def initial_pose(
    observed: List[Line2D],
    model: ObjectModel,
    K: CameraIntrinsics,
    cfg: BnbConfig,
) -> InitResult:
    """
    Rotation by branch-and-bound, then linear translation.

    The result is flagged low-confidence when the mean endpoint-to-line
    residual of matched lines exceeds residual_gate or the model lands
    behind the camera.

    Raises:
        TooFewCorrespondences: With fewer than 3 observed lines or matches
    """
    if len(observed) < 3:
        raise TooFewCorrespondences(f"{len(observed)} observed lines, at least 3 required")

    pairs = LinePairSet.from_observations(observed, model, K)
    search = bnb_rotation_search(pairs, cfg)
    T = solve_translation(search.rotation, search.correspondences, pairs)
    pose = Pose(rotation=search.rotation, translation=T)

    normal = _plane_normal(model)
    if normal is not None and pose.transform(model.centroid())[2] <= 0:
        # A planar model and its half-turn about the plane normal explain the
        # same interpretation planes; the twin lands behind the camera
        R_twin = search.rotation @ rodrigues(np.pi * normal)
        twin = Pose(rotation=R_twin, translation=solve_translation(R_twin, search.correspondences, pairs))
        if twin.transform(model.centroid())[2] > 0:
            logger.debug("initialization: planar model flipped in front of the camera")
            pose = twin

    residual = _mean_reprojection_residual(observed, model, K, pose, search.correspondences)
    behind = pose.transform(model.centroid())[2] <= 0
    low_confidence = behind or residual > cfg.residual_gate
    if low_confidence:
        logger.warning(
            "initialization low-confidence: residual=%.3f behind_camera=%s", residual, behind
        )
    return InitResult(
        pose=pose,
        correspondences=search.correspondences,
        achieved_count=search.count,
        mean_residual=residual,
        low_confidence=low_confidence,
    )
