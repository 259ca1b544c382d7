"""
Trajectory Metrics
==================
Pose error metrics and absolute trajectory error.

METRICS:
- Err_R: arccos((trace(R^T R_truth) - 1) / 2), radians
- Err_T: |T - T_truth| / |T_truth|
- ATE:   RMSE of position residuals after closed-form rigid alignment
         (rotation + translation, no scale) of the estimate onto the truth.
         Also reported divided by the truth extent (bounding-box diagonal)
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from errors import TimestampMismatch, TooFewPoses, ZeroTruthTranslation
from geometry import Pose


logger = logging.getLogger(__name__)

TIMESTAMP_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Trajectory:
    """Timestamped object poses: t (N,), rotations (N, 3, 3), translations (N, 3)."""
    t: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        if not (len(self.t) == len(self.rotations) == len(self.translations)):
            raise ValueError("Trajectory columns must have equal length")

    @classmethod
    def from_poses(cls, times, poses: List[Pose]) -> "Trajectory":
        return cls(
            t=np.asarray(times, dtype=float),
            rotations=np.array([p.rotation for p in poses]).reshape(-1, 3, 3),
            translations=np.array([p.translation for p in poses]).reshape(-1, 3),
        )

    def __len__(self) -> int:
        return len(self.t)

    def pose(self, i: int) -> Pose:
        return Pose(rotation=self.rotations[i], translation=self.translations[i])


@dataclass(frozen=True)
class AteResult:
    rmse: float
    normalized_rmse: float
    extent: float
    n_poses: int


def err_rotation(R: np.ndarray, R_truth: np.ndarray) -> float:
    """Geodesic angle between two rotations, in [0, pi]."""
    cos_angle = (np.trace(np.asarray(R).T @ np.asarray(R_truth)) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_angle, -1.0, 1.0)))


def err_translation(T: np.ndarray, T_truth: np.ndarray) -> float:
    """
    Relative translation error.

    Raises:
        ZeroTruthTranslation: If |T_truth| is zero
    """
    norm = float(np.linalg.norm(T_truth))
    if norm == 0:
        raise ZeroTruthTranslation("Relative error is undefined for a zero true translation")
    return float(np.linalg.norm(np.asarray(T) - np.asarray(T_truth)) / norm)


def associate(estimated: Trajectory, truth: Trajectory, tolerance: float = TIMESTAMP_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pair every estimated pose with the truth pose at the same timestamp.

    Returns:
        (estimated indices, truth indices)

    Raises:
        TimestampMismatch: If an estimated timestamp has no truth within tolerance
    """
    order = np.argsort(truth.t, kind="stable")
    sorted_t = truth.t[order]
    pos = np.clip(np.searchsorted(sorted_t, estimated.t), 1, max(len(sorted_t) - 1, 1))
    left = np.clip(pos - 1, 0, len(sorted_t) - 1)
    right = np.clip(pos, 0, len(sorted_t) - 1)
    pick = np.where(
        np.abs(sorted_t[left] - estimated.t) <= np.abs(sorted_t[right] - estimated.t), left, right
    )
    gap = np.abs(sorted_t[pick] - estimated.t)
    if np.any(gap > tolerance):
        worst = float(estimated.t[int(np.argmax(gap))])
        raise TimestampMismatch(f"No ground-truth pose within {tolerance} s of t={worst}")
    return np.arange(len(estimated)), order[pick]


def align_rigid(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form rotation and translation minimizing |R source + t - target|^2.

    Args:
        source, target: (N, 3) corresponding points
    """
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    W = (target - mu_t).T @ (source - mu_s)
    U, _, Vt = np.linalg.svd(W)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_t - R @ mu_s


def ate_rmse(estimated: Trajectory, truth: Trajectory) -> AteResult:
    """
    Absolute trajectory error of object positions after rigid alignment.

    Raises:
        TooFewPoses: With fewer than 3 associated poses
        TimestampMismatch: If timestamps cannot be associated
    """
    if len(estimated) < 3 or len(truth) < 3:
        raise TooFewPoses("ATE needs at least 3 poses in each trajectory")
    est_idx, truth_idx = associate(estimated, truth)
    source = estimated.translations[est_idx]
    target = truth.translations[truth_idx]

    R, t = align_rigid(source, target)
    residual = source @ R.T + t - target
    rmse = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))

    extent = float(np.linalg.norm(target.max(axis=0) - target.min(axis=0)))
    normalized = rmse / extent if extent > 0 else float("nan")
    logger.info("ate poses=%d rmse=%.6g normalized=%.6g", len(source), rmse, normalized)
    return AteResult(rmse=rmse, normalized_rmse=normalized, extent=extent, n_poses=len(source))
