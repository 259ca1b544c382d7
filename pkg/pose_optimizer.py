"""
Robust Pose Optimization and Tracking
=====================================
Refines an object pose by minimizing the weighted squared event-to-line
distance C(X) = sum_i w_i d_i^2, and chains windows into a tracker.

ITERATION (one outer step):
1. Residuals d_i of every assigned event under the current pose
2. Scale and weight update, one ESTIMATOR_REGISTRY stage after another
     LS: unit weights (MAD scale reported only)
     M:  MAD scale, Tukey weights with c_m
     S:  first MAD + Tukey with c_s, then the S-scale update and rho(u)/u^2 weights
     MM: S stage to convergence, scale frozen, then Tukey weights with c_m
3. Stop when |grad C| < gradient_threshold
4. Damped Gauss-Newton on C with the weights frozen

POSE UPDATE:
R <- exp(skew(dw)) R, T <- T + dt   (6 parameters: dw, dt)

TRACKER RULES:
- Predict with the twist estimated from the two previous poses
- Re-match once per window, then optimize
- Coast on the predicted pose when fewer than 3 lines are visible, fewer
  than min_assignments events are assigned or the normal matrix is singular
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from config import MatchConfig, OptConfig, RunConfig
from errors import (
    EstimationError,
    InitializationFailed,
    LineAtInfinity,
    NoAssignments,
    NonPositiveDepth,
    NoVisibleLines,
    SingularNormalMatrix,
)
from event_windowing import EventCluster, EventStream, cluster_events
from geometry import MIN_DEPTH, CameraIntrinsics, Pose
from line_detection import detect_lines
from matching import (
    MatchSet,
    ObjectModel,
    Twist,
    estimate_twist,
    match_events,
    predict_pose,
    visible_lines,
)
from parameter_registry import ESTIMATOR_REGISTRY, EstimatorKind
from pose_init import initial_pose
from robust_estimators import mad_scale, s_scale_update, s_weight, tukey_weight


logger = logging.getLogger(__name__)

MIN_TRACKED_LINES = 3


# ============================================================================
# RESULT TYPES
# ============================================================================

@dataclass(frozen=True)
class RobustState:
    sigma: float
    weights: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class CostEvaluation:
    """C(X), its gradient and the per-assignment residuals and Jacobian rows."""
    cost: float
    gradient: np.ndarray
    residuals: np.ndarray
    jacobian: np.ndarray


@dataclass(frozen=True)
class OptResult:
    pose: Pose
    state: RobustState
    iterations: int
    cost: float
    converged: bool
    matches: Optional[MatchSet] = None


@dataclass(frozen=True)
class TrackRecord:
    t_center: float
    pose: Pose
    coasting: bool
    n_events: int
    n_assigned: int = 0
    n_rejected: int = 0
    iterations: int = 0
    cost: float = float("nan")
    sigma: float = float("nan")

    def log_row(self) -> dict:
        return {
            "t_center": f"{self.t_center:.9f}",
            "n_events": self.n_events,
            "n_assigned": self.n_assigned,
            "n_rejected": self.n_rejected,
            "iterations": self.iterations,
            "cost": f"{self.cost:.9g}",
            "coasting": int(self.coasting),
        }


# ============================================================================
# COST, RESIDUALS, JACOBIAN
# ============================================================================

def _skew_rows(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


@dataclass(frozen=True)
class _Assigned:
    """Per-assignment data: homogeneous event pixels and model endpoints."""
    events_h: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    K_inv_t: np.ndarray

    @classmethod
    def build(cls, points: np.ndarray, line_ids: np.ndarray, model: ObjectModel, K: CameraIntrinsics):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        line_ids = np.asarray(line_ids, dtype=int)
        if len(points) == 0:
            raise NoAssignments("No events are assigned to model lines")
        if len(points) != len(line_ids):
            raise ValueError("points and line_ids must have equal length")
        p1, p2 = model.endpoints()
        return cls(
            events_h=np.column_stack([points, np.ones(len(points))]),
            p1=p1[line_ids],
            p2=p2[line_ids],
            K_inv_t=np.linalg.inv(K.matrix()).T,
        )

    def __len__(self) -> int:
        return len(self.events_h)


def _residuals(data: _Assigned, pose: Pose, jacobian: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Signed distances of events to their projected model lines.

    The image line of a segment with camera-frame endpoints X1, X2 is
    K^-T (X1 x X2), the same line (and sign) as the cross product of the
    projected endpoints.
    """
    R, T = pose.rotation, pose.translation
    rp1 = data.p1 @ R.T
    rp2 = data.p2 @ R.T
    x1 = rp1 + T
    x2 = rp2 + T
    if np.any(x1[:, 2] <= MIN_DEPTH) or np.any(x2[:, 2] <= MIN_DEPTH):
        raise NonPositiveDepth("Model line endpoint at or behind the camera")

    m = np.cross(x1, x2)
    lines = m @ data.K_inv_t.T
    h = np.hypot(lines[:, 0], lines[:, 1])
    if np.any(h < 1e-12 * np.linalg.norm(lines, axis=1)):
        raise LineAtInfinity("Projected model line has no finite image component")
    g = np.einsum("ij,ij->i", data.events_h, lines)
    d = g / h
    if not jacobian:
        return d, None

    eye = np.broadcast_to(np.eye(3), (len(data), 3, 3))
    j1 = np.concatenate([-_skew_rows(rp1), eye], axis=2)
    j2 = np.concatenate([-_skew_rows(rp2), eye], axis=2)
    dm = -_skew_rows(x2) @ j1 + _skew_rows(x1) @ j2
    dl = np.einsum("ij,njk->nik", data.K_inv_t, dm)

    planar = lines.copy()
    planar[:, 2] = 0.0
    dd_dl = data.events_h / h[:, None] - (g / h ** 3)[:, None] * planar
    return d, np.einsum("ni,nik->nk", dd_dl, dl)


def _evaluate(data: _Assigned, pose: Pose, weights: np.ndarray) -> CostEvaluation:
    d, J = _residuals(data, pose, jacobian=True)
    wd = weights * d
    return CostEvaluation(
        cost=float(np.sum(wd * d)),
        gradient=2.0 * J.T @ wd,
        residuals=d,
        jacobian=J,
    )


def _cost(data: _Assigned, pose: Pose, weights: np.ndarray) -> float:
    try:
        d, _ = _residuals(data, pose)
    except (NonPositiveDepth, LineAtInfinity):
        return np.inf
    return float(np.sum(weights * d * d))


def pose_cost_and_gradient(
    points: np.ndarray,
    line_ids: np.ndarray,
    weights: np.ndarray,
    model: ObjectModel,
    K: CameraIntrinsics,
    pose: Pose,
) -> CostEvaluation:
    """
    C(X) = sum w_i d_i^2 with its gradient in the 6 local pose parameters.

    Args:
        points: (N, 2) event pixels
        line_ids: (N,) model line index of each event
        weights: (N,) frozen weights
    """
    data = _Assigned.build(points, line_ids, model, K)
    return _evaluate(data, pose, np.asarray(weights, dtype=float))


# ============================================================================
# WEIGHTED GAUSS-NEWTON STEP
# ============================================================================

def _minimize_frozen(data: _Assigned, pose: Pose, weights: np.ndarray, ocfg: OptConfig) -> Pose:
    """Levenberg-damped Gauss-Newton on C with fixed weights."""
    damping = ocfg.damping_initial
    cost = _cost(data, pose, weights)

    for _ in range(ocfg.inner_iterations):
        ev = _evaluate(data, pose, weights)
        if np.linalg.norm(ev.gradient) < ocfg.gradient_threshold:
            break
        J = ev.jacobian
        H = J.T @ (weights[:, None] * J)
        if np.linalg.cond(H) > ocfg.max_condition:
            raise SingularNormalMatrix("Normal matrix is ill-conditioned for this assignment")
        g = 0.5 * ev.gradient

        improved = False
        while damping <= ocfg.damping_max:
            step = np.linalg.solve(H + damping * np.diag(np.diag(H)), -g)
            candidate = pose.retract(step)
            candidate_cost = _cost(data, candidate, weights)
            if candidate_cost < cost:
                pose, cost = candidate, candidate_cost
                damping = max(damping / ocfg.damping_factor, 1e-12)
                improved = True
                break
            damping *= ocfg.damping_factor
        if not improved:
            break
    return pose


# ============================================================================
# REWEIGHTING RULES
# ============================================================================

def _reweight(rule: str, residuals: np.ndarray, previous: Optional[RobustState], c: float,
              ocfg: OptConfig, frozen_sigma: Optional[float] = None) -> RobustState:
    floor = ocfg.sigma_floor
    if rule == "unit":
        sigma = mad_scale(residuals, floor)
        weights = np.ones_like(residuals)
    elif rule == "tukey":
        sigma = frozen_sigma if frozen_sigma is not None else mad_scale(residuals, floor)
        weights = tukey_weight(residuals / sigma, c)
    elif rule == "s":
        if previous is None:
            sigma = mad_scale(residuals, floor)
            weights = tukey_weight(residuals / sigma, c)
        else:
            sigma = s_scale_update(previous.weights, residuals, floor=floor)
            weights = s_weight(residuals / sigma, c)
    else:
        raise ValueError(f"Unknown reweighting rule '{rule}'")
    return RobustState(sigma=float(sigma), weights=np.asarray(weights, dtype=float), residuals=residuals)


def _run_stage(data: _Assigned, pose: Pose, rule: str, c: float, max_iterations: int,
               ocfg: OptConfig, frozen_sigma: Optional[float] = None):
    """Outer reweight / minimize loop; returns (pose, state, iterations, converged)."""
    state = None
    converged = False
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        d, _ = _residuals(data, pose)
        state = _reweight(rule, d, state, c, ocfg, frozen_sigma)
        ev = _evaluate(data, pose, state.weights)
        if np.linalg.norm(ev.gradient) < ocfg.gradient_threshold:
            converged = True
            break
        pose = _minimize_frozen(data, pose, state.weights, ocfg)
    return pose, state, iterations, converged


def refine_pose(
    points: np.ndarray,
    line_ids: np.ndarray,
    model: ObjectModel,
    K: CameraIntrinsics,
    pose0: Pose,
    kind: EstimatorKind,
    ocfg: OptConfig,
) -> OptResult:
    """
    Robust pose refinement over a fixed event-to-line assignment.

    The returned pose never has a higher cost than pose0 under the final
    weights; if the iteration ends worse, pose0 is returned instead.

    Raises:
        NoAssignments: If no events are given
        SingularNormalMatrix: If the geometry does not constrain the pose
    """
    data = _Assigned.build(points, line_ids, model, K)
    stages = ESTIMATOR_REGISTRY[EstimatorKind(kind)]["stages"]

    pose, state, iterations, converged = pose0, None, 0, False
    for i, stage in enumerate(stages):
        c = getattr(ocfg, stage["c_field"]) if stage["c_field"] else 1.0
        if i == len(stages) - 1:
            budget = max(1, ocfg.max_iterations - iterations)
        else:
            budget = getattr(ocfg, stage["iterations"])
        frozen_sigma = state.sigma if stage.get("frozen_scale") else None
        pose, state, used, converged = _run_stage(data, pose, stage["rule"], c, budget, ocfg, frozen_sigma)
        iterations += used

    cost = _cost(data, pose, state.weights)
    start_cost = _cost(data, pose0, state.weights)
    if cost > start_cost + 1e-12:
        logger.info("optimizer: kept start pose cost=%.6g start_cost=%.6g", cost, start_cost)
        pose, cost = pose0, start_cost
        d, _ = _residuals(data, pose)
        state = RobustState(sigma=state.sigma, weights=state.weights, residuals=d)

    return OptResult(pose=pose, state=state, iterations=iterations, cost=cost, converged=converged)


def optimize_pose(
    cluster: EventCluster,
    model: ObjectModel,
    K: CameraIntrinsics,
    pose0: Pose,
    kind: EstimatorKind,
    mcfg: MatchConfig,
    ocfg: OptConfig,
) -> OptResult:
    """
    Match the cluster's events to the lines visible under pose0, then refine.

    Raises:
        NoVisibleLines: If no model line is visible under pose0
        NoAssignments: If no event survives the assignment gates
        SingularNormalMatrix: If the geometry does not constrain the pose
    """
    matches = match_events(cluster, visible_lines(model, pose0, K), mcfg).drop_sparse_lines(mcfg.min_line_events)
    if len(matches) == 0:
        raise NoAssignments("No events survive the assignment gates")
    result = refine_pose(
        cluster.events.xy[matches.event_index], matches.line_index, model, K, pose0, kind, ocfg
    )
    return OptResult(
        pose=result.pose,
        state=result.state,
        iterations=result.iterations,
        cost=result.cost,
        converged=result.converged,
        matches=matches,
    )


# ============================================================================
# TRACKING
# ============================================================================

class PoseTracker:
    """
    Sequential window-by-window tracker for one object.

    Usage:
        tracker = PoseTracker(model, K, EstimatorKind.MM, RunConfig())
        records = tracker.run(stream)
    """

    def __init__(self, model: ObjectModel, K: CameraIntrinsics, kind: EstimatorKind, config: RunConfig):
        self.model = model
        self.K = K
        self.kind = EstimatorKind(kind)
        self.config = config
        self._history: List[Tuple[float, Pose]] = []

    # ------------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------------

    def initialize(self, cluster: EventCluster) -> Pose:
        """
        Detect lines in the cluster and estimate the pose without correspondences.

        Raises:
            InitializationFailed: If detection or branch-and-bound cannot produce a pose
        """
        try:
            lines = detect_lines(cluster, self.config.detection)
            result = initial_pose([d.line for d in lines], self.model, self.K, self.config.bnb)
        except EstimationError as e:
            raise InitializationFailed(f"Initialization failed on the first window: {e}") from e
        logger.info(
            "initialized t=%.6f lines=%d count=%d residual=%.3f",
            cluster.t_center, len(lines), result.achieved_count, result.mean_residual,
        )
        return result.pose

    def predict(self, t: float) -> Pose:
        """Constant-velocity prediction of the pose at time t from the history."""
        t_prev, pose_prev = self._history[-1]
        if len(self._history) < 2:
            twist = Twist.zero()
        else:
            t_before, pose_before = self._history[-2]
            twist = estimate_twist(pose_before, pose_prev, t_prev - t_before)
        return predict_pose(pose_prev, twist, t - t_prev)

    def step(self, cluster: EventCluster, predicted: Pose) -> TrackRecord:
        """Refine one window starting from a predicted pose; coast on failure."""
        cfg = self.config
        n_events = len(cluster)
        coast = TrackRecord(t_center=cluster.t_center, pose=predicted, coasting=True, n_events=n_events)

        visible = visible_lines(self.model, predicted, self.K)
        if len(visible) < MIN_TRACKED_LINES:
            logger.warning("coasting t=%.6f visible_lines=%d", cluster.t_center, len(visible))
            return coast

        try:
            matches = match_events(cluster, visible, cfg.match).drop_sparse_lines(cfg.match.min_line_events)
        except NoVisibleLines:
            return coast
        if len(matches) < cfg.opt.min_assignments:
            logger.warning("coasting t=%.6f assigned=%d", cluster.t_center, len(matches))
            return TrackRecord(
                t_center=cluster.t_center, pose=predicted, coasting=True, n_events=n_events,
                n_assigned=len(matches), n_rejected=len(matches.rejected),
            )

        try:
            result = refine_pose(
                cluster.events.xy[matches.event_index], matches.line_index,
                self.model, self.K, predicted, self.kind, cfg.opt,
            )
        except (SingularNormalMatrix, NoAssignments, NonPositiveDepth, LineAtInfinity) as e:
            logger.warning("coasting t=%.6f reason=%s", cluster.t_center, e)
            return coast

        logger.debug(
            "window t=%.6f assigned=%d rejected=%d iterations=%d cost=%.4g sigma=%.3f",
            cluster.t_center, len(matches), len(matches.rejected),
            result.iterations, result.cost, result.state.sigma,
        )
        return TrackRecord(
            t_center=cluster.t_center,
            pose=result.pose,
            coasting=False,
            n_events=n_events,
            n_assigned=len(matches),
            n_rejected=len(matches.rejected),
            iterations=result.iterations,
            cost=result.cost,
            sigma=result.state.sigma,
        )

    def run(self, stream: EventStream, start_pose: Optional[Pose] = None) -> List[TrackRecord]:
        """
        Track through every cluster of the stream.

        Args:
            stream: Time-sorted events
            start_pose: Pose at the first cluster's center; estimated from
                the first cluster when omitted

        Raises:
            InitializationFailed: If the stream is empty or initialization fails
        """
        clusters = cluster_events(stream, self.config.window)
        if not clusters:
            raise InitializationFailed("Event stream is empty")

        self._history = []
        records: List[TrackRecord] = []
        for i, cluster in enumerate(clusters):
            if i == 0:
                predicted = start_pose if start_pose is not None else self.initialize(cluster)
            else:
                predicted = self.predict(cluster.t_center)
            record = self.step(cluster, predicted)
            records.append(record)
            self._history.append((cluster.t_center, record.pose))

        n_coasting = sum(r.coasting for r in records)
        logger.info("tracked windows=%d coasting=%d estimator=%s", len(records), n_coasting, self.kind.value)
        return records


def track(
    stream: EventStream,
    model: ObjectModel,
    K: CameraIntrinsics,
    kind: EstimatorKind,
    config: RunConfig,
    start_pose: Optional[Pose] = None,
) -> List[TrackRecord]:
    """One pose per cluster; see PoseTracker.run."""
    return PoseTracker(model, K, kind, config).run(stream, start_pose)
