"""
Synthetic Scenes and Benchmark
==============================
Random line scenes, labeled event streams along constant-twist
trajectories, and the seeded pose-refinement benchmark.

GENERATION RULES:
- Lines are drawn in the camera frame: two random pixels, each back-projected
  to a random depth in depth_range; both pixels inside the image and at
  least min_line_pixels apart
- The model frame is a random rotation of the camera frame about the scene
  centroid, so the ground-truth pose is (R_gt, centroid)
- Each event samples its line at its own timestamp: a uniform position on
  the projected segment plus a Gaussian offset perpendicular to the line
- Outlier events are uniform over the image and labeled OUTLIER (-1)

BENCHMARK TRIAL:
events at the ground-truth pose -> start pose perturbed by a fixed angle and
a fixed fraction of |T| -> refinement with every estimator -> (Err_R, Err_T)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import MatchConfig, OptConfig, SweepSpec, SynthConfig
from errors import EstimationError
from event_windowing import EventCluster, EventStream
from geometry import CameraIntrinsics, Pose, normalize, rodrigues, rodrigues_batch
from matching import ObjectModel, Twist, visible_lines
from parameter_registry import EstimatorKind
from pose_optimizer import optimize_pose, refine_pose
from trajectory_metrics import Trajectory, err_rotation, err_translation


logger = logging.getLogger(__name__)

OUTLIER = -1
MAX_SCENE_ATTEMPTS = 100000


# ============================================================================
# SCENES
# ============================================================================

def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    axis = normalize(rng.normal(size=3))
    return rodrigues(axis * rng.uniform(0.0, np.pi))


def generate_scene(cfg: SynthConfig) -> Tuple[ObjectModel, Pose]:
    """
    Random line model and its ground-truth pose; deterministic per cfg.seed.

    Every projected endpoint under the returned pose lies inside the image.
    """
    rng = np.random.default_rng(cfg.seed)
    K = cfg.image
    K_inv = np.linalg.inv(K.matrix())
    lo, hi = cfg.depth_range

    segments = []
    attempts = 0
    while len(segments) < cfg.n_lines:
        attempts += 1
        if attempts > MAX_SCENE_ATTEMPTS:
            raise ValueError("Image too small for the requested minimum line length")
        pixels = rng.uniform((0.0, 0.0), (K.width, K.height), size=(2, 2))
        depths = rng.uniform(lo, hi, size=2)
        if np.linalg.norm(pixels[1] - pixels[0]) < cfg.min_line_pixels:
            continue
        rays = np.column_stack([pixels, np.ones(2)]) @ K_inv.T
        segments.append(rays * depths[:, None])

    camera_points = np.vstack(segments)
    translation = camera_points.mean(axis=0)
    rotation = _random_rotation(rng)
    model_points = (camera_points - translation) @ rotation

    model = ObjectModel(
        vertices=[tuple(p) for p in model_points],
        lines=[(2 * k, 2 * k + 1) for k in range(cfg.n_lines)],
    )
    return model, Pose(rotation=rotation, translation=translation)


# ============================================================================
# TRAJECTORIES AND EVENTS
# ============================================================================

@dataclass(frozen=True)
class TrajectorySpec:
    """Constant-twist ground-truth motion starting from pose0 at t = 0."""
    pose0: Pose
    twist: Twist
    duration: float
    window_rate: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.window_rate <= 0:
            raise ValueError("window_rate must be positive")

    @property
    def n_windows(self) -> int:
        return max(1, int(round(self.duration * self.window_rate)))

    def poses_at(self, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized predict_pose(pose0, twist, t): (N, 3, 3) rotations, (N, 3) translations."""
        times = np.asarray(times, dtype=float)
        phi = times[:, None] * self.twist.w
        delta_r = rodrigues_batch(phi)

        theta = np.linalg.norm(phi, axis=1)
        small = theta < 1e-8
        safe = np.where(small, 1.0, theta)
        b = phi / safe[:, None]
        sinc = np.where(small, 1.0, np.sin(safe) / safe)
        cos_term = np.where(small, 0.0, (1.0 - np.cos(safe)) / safe)
        v = self.twist.v
        # J v = sinc v + (1 - sinc) b (b.v) + cos_term (b x v)
        jv = (
            sinc[:, None] * v
            + (1.0 - sinc)[:, None] * b * (b @ v)[:, None]
            + cos_term[:, None] * np.cross(b, v)
        )
        delta_t = jv * times[:, None]

        rotations = np.einsum("ij,nkj->nik", self.pose0.rotation, delta_r)
        translations = self.pose0.translation - np.einsum("nij,nj->ni", rotations, delta_t)
        return rotations, translations

    def pose_at(self, t: float) -> Pose:
        R, T = self.poses_at(np.array([t]))
        return Pose(rotation=R[0], translation=T[0])

    def ground_truth(self, times: Optional[np.ndarray] = None) -> Trajectory:
        """Poses at the given times, by default at the generator's window centers."""
        if times is None:
            times = (np.arange(self.n_windows) + 0.5) / self.window_rate
        times = np.asarray(times, dtype=float)
        R, T = self.poses_at(times)
        return Trajectory(t=times, rotations=R, translations=T)


@dataclass(frozen=True)
class LabeledEvents:
    """Event stream plus the true model line of every event (OUTLIER for clutter)."""
    events: EventStream
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def _project_rows(K: CameraIntrinsics, R: np.ndarray, T: np.ndarray, points: np.ndarray):
    cam = np.einsum("nij,nj->ni", R, points) + T
    depth = cam[:, 2]
    safe = np.where(depth > 0, depth, 1.0)
    pixels = np.column_stack([K.fx * cam[:, 0] / safe + K.cx, K.fy * cam[:, 1] / safe + K.cy])
    return pixels, depth


def generate_events(model: ObjectModel, traj: TrajectorySpec, K: CameraIntrinsics, cfg: SynthConfig) -> LabeledEvents:
    """
    Labeled events along a trajectory; deterministic per cfg.seed.

    Per window, every model line visible at the window center receives
    events_per_line events with timestamps uniform in the window. Events
    that leave the image or fall behind the camera are dropped.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    p1, p2 = model.endpoints()
    period = 1.0 / traj.window_rate

    chunks_t, chunks_xy, chunks_label = [], [], []
    for w in range(traj.n_windows):
        t0 = w * period
        visible = [v.index for v in visible_lines(model, traj.pose_at(t0 + 0.5 * period), K)]
        if not visible:
            continue
        labels = np.repeat(np.asarray(visible), cfg.events_per_line)
        times = rng.uniform(t0, t0 + period, size=len(labels))
        R, T = traj.poses_at(times)
        a, depth_a = _project_rows(K, R, T, p1[labels])
        b, depth_b = _project_rows(K, R, T, p2[labels])

        along = rng.uniform(0.0, 1.0, size=len(labels))
        direction = b - a
        length = np.linalg.norm(direction, axis=1)
        safe = np.where(length > 0, length, 1.0)
        normal = np.column_stack([-direction[:, 1], direction[:, 0]]) / safe[:, None]
        offset = rng.normal(0.0, cfg.noise_sigma, size=len(labels)) if cfg.noise_sigma > 0 else np.zeros(len(labels))
        xy = a + along[:, None] * direction + offset[:, None] * normal

        keep = (depth_a > 0) & (depth_b > 0) & (length > 0)
        outlier = rng.random(len(labels)) < cfg.outlier_rate
        clutter = rng.uniform((0.0, 0.0), (K.width, K.height), size=(len(labels), 2))
        xy = np.where(outlier[:, None], clutter, xy)
        labels = np.where(outlier, OUTLIER, labels)
        keep &= K.contains(xy) | outlier

        chunks_t.append(times[keep])
        chunks_xy.append(xy[keep])
        chunks_label.append(labels[keep])

    if not chunks_t:
        return LabeledEvents(events=EventStream.empty(), labels=np.zeros(0, dtype=int))

    t = np.concatenate(chunks_t)
    xy = np.vstack(chunks_xy)
    labels = np.concatenate(chunks_label)
    order = np.argsort(t, kind="stable")
    polarity = np.where(rng.random(len(t)) < 0.5, -1, 1)
    stream = EventStream.from_arrays(t[order], xy[order, 0], xy[order, 1], polarity)
    return LabeledEvents(events=stream, labels=labels[order].astype(int))


def corrupt_correspondences(labels: np.ndarray, rate: float, n_lines: int, seed) -> np.ndarray:
    """Re-assign a `rate` fraction of labeled events to a uniformly chosen wrong line."""
    labels = np.asarray(labels, dtype=int).copy()
    if n_lines < 2 or rate <= 0:
        return labels
    rng = np.random.default_rng(seed)
    hit = (rng.random(len(labels)) < rate) & (labels >= 0)
    shift = rng.integers(1, n_lines, size=len(labels))
    labels[hit] = (labels[hit] + shift[hit]) % n_lines
    return labels


def perturb_pose(pose: Pose, rot_mag: float, trans_mag: float, seed) -> Pose:
    """Rotate by rot_mag about a random axis and shift by trans_mag * |T| in a random direction."""
    if rot_mag < 0 or trans_mag < 0:
        raise ValueError("Perturbation magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    axis = normalize(rng.normal(size=3))
    direction = normalize(rng.normal(size=3))
    return Pose(
        rotation=rodrigues(axis * rot_mag) @ pose.rotation,
        translation=pose.translation + direction * trans_mag * np.linalg.norm(pose.translation),
    )


# ============================================================================
# BENCHMARK
# ============================================================================

def _single_window(pose: Pose) -> TrajectorySpec:
    return TrajectorySpec(pose0=pose, twist=Twist.zero(), duration=0.01, window_rate=100.0)


def run_trial(
    synth: SynthConfig,
    seed,
    spec: SweepSpec,
    ocfg: Optional[OptConfig] = None,
    mcfg: Optional[MatchConfig] = None,
) -> Dict[EstimatorKind, Tuple[float, float]]:
    """
    One seeded pose-refinement trial.

    Returns:
        (Err_R, Err_T) per estimator; (nan, nan) when an estimator fails
    """
    ocfg = ocfg or OptConfig()
    mcfg = mcfg or MatchConfig()
    rng = np.random.default_rng(seed)
    scene_seed, event_seed, corrupt_seed, perturb_seed = (int(s) for s in rng.integers(2 ** 31, size=4))

    model, truth = generate_scene(synth.model_copy(update={"seed": scene_seed}))
    K = synth.image
    by_events = spec.outlier_mode == "events"
    event_cfg = synth.model_copy(update={
        "seed": event_seed,
        "outlier_rate": synth.outlier_rate if by_events else 0.0,
    })
    labeled = generate_events(model, _single_window(truth), K, event_cfg)
    start = perturb_pose(truth, spec.rotation_perturbation, spec.translation_perturbation, perturb_seed)

    if by_events:
        stream = labeled.events
        cluster = EventCluster(events=stream, t_center=0.005, t_start=0.0, t_end=0.01)
    else:
        labels = corrupt_correspondences(labeled.labels, synth.outlier_rate, synth.n_lines, corrupt_seed)
        points = labeled.events.xy

    errors = {}
    for kind in spec.estimators:
        try:
            if by_events:
                result = optimize_pose(cluster, model, K, start, kind, mcfg, ocfg)
            else:
                result = refine_pose(points, labels, model, K, start, kind, ocfg)
        except EstimationError as e:
            logger.debug("trial estimator=%s failed: %s", kind.value, e)
            errors[kind] = (float("nan"), float("nan"))
            continue
        errors[kind] = (
            err_rotation(result.pose.rotation, truth.rotation),
            err_translation(result.pose.translation, truth.translation),
        )
    return errors


def _trial_task(args):
    spec, point, value, trial, base, ocfg = args
    synth = spec.synth_for(value, base)
    return point, run_trial(synth, [spec.seed, point, trial], spec, ocfg)


def run_sweep(
    spec: SweepSpec,
    base: Optional[SynthConfig] = None,
    ocfg: Optional[OptConfig] = None,
    threads: int = 1,
) -> List[dict]:
    """
    Median and mean errors per (sweep value, estimator).

    Trial seeds derive from (spec.seed, point index, trial index), and results
    are aggregated in task order, so the report does not depend on threads.
    """
    tasks = [
        (spec, point, value, trial, base, ocfg)
        for point, value in enumerate(spec.values)
        for trial in range(spec.trials)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_trial_task, tasks))
    else:
        outcomes = [_trial_task(t) for t in tasks]

    rows = []
    for point, value in enumerate(spec.values):
        trials = [errors for p, errors in outcomes if p == point]
        for kind in spec.estimators:
            err_r = np.array([e[kind][0] for e in trials])
            err_t = np.array([e[kind][1] for e in trials])
            failed = int(np.isnan(err_r).sum())
            ok_r, ok_t = err_r[~np.isnan(err_r)], err_t[~np.isnan(err_t)]
            rows.append({
                spec.parameter: value,
                "estimator": kind.value,
                "median_err_r": float(np.median(ok_r)) if len(ok_r) else float("nan"),
                "mean_err_r": float(np.mean(ok_r)) if len(ok_r) else float("nan"),
                "median_err_t": float(np.median(ok_t)) if len(ok_t) else float("nan"),
                "mean_err_t": float(np.mean(ok_t)) if len(ok_t) else float("nan"),
                "failed": failed,
            })
        logger.info("sweep=%s %s=%s trials=%d", spec.name, spec.parameter, value, len(trials))
    return rows
