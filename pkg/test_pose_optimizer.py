"""Tests for the robust pose cost, refinement and the window tracker."""

import math

import numpy as np
import pytest

from config import MatchConfig, OptConfig, RunConfig, SynthConfig
from errors import InitializationFailed, NoAssignments, SingularNormalMatrix
from event_windowing import EventCluster, EventStream, cluster_events
from geometry import Pose
from matching import Twist
from parameter_registry import ESTIMATOR_REGISTRY, EstimatorKind
from pose_optimizer import (
    PoseTracker,
    TrackRecord,
    optimize_pose,
    pose_cost_and_gradient,
    refine_pose,
    track,
)
from synthetic import (
    OUTLIER,
    TrajectorySpec,
    corrupt_correspondences,
    generate_events,
    generate_scene,
    perturb_pose,
)
from trajectory_metrics import Trajectory, ate_rmse, err_rotation, err_translation


def single_window(synth: SynthConfig):
    """Scene, ground-truth pose and labeled events of one 10 ms static window."""
    model, truth = generate_scene(synth)
    traj = TrajectorySpec(pose0=truth, twist=Twist.zero(), duration=0.01, window_rate=100.0)
    labeled = generate_events(model, traj, synth.image, synth)
    return model, truth, labeled


def inliers(labeled):
    keep = labeled.labels != OUTLIER
    return labeled.events.xy[keep], labeled.labels[keep]


# ============================================================================
# COST AND GRADIENT
# ============================================================================

def test_cost_is_zero_on_exact_data(K):
    model, truth, labeled = single_window(SynthConfig(noise_sigma=0.0, outlier_rate=0.0, seed=1))
    points, labels = inliers(labeled)
    ev = pose_cost_and_gradient(points, labels, np.ones(len(points)), model, K, truth)
    assert ev.cost < 1e-10
    assert np.abs(ev.residuals).max() < 1e-6


def test_gradient_matches_finite_differences(K):
    model, truth, labeled = single_window(SynthConfig(noise_sigma=1.0, outlier_rate=0.0, seed=2))
    points, labels = inliers(labeled)
    pose = perturb_pose(truth, math.radians(1.0), 0.01, seed=3)
    weights = np.random.default_rng(4).uniform(0.2, 1.0, size=len(points))

    ev = pose_cost_and_gradient(points, labels, weights, model, K, pose)
    h = 1e-6
    numeric = np.zeros(6)
    for i in range(6):
        step = np.zeros(6)
        step[i] = h
        up = pose_cost_and_gradient(points, labels, weights, model, K, pose.retract(step)).cost
        down = pose_cost_and_gradient(points, labels, weights, model, K, pose.retract(-step)).cost
        numeric[i] = (up - down) / (2 * h)
    np.testing.assert_allclose(ev.gradient, numeric, rtol=1e-4, atol=1e-4 * np.abs(numeric).max())


def test_cost_matches_signed_residuals(K):
    model, truth, labeled = single_window(SynthConfig(noise_sigma=2.0, outlier_rate=0.0, seed=5))
    points, labels = inliers(labeled)
    weights = np.full(len(points), 0.5)
    ev = pose_cost_and_gradient(points, labels, weights, model, K, truth)
    assert ev.cost == pytest.approx(np.sum(0.5 * ev.residuals ** 2))
    assert ev.jacobian.shape == (len(points), 6)


# ============================================================================
# REFINEMENT
# ============================================================================

@pytest.mark.parametrize("kind", list(EstimatorKind))
def test_exact_recovery_from_perturbed_start(K, kind):
    model, truth, labeled = single_window(SynthConfig(noise_sigma=0.0, outlier_rate=0.0, seed=6))
    points, labels = inliers(labeled)
    start = perturb_pose(truth, math.radians(5.0), 0.05, seed=7)

    result = refine_pose(points, labels, model, K, start, kind, OptConfig())
    assert err_rotation(result.pose.rotation, truth.rotation) <= 1e-6
    assert err_translation(result.pose.translation, truth.translation) <= 1e-8
    assert result.converged


@pytest.mark.parametrize("kind", list(EstimatorKind))
def test_refinement_never_ends_worse_than_start(K, kind):
    synth = SynthConfig(noise_sigma=2.0, outlier_rate=0.3, seed=8)
    model, truth, labeled = single_window(synth.model_copy(update={"outlier_rate": 0.0}))
    labels = corrupt_correspondences(labeled.labels, 0.3, synth.n_lines, seed=9)
    start = perturb_pose(truth, math.radians(2.0), 0.02, seed=10)

    result = refine_pose(labeled.events.xy, labels, model, K, start, kind, OptConfig())
    start_cost = pose_cost_and_gradient(labeled.events.xy, labels, result.state.weights, model, K, start).cost
    assert result.cost <= start_cost + 1e-9
    assert result.iterations >= 1


def test_mm_beats_least_squares_on_wrong_correspondences(K):
    errors = {EstimatorKind.LS: [], EstimatorKind.MM: []}
    for seed in range(5):
        model, truth, labeled = single_window(SynthConfig(noise_sigma=2.0, outlier_rate=0.0, seed=20 + seed))
        labels = corrupt_correspondences(labeled.labels, 0.3, len(model.lines), seed=seed)
        start = perturb_pose(truth, math.radians(5.0), 0.05, seed=40 + seed)
        for kind in errors:
            result = refine_pose(labeled.events.xy, labels, model, K, start, kind, OptConfig())
            errors[kind].append(err_rotation(result.pose.rotation, truth.rotation))
    assert np.median(errors[EstimatorKind.MM]) < np.median(errors[EstimatorKind.LS])


def test_refinement_follows_the_registered_stages(K, monkeypatch):
    model, truth, labeled = single_window(SynthConfig(noise_sigma=2.0, outlier_rate=0.0, seed=13))
    labels = corrupt_correspondences(labeled.labels, 0.3, len(model.lines), seed=14)
    start = perturb_pose(truth, math.radians(2.0), 0.02, seed=15)
    least_squares = refine_pose(labeled.events.xy, labels, model, K, start, EstimatorKind.LS, OptConfig())

    monkeypatch.setitem(ESTIMATOR_REGISTRY, EstimatorKind.M, ESTIMATOR_REGISTRY[EstimatorKind.LS])
    relabeled = refine_pose(labeled.events.xy, labels, model, K, start, EstimatorKind.M, OptConfig())
    np.testing.assert_array_equal(relabeled.pose.rotation, least_squares.pose.rotation)
    np.testing.assert_array_equal(relabeled.state.weights, np.ones(len(labels)))


def test_mm_stays_within_the_iteration_budget(K):
    model, truth, labeled = single_window(SynthConfig(noise_sigma=2.0, outlier_rate=0.1, seed=16))
    start = perturb_pose(truth, math.radians(2.0), 0.02, seed=17)
    ocfg = OptConfig(max_iterations=8, s_stage_iterations=3)
    result = refine_pose(labeled.events.xy, labeled.labels.clip(min=0), model, K, start, EstimatorKind.MM, ocfg)
    assert result.iterations <= ocfg.max_iterations


def test_single_line_does_not_constrain_the_pose(K):
    model, truth, labeled = single_window(SynthConfig(noise_sigma=0.5, outlier_rate=0.0, seed=11))
    points, labels = inliers(labeled)
    one = labels == labels[0]
    start = perturb_pose(truth, math.radians(1.0), 0.01, seed=12)
    with pytest.raises(SingularNormalMatrix):
        refine_pose(points[one], labels[one], model, K, start, EstimatorKind.LS, OptConfig())


def test_no_assignments(K, cube_model, cube_pose):
    with pytest.raises(NoAssignments):
        refine_pose(np.zeros((0, 2)), np.zeros(0, dtype=int), cube_model, K, cube_pose, EstimatorKind.MM, OptConfig())


def test_optimize_pose_matches_then_refines(K):
    synth = SynthConfig(noise_sigma=1.0, outlier_rate=0.1, seed=13)
    model, truth, labeled = single_window(synth)
    cluster = EventCluster(events=labeled.events, t_center=0.005, t_start=0.0, t_end=0.01)
    start = perturb_pose(truth, math.radians(0.5), 0.005, seed=14)

    result = optimize_pose(cluster, model, K, start, EstimatorKind.MM, MatchConfig(), OptConfig())
    assert result.matches is not None
    assert len(result.matches) > 0.5 * len(labeled)
    assert err_rotation(result.pose.rotation, truth.rotation) < err_rotation(start.rotation, truth.rotation)
    assert err_translation(result.pose.translation, truth.translation) < 0.005


# ============================================================================
# TRACKING
# ============================================================================

def moving_scene(synth: SynthConfig, twist: Twist, duration: float):
    model, pose0 = generate_scene(synth)
    traj = TrajectorySpec(pose0=pose0, twist=twist, duration=duration, window_rate=100.0)
    return model, traj, generate_events(model, traj, synth.image, synth)


def test_static_scene_tracks_constant_pose(K):
    synth = SynthConfig(noise_sigma=1.0, outlier_rate=0.05, seed=15)
    model, traj, labeled = moving_scene(synth, Twist.zero(), 0.1)
    records = track(labeled.events, model, K, EstimatorKind.MM, RunConfig(), start_pose=traj.pose0)

    assert len(records) == len(cluster_events(labeled.events, RunConfig().window))
    assert not any(r.coasting for r in records)
    for r in records:
        assert err_rotation(r.pose.rotation, traj.pose0.rotation) < math.radians(0.5)
        assert err_translation(r.pose.translation, traj.pose0.translation) < 0.01


def test_hundred_window_trajectory_is_tracked_within_one_percent(K):
    synth = SynthConfig(noise_sigma=1.0, outlier_rate=0.1, seed=16)
    # |v| ~ 0.71 m/s, |w| = 0.3 rad/s
    twist = Twist(w=[0.1, 0.2, 0.2], v=[0.4, 0.3, 0.5])
    model, traj, labeled = moving_scene(synth, twist, 1.0)
    assert traj.n_windows == 100
    cfg = RunConfig()
    centers = np.array([c.t_center for c in cluster_events(labeled.events, cfg.window)])

    records = track(labeled.events, model, K, EstimatorKind.MM, cfg, start_pose=traj.pose_at(centers[0]))
    assert len(records) == len(centers)
    assert not any(r.coasting for r in records)

    estimated = Trajectory.from_poses(centers, [r.pose for r in records])
    result = ate_rmse(estimated, traj.ground_truth(centers))
    assert result.normalized_rmse <= 0.01


def test_model_out_of_view_coasts(K):
    synth = SynthConfig(noise_sigma=1.0, outlier_rate=0.0, seed=17)
    model, traj, labeled = moving_scene(synth, Twist.zero(), 0.05)
    away = Pose(rotation=traj.pose0.rotation, translation=[0.0, 0.0, -10.0])
    records = PoseTracker(model, K, EstimatorKind.M, RunConfig()).run(labeled.events, start_pose=away)
    assert records
    assert all(r.coasting for r in records)
    assert all(r.n_assigned == 0 for r in records)


def test_empty_stream_cannot_initialize(K, cube_model):
    with pytest.raises(InitializationFailed):
        track(EventStream.empty(), cube_model, K, EstimatorKind.MM, RunConfig())


def test_track_record_log_row():
    record = TrackRecord(t_center=0.015, pose=None, coasting=True, n_events=12)
    row = record.log_row()
    assert row["coasting"] == 1
    assert row["t_center"] == "0.015000000"
    assert row["cost"] == "nan"
