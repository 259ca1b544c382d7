"""Tests for the HTTP endpoints."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import observed_lines
from geometry import rodrigues
from main import app
from matching import visible_lines
from trajectory_metrics import err_rotation


client = TestClient(app)


def line_payload(lines):
    return [{"x1": l.p1[0], "y1": l.p1[1], "x2": l.p2[0], "y2": l.p2[1]} for l in lines]


def stamped(t, translation):
    return {"t": t, "rotation": np.eye(3).ravel().tolist(), "translation": list(translation)}


def test_root():
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["status"] == "operational"


def test_estimators():
    data = client.get("/estimators").json()
    assert data["count"] == 4
    assert [e["code"] for e in data["estimators"]] == ["LS", "M", "S", "MM"]
    mm = data["estimators"][3]["stages"]
    assert [s["rule"] for s in mm] == ["s", "tukey"]
    assert mm[0]["c"] == pytest.approx(1.547)
    assert mm[1] == {"rule": "tukey", "c": pytest.approx(4.685), "frozen_scale": True}
    assert data["estimators"][0]["stages"] == [{"rule": "unit", "c": None, "frozen_scale": False}]


def test_evaluate_identical_trajectories():
    poses = [stamped(0.01 * i, (np.cos(i), np.sin(i), 5.0 + 0.1 * i)) for i in range(6)]
    response = client.post("/evaluate", json={"estimated": poses, "truth": poses})
    assert response.status_code == 200
    assert response.json()["rmse"] == pytest.approx(0.0, abs=1e-9)
    assert response.json()["n_poses"] == 6


def test_evaluate_needs_three_poses():
    poses = [stamped(0.0, (0.0, 0.0, 5.0)), stamped(0.01, (0.1, 0.0, 5.0))]
    response = client.post("/evaluate", json={"estimated": poses, "truth": poses})
    assert response.status_code == 400
    assert response.json()["error"] == "TooFewPoses"


def test_init_from_exact_lines(K, scene):
    model, truth = scene
    response = client.post("/init", json={
        "lines": line_payload(observed_lines(model, truth, K)),
        "model": model.model_dump(),
    })
    assert response.status_code == 200
    data = response.json()
    assert data["achieved_count"] == len(model.lines)
    rotation = np.array(data["rotation"]).reshape(3, 3)
    assert err_rotation(rotation, truth.rotation) < np.radians(3.0)


def test_init_with_two_lines_is_unprocessable(K, cube_model, cube_pose):
    response = client.post("/init", json={
        "lines": line_payload(observed_lines(cube_model, cube_pose, K)[:2]),
        "model": cube_model.model_dump(),
    })
    assert response.status_code == 422
    assert response.json()["error"] == "TooFewCorrespondences"


def test_detect_window_out_of_range():
    events = {"t": [0.0, 0.001], "x": [10.0, 11.0], "y": [10.0, 10.0]}
    response = client.post("/detect", json={"events": events, "window_index": 5})
    assert response.status_code == 400
    assert "out of range" in response.json()["detail"]


def test_track_empty_stream(cube_model):
    response = client.post("/track", json={
        "events": {"t": [], "x": [], "y": []},
        "model": cube_model.model_dump(),
    })
    assert response.status_code == 422
    assert response.json()["error"] == "InitializationFailed"


def test_track_from_a_start_pose(K, cube_model, cube_pose):
    # Static events along the visible cube edges
    rng = np.random.default_rng(0)
    points = []
    for v in visible_lines(cube_model, cube_pose, K):
        s = rng.uniform(0.0, 1.0, size=60)
        points.append(v.line.p1 + s[:, None] * (v.line.p2 - v.line.p1))
    points = np.vstack(points)
    t = np.sort(rng.uniform(0.0, 0.02, size=len(points)))

    response = client.post("/track", json={
        "events": {"t": t.tolist(), "x": points[:, 0].tolist(), "y": points[:, 1].tolist()},
        "model": cube_model.model_dump(),
        "estimator": "m",
        "start_pose": {"rotation": cube_pose.rotation.ravel().tolist(), "translation": cube_pose.translation.tolist()},
    })
    assert response.status_code == 200
    data = response.json()
    assert data["estimator"] == "M"
    assert data["coasting_count"] == 0
    first = np.array(data["records"][0]["rotation"]).reshape(3, 3)
    assert err_rotation(first, cube_pose.rotation) < 1e-3


def test_track_unknown_estimator(cube_model):
    response = client.post("/track", json={
        "events": {"t": [0.0], "x": [1.0], "y": [1.0]},
        "model": cube_model.model_dump(),
        "estimator": "huber",
    })
    assert response.status_code == 400


def test_mismatched_event_columns():
    response = client.post("/track", json={
        "events": {"t": [0.0, 1.0], "x": [1.0], "y": [1.0, 2.0]},
        "model": {"vertices": [[0, 0, 0], [1, 0, 0]], "lines": [[0, 1]]},
    })
    assert response.status_code == 422


def test_rotation_payload_must_be_orthonormal():
    bad = stamped(0.0, (0.0, 0.0, 5.0))
    bad["rotation"] = rodrigues([0.1, 0.0, 0.0]).ravel().tolist()
    bad["rotation"][0] = 3.0
    poses = [bad, stamped(0.01, (0.0, 0.0, 5.0)), stamped(0.02, (0.0, 0.0, 5.0))]
    response = client.post("/evaluate", json={"estimated": poses, "truth": poses})
    assert response.status_code == 400


def test_unsigned_polarity_is_rejected():
    events = {"t": [0.0, 0.001], "x": [10.0, 11.0], "y": [10.0, 10.0], "polarity": [1, 0]}
    response = client.post("/detect", json={"events": events})
    assert response.status_code == 400
    assert "polarity" in response.json()["detail"]
