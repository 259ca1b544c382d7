"""Shared fixtures for the pose pipeline tests."""

import numpy as np
import pytest

from config import SynthConfig
from geometry import CameraIntrinsics, Pose, angle_between, line_through, project_points, rodrigues
from matching import ObjectModel
from synthetic import generate_scene


def cube(side: float = 1.0, with_faces: bool = True) -> ObjectModel:
    h = side / 2.0
    vertices = [
        (-h, -h, -h), (h, -h, -h), (h, h, -h), (-h, h, -h),
        (-h, -h, h), (h, -h, h), (h, h, h), (-h, h, h),
    ]
    lines = [
        (0, 1), (1, 2), (2, 3), (3, 0),
        (4, 5), (5, 6), (6, 7), (7, 4),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ]
    faces = [
        [0, 1, 2, 3], [4, 5, 6, 7], [0, 1, 5, 4],
        [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7],
    ] if with_faces else []
    return ObjectModel(vertices=vertices, lines=lines, faces=faces)


def diagonal_view(depth: float = 5.0) -> Pose:
    """Cube vertex (+,+,+) pointing straight at the camera, center on the optical axis."""
    a = np.ones(3) / np.sqrt(3.0)
    b = np.array([0.0, 0.0, -1.0])
    axis = np.cross(a, b)
    axis /= np.linalg.norm(axis)
    return Pose(rotation=rodrigues(axis * angle_between(a, b)), translation=[0.0, 0.0, depth])


def observed_lines(model: ObjectModel, pose: Pose, K: CameraIntrinsics):
    """Exact image lines of every model line under a pose."""
    p1, p2 = model.endpoints()
    a = project_points(K, pose, p1)
    b = project_points(K, pose, p2)
    return [line_through(a[k], b[k]) for k in range(len(a))]


@pytest.fixture
def K() -> CameraIntrinsics:
    return CameraIntrinsics()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def cube_model() -> ObjectModel:
    return cube()


@pytest.fixture
def cube_pose() -> Pose:
    return diagonal_view()


@pytest.fixture
def scene():
    """25-line random scene with its ground-truth pose."""
    return generate_scene(SynthConfig(seed=3))
