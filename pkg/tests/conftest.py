import math

import numpy as np
import pytest

from gcf.geometry import (CameraIntrinsics, Pose, PoseDelta, TriangleMesh,
                          apply_delta)
from gcf.primitives import cube_mesh, table_mesh


@pytest.fixture(scope="session")
def cam():
    """Default 256x256 camera used throughout the suite."""
    return CameraIntrinsics(300.0, (128.0, 128.0), 256, 256)


@pytest.fixture(scope="session")
def small_cam():
    """Small camera for tests backed by slow brute-force oracles."""
    return CameraIntrinsics(80.0, (32.0, 32.0), 64, 64)


@pytest.fixture(scope="session")
def cube():
    return cube_mesh()


@pytest.fixture(scope="session")
def table():
    return table_mesh()


@pytest.fixture(scope="session")
def flat_cube():
    """Cube squashed to zero z-extent: all 8 vertices at equal camera depth
    when rendered fronto-parallel."""
    base = cube_mesh()
    verts = base.vertices * np.array([1.0, 1.0, 0.0])
    return TriangleMesh.from_arrays(verts, base.triangles)


@pytest.fixture
def cube_obj(tmp_path):
    path = tmp_path / "cube.obj"
    content = ["v -0.5 -0.5 -0.5", "v 0.5 -0.5 -0.5", "v 0.5 0.5 -0.5", "v -0.5 0.5 -0.5",
               "v -0.5 -0.5 0.5", "v 0.5 -0.5 0.5", "v 0.5 0.5 0.5", "v -0.5 0.5 0.5",
               "f 1 4 3 2", "f 5 6 7 8", "f 1 2 6 5",
               "f 3 4 8 7", "f 1 5 8 4", "f 2 3 7 6"]
    path.write_text("\n".join(content) + "\n")
    return path


def fronto_pose(z=2.0):
    return Pose(np.eye(3), np.array([0.0, 0.0, z]))


def single_triangle_mesh(a, b, c):
    return TriangleMesh.from_arrays(np.array([a, b, c], dtype=float),
                                    np.array([[0, 1, 2]]))


def random_soup(seed, n_tri, z_range=(1.6, 3.0), spread=0.9, jitter=0.12):
    """Random triangle soup in front of the camera: ``n_tri`` independent
    triangles around random centers in a frustum-shaped box."""
    rng = np.random.default_rng(seed)
    centers = np.stack([
        rng.uniform(-spread, spread, n_tri),
        rng.uniform(-spread, spread, n_tri),
        rng.uniform(z_range[0], z_range[1], n_tri),
    ], axis=1)
    verts = centers[:, None, :] + rng.uniform(-jitter, jitter, (n_tri, 3, 3))
    tris = np.arange(3 * n_tri).reshape(n_tri, 3)
    return TriangleMesh.from_arrays(verts.reshape(-1, 3), tris)


def random_delta(rng, rot=0.05, trans=0.05):
    return PoseDelta(rng.uniform(-rot, rot, 3), rng.uniform(-trans, trans, 3))


def soup_pose_pair(seed, rot=0.03, trans=0.03):
    """(p_curr, p_gt) for triangle-soup scenes: identity pose and a small
    random increment of it."""
    rng = np.random.default_rng(seed)
    p_curr = Pose(np.eye(3), np.zeros(3))
    p_gt = apply_delta(p_curr, random_delta(rng, rot, trans))
    return p_curr, p_gt


def quaternion_angle(r_a, r_b):
    """Rotation angle between two matrices via the relative quaternion,
    independent of the trace-based implementation."""
    m = r_a.T @ r_b
    t = np.trace(m)
    qw2 = max((t + 1.0) / 4.0, 0.0)
    w = math.sqrt(qw2)
    w = min(w, 1.0)
    return 2.0 * math.acos(w)
