"""Meshes, rigid poses, pinhole cameras, projection and its analytic Jacobian.

Conventions used throughout the toolkit:

* Camera frame: x right, y down, z forward (optical axis into the scene).
* A pose maps model points into the camera frame: ``p_cam = R @ v + t``.
* Pose increments are 6-vectors ``(omega, dt)`` applied on the left:
  ``R <- exp(hat(omega)) @ R``, ``t <- t + dt``. All pose gradients and
  Jacobians are taken with respect to this increment at zero.
* Image coordinates are pixels, origin at the top-left corner; the center
  of pixel ``(x, y)`` is at ``(x + 0.5, y + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateMesh, ParseError

# Points closer than this to the camera plane are unprojectable.
NEAR_PLANE = 1e-4

_ROTATION_TOL = 1e-9


def _as_array(x, shape, name):
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _freeze(a):
    a.flags.writeable = False
    return a


def hat(w):
    """Skew-symmetric cross-product matrix of a 3-vector."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def rotation_from_axis_angle(omega):
    """Rodrigues' formula, stable for small angles via series expansion."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = float(np.linalg.norm(omega))
    K = hat(omega)
    if theta < 1e-8:
        # sin(t)/t and (1-cos(t))/t^2 to second order
        a = 1.0 - theta * theta / 6.0
        b = 0.5 - theta * theta / 24.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def orthonormalize(matrix):
    """Nearest rotation matrix (Frobenius sense) via SVD, det forced to +1."""
    u, _, vt = np.linalg.svd(matrix)
    d = np.linalg.det(u @ vt)
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Pose:
    """Rigid transform from model frame to camera frame: ``p = R @ v + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_array(self.rotation, (3, 3), "rotation")
        t = _as_array(self.translation, (3,), "translation")
        if abs(np.linalg.det(r) - 1.0) > _ROTATION_TOL:
            raise ValueError(f"rotation determinant {np.linalg.det(r)} != 1")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity():
        return Pose(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class PoseDelta:
    """Tangent-space pose increment: axis-angle rotation plus translation."""

    omega: np.ndarray
    dt: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _freeze(_as_array(self.omega, (3,), "omega")))
        object.__setattr__(self, "dt", _freeze(_as_array(self.dt, (3,), "dt")))

    @staticmethod
    def zero():
        return PoseDelta(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v):
        v = _as_array(v, (6,), "delta vector")
        return PoseDelta(v[:3], v[3:])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera with square pixels and a principal point in pixels."""

    focal: float
    principal_point: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        if not (self.focal > 0):
            raise ValueError(f"focal must be positive, got {self.focal}")
        pp = _as_array(self.principal_point, (2,), "principal_point")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= pp[0] <= self.width and 0 <= pp[1] <= self.height):
            raise ValueError(f"principal point {pp} outside image bounds")
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "principal_point", _freeze(pp))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def diagonal(self):
        """Image diagonal in pixels."""
        return math.hypot(self.width, self.height)


@dataclass(frozen=True)
class PerturbationConfig:
    """Gaussian pose perturbation: absolute rotation noise, relative translation noise.

    ``sigma_rot`` is the per-axis standard deviation (radians) of an
    axis-angle vector; ``sigma_trans`` is the per-component standard
    deviation of multiplicative translation noise.
    """

    sigma_rot: float = math.radians(5.0)
    sigma_trans: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.sigma_rot < 0 or self.sigma_trans < 0:
            raise ValueError("perturbation sigmas must be non-negative")


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle geometry with normalized per-vertex object coordinates."""

    vertices: np.ndarray
    triangles: np.ndarray
    object_coords: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        oc = np.asarray(self.object_coords, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise DegenerateMesh("mesh has no vertices")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise DegenerateMesh("mesh has no triangles")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices contain non-finite values")
        if t.min() < 0 or t.max() >= len(v):
            raise ValueError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("triangle with repeated vertex index")
        if oc.shape != v.shape:
            raise ValueError("object_coords must match vertices in shape")
        if oc.min() < 0.0 or oc.max() > 1.0:
            raise ValueError("object_coords must lie in [0, 1]^3")
        object.__setattr__(self, "vertices", _freeze(v))
        object.__setattr__(self, "triangles", _freeze(t))
        object.__setattr__(self, "object_coords", _freeze(oc))

    @staticmethod
    def from_arrays(vertices, triangles):
        """Build a mesh, deriving object coordinates by min-max normalization.

        Axes with zero extent normalize to 0.
        """
        v = np.asarray(vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise DegenerateMesh("mesh has no vertices")
        lo = v.min(axis=0)
        extent = v.max(axis=0) - lo
        safe = np.where(extent > 1e-12, extent, 1.0)
        oc = np.where(extent > 1e-12, (v - lo) / safe, 0.0)
        return TriangleMesh(v, np.asarray(triangles, dtype=np.int64), oc)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)


def load_obj(path):
    """Load a Wavefront OBJ file.

    Supported subset: ``v x y z`` and ``f i j k ...`` lines with 1-based
    indices; polygon faces are fan-triangulated; ``vn``/``vt``/material
    statements are ignored, as are texture/normal references in face
    entries (``f 1/2/3`` reads vertex 1). Object coordinates are derived
    by min-max normalization of the vertex positions to the unit cube.

    Raises:
        ParseError: malformed line or face index out of range.
        DegenerateMesh: no vertices or no triangles after triangulation.
    """
    vertices = []
    triangles = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad vertex coordinate: {exc}") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for entry in parts[1:]:
                    head = entry.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise ParseError(f"{path}:{lineno}: bad face index {entry!r}") from exc
                    if i < 0:
                        i = len(vertices) + 1 + i  # OBJ negative indices count from the end
                    if not (1 <= i <= len(vertices)):
                        raise ParseError(f"{path}:{lineno}: face index {i} out of range")
                    idx.append(i - 1)
                for k in range(1, len(idx) - 1):
                    tri = (idx[0], idx[k], idx[k + 1])
                    if tri[0] == tri[1] or tri[1] == tri[2] or tri[0] == tri[2]:
                        continue  # degenerate fan slice, e.g. repeated index in the face
                    triangles.append(tri)
            # vn, vt, mtllib, usemtl, o, g, s: ignored
    if not vertices:
        raise DegenerateMesh(f"{path}: no vertices")
    if not triangles:
        raise DegenerateMesh(f"{path}: no triangles")
    return TriangleMesh.from_arrays(np.array(vertices), np.array(triangles, dtype=np.int64))


def save_obj(mesh, path):
    """Write a mesh as a minimal OBJ file (inverse of :func:`load_obj`)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def transform_points(vertices, pose):
    """Map model-frame points into the camera frame: ``V @ R^T + t``."""
    v = np.atleast_2d(np.asarray(vertices, dtype=np.float64))
    return v @ pose.rotation.T + pose.translation


def project_points(vertices, pose, cam):
    """Vectorized pinhole projection without the near-plane check.

    Returns ``(uv, z)`` where ``uv`` is (n, 2) pixel coordinates and ``z``
    is (n,) camera-frame depth. Entries with ``z < NEAR_PLANE`` hold
    meaningless coordinates; callers must filter on the returned depth.
    """
    p = transform_points(vertices, pose)
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_z = np.where(np.abs(z) > 1e-300, z, 1.0)
        uv = cam.focal * p[:, :2] / safe_z[:, None] + cam.principal_point
    return uv, z


def project(vertex, pose, cam):
    """Project a single model-frame point to pixel coordinates.

    Raises:
        BehindCamera: the point's camera-frame depth is below the near plane.
    """
    p = pose.rotation @ np.asarray(vertex, dtype=np.float64) + pose.translation
    if p[2] < NEAR_PLANE:
        raise BehindCamera(f"depth {p[2]} below near plane {NEAR_PLANE}")
    return cam.focal * p[:2] / p[2] + cam.principal_point


def projection_jacobians(vertices, pose, cam):
    """Jacobians of the projection w.r.t. the 6-vector increment, vectorized.

    Returns ``(J, z)``: J is (n, 2, 6) with columns ordered (omega, dt) and
    evaluated at zero increment; z is the (n,) camera depth. Rows with
    ``z < NEAR_PLANE`` are filled with zeros and must be filtered by the
    caller via the returned depth.
    """
    v = np.atleast_2d(np.asarray(vertices, dtype=np.float64))
    p = transform_points(v, pose)
    q = v @ pose.rotation.T  # rotated vertex before translation
    z = p[:, 2]
    ok = z >= NEAR_PLANE
    zs = np.where(ok, z, 1.0)
    n = len(v)
    # d(uv)/d(p_cam)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = cam.focal / zs
    dproj[:, 0, 2] = -cam.focal * p[:, 0] / (zs * zs)
    dproj[:, 1, 1] = cam.focal / zs
    dproj[:, 1, 2] = -cam.focal * p[:, 1] / (zs * zs)
    # d(p_cam)/d(omega) = -hat(q); d(p_cam)/d(dt) = I
    dq = np.zeros((n, 3, 3))
    dq[:, 0, 1] = q[:, 2]
    dq[:, 0, 2] = -q[:, 1]
    dq[:, 1, 0] = -q[:, 2]
    dq[:, 1, 2] = q[:, 0]
    dq[:, 2, 0] = q[:, 1]
    dq[:, 2, 1] = -q[:, 0]
    J = np.zeros((n, 2, 6))
    J[:, :, :3] = dproj @ dq
    J[:, :, 3:] = dproj
    J[~ok] = 0.0
    return J, z


def projection_jacobian(vertex, pose, cam):
    """2x6 analytic Jacobian of :func:`project` w.r.t. the pose increment.

    Columns are ordered (omega_x, omega_y, omega_z, dt_x, dt_y, dt_z), the
    increment being applied on the left as in :func:`apply_delta`.

    Raises:
        BehindCamera: the point's camera-frame depth is below the near plane.
    """
    J, z = projection_jacobians(np.asarray(vertex, dtype=np.float64)[None, :], pose, cam)
    if z[0] < NEAR_PLANE:
        raise BehindCamera(f"depth {z[0]} below near plane {NEAR_PLANE}")
    return J[0]


def apply_delta(pose, delta):
    """Apply a tangent increment: ``R <- exp(hat(omega)) @ R``, ``t <- t + dt``.

    The rotation is re-orthonormalized so repeated application cannot
    drift off the rotation manifold. A zero delta returns the input pose
    object unchanged.
    """
    if not delta.omega.any() and not delta.dt.any():
        return pose
    r = rotation_from_axis_angle(delta.omega) @ pose.rotation
    return Pose(orthonormalize(r), pose.translation + delta.dt)


def perturb_pose(pose, cfg):
    """Sample a Gaussian-perturbed pose, deterministically for a given seed.

    The rotation is left-multiplied by ``exp(hat(w))`` with
    ``w ~ N(0, sigma_rot^2 I_3)``; each translation component is scaled by
    ``1 + N(0, sigma_trans^2)``. The generator is NumPy's seeded PCG64
    (``default_rng(cfg.seed)``) and draws exactly 3 rotation normals
    followed by 3 translation normals, so results are portable across
    platforms and runs.
    """
    rng = np.random.default_rng(cfg.seed)
    w = cfg.sigma_rot * rng.standard_normal(3)
    f = cfg.sigma_trans * rng.standard_normal(3)
    if not w.any() and not f.any():
        return pose
    r = orthonormalize(rotation_from_axis_angle(w) @ pose.rotation)
    t = pose.translation * (1.0 + f)
    return Pose(r, t)
