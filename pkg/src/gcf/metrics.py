"""Evaluation distances for pose estimates: rotation geodesic, relative
translation, normalized 3D point-transform distance, and normalized
reprojection distance, plus medians and accuracy curves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NoValidVertices, NotARotation, ZeroGtTranslation
from .geometry import NEAR_PLANE, project_points, transform_points

logger = logging.getLogger(__name__)

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class MetricContext:
    """Normalization constants of one evaluation sample.

    d_bbox: diagonal of the ground-truth 2D bounding box (pixels).
    d_img: image diagonal (pixels).
    t_gt_norm: L2 norm of the ground-truth translation (model units).
    """

    d_bbox: float
    d_img: float
    t_gt_norm: float

    def __post_init__(self):
        if min(self.d_bbox, self.d_img, self.t_gt_norm) <= 0:
            raise ValueError("metric context entries must be strictly positive")


@dataclass(frozen=True)
class SampleErrors:
    """The four error distances of one sample. ``e_r`` is in radians."""

    e_r: float
    e_t: float
    e_rt: float
    e_p: float

    def as_dict(self):
        return {"e_r": self.e_r, "e_t": self.e_t, "e_rt": self.e_rt, "e_p": self.e_p}


def _check_rotation(r, name):
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise NotARotation(f"{name} must be 3x3")
    if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL or np.linalg.det(r) < 0:
        raise NotARotation(f"{name} is not orthonormal with determinant +1")
    return r


def rotation_error(r_gt, r_pred):
    """Minimal geodesic angle (radians) between two rotation matrices,
    computed via the trace with clamping so the 0 and pi boundaries are
    numerically safe."""
    r_gt = _check_rotation(r_gt, "r_gt")
    r_pred = _check_rotation(r_pred, "r_pred")
    c = (np.trace(r_gt.T @ r_pred) - 1.0) * 0.5
    return float(math.acos(min(1.0, max(-1.0, c))))


def translation_error(t_gt, t_pred):
    """Relative translation error ``||t_gt - t_pred|| / ||t_gt||``."""
    t_gt = np.asarray(t_gt, dtype=np.float64)
    t_pred = np.asarray(t_pred, dtype=np.float64)
    n = np.linalg.norm(t_gt)
    if n == 0:
        raise ZeroGtTranslation("ground-truth translation has zero norm")
    return float(np.linalg.norm(t_gt - t_pred) / n)


def metric_context(mesh, p_gt, cam):
    """Build the normalization context from the projected ground-truth mesh:
    the 2D box is the axis-aligned bounds of all vertex projections."""
    uv, z = project_points(mesh.vertices, p_gt, cam)
    ok = z >= NEAR_PLANE
    if not ok.any():
        raise NoValidVertices("no vertex projects under the ground-truth pose")
    lo = uv[ok].min(axis=0)
    hi = uv[ok].max(axis=0)
    d_bbox = float(np.hypot(hi[0] - lo[0], hi[1] - lo[1]))
    t_norm = float(np.linalg.norm(p_gt.translation))
    if t_norm == 0:
        raise ZeroGtTranslation("ground-truth translation has zero norm")
    return MetricContext(d_bbox, cam.diagonal, t_norm)


def pose_error(mesh, p_gt, p_pred, ctx):
    """Average camera-frame distance of transformed vertices, scaled by the
    object's relative image size and the ground-truth translation norm."""
    a = transform_points(mesh.vertices, p_gt)
    b = transform_points(mesh.vertices, p_pred)
    if ctx.t_gt_norm == 0:
        raise ZeroGtTranslation("ground-truth translation has zero norm")
    d = np.linalg.norm(a - b, axis=1)
    return float((ctx.d_bbox / ctx.d_img) * d.mean() / ctx.t_gt_norm)


def projection_error(mesh, p_gt, p_pred, cam, ctx):
    """Average reprojection distance in pixels over the vertices visible
    under both poses, normalized by the ground-truth box diagonal."""
    uv_a, z_a = project_points(mesh.vertices, p_gt, cam)
    uv_b, z_b = project_points(mesh.vertices, p_pred, cam)
    ok = (z_a >= NEAR_PLANE) & (z_b >= NEAR_PLANE)
    if not ok.any():
        raise NoValidVertices("no vertex projects under both poses")
    excluded = int(len(ok) - ok.sum())
    if excluded:
        logger.warning("projection_error: excluded %d vertices behind the camera", excluded)
    d = np.linalg.norm(uv_a[ok] - uv_b[ok], axis=1)
    return float(d.mean() / ctx.d_bbox)


def sample_errors(mesh, p_gt, p_pred, cam, ctx=None):
    """All four error distances of one (ground truth, prediction) pair."""
    if ctx is None:
        ctx = metric_context(mesh, p_gt, cam)
    return SampleErrors(
        e_r=rotation_error(p_gt.rotation, p_pred.rotation),
        e_t=translation_error(p_gt.translation, p_pred.translation),
        e_rt=pose_error(mesh, p_gt, p_pred, ctx),
        e_p=projection_error(mesh, p_gt, p_pred, cam, ctx),
    )


def lower_median(values):
    """Median using the lower of the two middle elements for even counts,
    so aggregates are reproducible without interpolation."""
    v = sorted(values)
    if not v:
        raise ValueError("median of empty sequence")
    return v[(len(v) - 1) // 2]


@dataclass(frozen=True)
class AggregateReport:
    """Medians of each error plus the pose-accuracy curve
    ``acc_rt[tau] = fraction of samples with e_rt < tau``."""

    count: int
    med_e_r: float
    med_e_t: float
    med_e_rt: float
    med_e_p: float
    acc_rt: dict


def aggregate(samples, thresholds=()):
    """Aggregate per-sample errors into medians and accuracy-vs-threshold."""
    samples = list(samples)
    if not samples:
        raise ValueError("aggregate needs a non-empty sample list")
    e_rt = [s.e_rt for s in samples]
    acc = {float(t): sum(e < t for e in e_rt) / len(e_rt) for t in thresholds}
    return AggregateReport(
        count=len(samples),
        med_e_r=lower_median(s.e_r for s in samples),
        med_e_t=lower_median(s.e_t for s in samples),
        med_e_rt=lower_median(e_rt),
        med_e_p=lower_median(s.e_p for s in samples),
        acc_rt=acc,
    )
