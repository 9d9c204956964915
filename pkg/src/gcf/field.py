"""Geometric correspondence fields, the geometric attention mask, and the
pluggable correspondence predictor (shipped with an exact/noisy oracle).

A correspondence field stores, per covered pixel of a render under the
current pose, the 2D displacement that moves the underlying surface point
to where it projects under the true pose. The oracle predictor computes
this field analytically; a learned model can be dropped in through the
same interface.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .errors import BufferMismatch, DimensionMismatch, PredictorFailure
from .geometry import NEAR_PLANE, project_points
from .raster import normalized_depth

_DEG15 = math.radians(15.0)


@dataclass(frozen=True)
class CorrespondenceField:
    """Per-pixel 2D displacements (pixels); defined where ``valid`` holds."""

    du: np.ndarray
    dv: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if not (self.du.shape == self.dv.shape == self.valid.shape):
            raise DimensionMismatch("du, dv, valid must share one shape")
        if self.valid.dtype != bool:
            raise ValueError("valid must be boolean")

    @property
    def shape(self):
        return self.du.shape


@dataclass(frozen=True)
class AttentionMask:
    """Binary per-pixel weights; zero on every background pixel."""

    weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        object.__setattr__(self, "weight", w)


@dataclass(frozen=True)
class AttentionConfig:
    """Local-window discontinuity thresholds.

    A foreground pixel activates when any pixel in the (window x window)
    neighborhood differs by more than one of the thresholds in normalized
    depth, normal angle (radians), or object-coordinate distance; a
    background neighbor counts as exceeding all three (silhouettes
    activate). The window is clamped at image borders.
    """

    window: int = 5
    depth_threshold: float = 0.1
    normal_threshold: float = _DEG15
    objcoord_threshold: float = 0.1

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be an odd positive integer")
        if min(self.depth_threshold, self.normal_threshold, self.objcoord_threshold) <= 0:
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class OracleNoiseConfig:
    """Corruption model for the oracle predictor: Gaussian pixel noise on
    the displacements plus Bernoulli dropout of valid pixels."""

    sigma_px: float = 0.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_px < 0:
            raise ValueError("sigma_px must be >= 0")
        if not (0 <= self.dropout < 1):
            raise ValueError("dropout must lie in [0, 1)")


def render_gt_gcf(mesh, p_curr, p_gt, cam, buffers):
    """Render the ground-truth correspondence field for ``buffers``.

    Per-vertex displacements (projection under ``p_gt`` minus projection
    under ``p_curr``) are interpolated across each visible triangle with
    the buffers' perspective-correct barycentric weights. Pixels whose
    triangle has a vertex behind the near plane under ``p_gt`` are
    invalidated rather than extrapolated.

    Raises:
        BufferMismatch: buffers disagree with the camera dimensions or the
            mesh triangle count.
    """
    h, w = buffers.shape
    if (h, w) != (cam.height, cam.width):
        raise BufferMismatch("buffers do not match camera dimensions")
    if buffers.mask.any() and buffers.index_map.max() >= mesh.num_triangles:
        raise BufferMismatch("buffers reference triangles outside the mesh")

    uv_curr, z_curr = project_points(mesh.vertices, p_curr, cam)
    uv_gt, z_gt = project_points(mesh.vertices, p_gt, cam)
    disp = uv_gt - uv_curr
    vert_ok = (z_curr >= NEAR_PLANE) & (z_gt >= NEAR_PLANE)

    du = np.zeros((h, w))
    dv = np.zeros((h, w))
    valid = np.zeros((h, w), dtype=bool)
    sel = buffers.mask
    if sel.any():
        tri = buffers.index_map[sel]
        verts = mesh.triangles[tri]  # (k, 3)
        lam = buffers.bary[sel]  # (k, 3)
        d = disp[verts]  # (k, 3, 2)
        vals = np.einsum("kv,kvc->kc", lam, d)
        ok = np.all(vert_ok[verts], axis=1)
        du[sel] = np.where(ok, vals[:, 0], 0.0)
        dv[sel] = np.where(ok, vals[:, 1], 0.0)
        valid[sel] = ok
    return CorrespondenceField(du, dv, valid)


def attention_mask(buffers, cfg=AttentionConfig()):
    """Geometric attention: foreground pixels near depth steps, normal
    creases, object-coordinate jumps, or silhouettes.

    Implemented with shifted-array comparisons over the half window (each
    unordered pixel pair is visited once and can activate both ends).
    """
    h, w = buffers.shape
    active = np.zeros((h, w), dtype=bool)
    fg = buffers.mask
    if not fg.any():
        return AttentionMask(active.astype(np.float64))

    nd = normalized_depth(buffers)
    nr = buffers.normal
    oc = buffers.objcoord
    cos_thresh = math.cos(cfg.normal_threshold)
    oc_sq = cfg.objcoord_threshold * cfg.objcoord_threshold
    r = cfg.window // 2

    # Work on the mask bounding box padded by the window radius.
    ys, xs = np.nonzero(fg)
    y0 = max(int(ys.min()) - r, 0)
    y1 = min(int(ys.max()) + r + 1, h)
    x0 = max(int(xs.min()) - r, 0)
    x1 = min(int(xs.max()) + r + 1, w)
    fg_c = fg[y0:y1, x0:x1]
    nd_c = nd[y0:y1, x0:x1]
    nr_c = nr[y0:y1, x0:x1]
    oc_c = oc[y0:y1, x0:x1]
    act_c = np.zeros_like(fg_c)
    ch, cw = fg_c.shape

    for dy in range(0, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx <= 0:
                continue
            ay0, ay1 = 0, ch - dy
            by0, by1 = dy, ch
            if dx >= 0:
                ax0, ax1 = 0, cw - dx
                bx0, bx1 = dx, cw
            else:
                ax0, ax1 = -dx, cw
                bx0, bx1 = 0, cw + dx
            if ay1 <= ay0 or ax1 <= ax0:
                continue
            fa = fg_c[ay0:ay1, ax0:ax1]
            fb = fg_c[by0:by1, bx0:bx1]
            both = fa & fb
            da = nd_c[ay0:ay1, ax0:ax1]
            db = nd_c[by0:by1, bx0:bx1]
            na = nr_c[ay0:ay1, ax0:ax1]
            nb = nr_c[by0:by1, bx0:bx1]
            oa = oc_c[ay0:ay1, ax0:ax1]
            ob = oc_c[by0:by1, bx0:bx1]
            trig = np.abs(da - db) > cfg.depth_threshold
            dot = na[..., 0] * nb[..., 0] + na[..., 1] * nb[..., 1] + na[..., 2] * nb[..., 2]
            trig |= dot < cos_thresh
            ddx = oa[..., 0] - ob[..., 0]
            ddy = oa[..., 1] - ob[..., 1]
            ddz = oa[..., 2] - ob[..., 2]
            trig |= ddx * ddx + ddy * ddy + ddz * ddz > oc_sq
            trig &= both
            act_c[ay0:ay1, ax0:ax1] |= trig | (fa & ~fb)
            act_c[by0:by1, bx0:bx1] |= trig | (fb & ~fa)

    active[y0:y1, x0:x1] = act_c
    active &= fg
    return AttentionMask(active.astype(np.float64))


class Predictor(abc.ABC):
    """Produces a correspondence field for a render of the current pose.

    ``observation`` is an opaque handle standing in for whatever evidence a
    concrete implementation compares the render against (a real image for
    a learned model, nothing for the oracle).
    """

    @abc.abstractmethod
    def predict(self, observation, buffers) -> CorrespondenceField:
        raise NotImplementedError


def predict(predictor, observation, buffers):
    """Run a predictor and enforce the field/buffer alignment contract.

    Raises:
        PredictorFailure: the predictor raised, produced a misaligned
            field, or claimed validity outside the render mask.
    """
    try:
        field = predictor.predict(observation, buffers)
    except PredictorFailure:
        raise
    except Exception as exc:
        raise PredictorFailure(f"predictor raised {exc!r}") from exc
    if field.shape != buffers.shape:
        raise PredictorFailure(
            f"field shape {field.shape} does not match buffers {buffers.shape}"
        )
    if np.any(field.valid & ~buffers.mask):
        raise PredictorFailure("field validity exceeds the render mask")
    if not np.all(np.isfinite(field.du[field.valid])) or not np.all(
        np.isfinite(field.dv[field.valid])
    ):
        raise PredictorFailure("field holds non-finite displacements")
    return field


class OraclePredictor(Predictor):
    """Exact ground-truth correspondence field, optionally corrupted.

    Stands in for a trained network: it knows the mesh, the camera, and
    the true pose, and reads the current pose off the buffers it is handed.
    Noise draws come from an owned seeded generator (PCG64); with zero
    noise and zero dropout the output is bit-equal to
    :func:`render_gt_gcf`. Each call draws, in order, one normal per valid
    pixel for du, one for dv (if ``sigma_px > 0``), then one uniform per
    valid pixel (if ``dropout > 0``).
    """

    def __init__(self, mesh, gt_pose, cam, noise=OracleNoiseConfig()):
        self.mesh = mesh
        self.gt_pose = gt_pose
        self.cam = cam
        self.noise = noise
        self._rng = np.random.default_rng(noise.seed)

    def predict(self, observation, buffers):
        field = render_gt_gcf(self.mesh, buffers.pose, self.gt_pose, buffers.cam, buffers)
        if self.noise.sigma_px == 0 and self.noise.dropout == 0:
            return field
        du = field.du.copy()
        dv = field.dv.copy()
        valid = field.valid.copy()
        n = int(valid.sum())
        if n and self.noise.sigma_px > 0:
            du[valid] += self.noise.sigma_px * self._rng.standard_normal(n)
            dv[valid] += self.noise.sigma_px * self._rng.standard_normal(n)
        if n and self.noise.dropout > 0:
            keep = self._rng.random(n) >= self.noise.dropout
            idx = np.nonzero(valid)
            valid[idx[0][~keep], idx[1][~keep]] = False
            du[~valid] = 0.0
            dv[~valid] = 0.0
        return CorrespondenceField(du, dv, valid)
