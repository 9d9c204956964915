"""Deterministic software rasterizer producing per-pixel geometry buffers.

Coverage is evaluated at pixel centers ``(x + 0.5, y + 0.5)`` with a
top-left fill rule for edge ties; visibility uses a strictly-less depth
test while scanning triangles in ascending index order, which realizes a
lowest-triangle-index tiebreak at exactly equal depth. A render is
therefore reproducible bit-for-bit regardless of the number of row-band
workers. There is no backface culling: both windings rasterize, and
reversing a winding only flips its face normal.

Triangles with any vertex closer than the near plane are dropped rather
than clipped. The per-pixel inner loop is a compiled (numba) kernel; row
bands release the GIL, so thread workers scale.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DimensionMismatch
from .geometry import NEAR_PLANE, CameraIntrinsics, Pose, transform_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RenderBuffers:
    """Per-pixel outputs of one rasterization pass, indexed ``[y, x]``.

    depth: camera-frame z, +inf on background.
    normal: unit face normal in the camera frame, zero on background.
    objcoord: interpolated object coordinates in [0, 1]^3, zero on background.
    mask: foreground coverage.
    index_map: visible triangle index, -1 on background.
    bary: perspective-correct barycentric weights of the visible triangle.

    The pose and camera the buffers were rendered under are kept so that
    downstream consumers (correspondence prediction, mismatch checks) do
    not need to be handed them separately.
    """

    depth: np.ndarray
    normal: np.ndarray
    objcoord: np.ndarray
    mask: np.ndarray
    index_map: np.ndarray
    bary: np.ndarray
    pose: Pose
    cam: CameraIntrinsics

    def __post_init__(self):
        h, w = self.depth.shape
        if (h, w) != (self.cam.height, self.cam.width):
            raise DimensionMismatch("buffer shape does not match camera dimensions")
        for name in ("normal", "objcoord", "bary"):
            if getattr(self, name).shape != (h, w, 3):
                raise DimensionMismatch(f"{name} must have shape {(h, w, 3)}")
        for name in ("mask", "index_map"):
            if getattr(self, name).shape != (h, w):
                raise DimensionMismatch(f"{name} must have shape {(h, w)}")

    @property
    def shape(self):
        """(height, width) in pixels."""
        return self.depth.shape


def _is_top_left(ex, ey):
    # Canonical winding has positive doubled area; its interior edge
    # functions are positive, top edges run +x, left edges run -y.
    return ((ey == 0) & (ex > 0)) | (ey < 0)


class _Setup:
    """Screen-space triangle data shared by all row bands of one render."""

    def __init__(self, mesh, pose, cam):
        cam_pts = transform_points(mesh.vertices, pose)
        z = cam_pts[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            safe_z = np.where(np.abs(z) > 1e-300, z, 1.0)
            uv = cam.focal * cam_pts[:, :2] / safe_z[:, None] + cam.principal_point

        tris = mesh.triangles
        tz = z[tris]
        keep = np.all(tz >= NEAR_PLANE, axis=1)

        a = uv[tris[:, 0]]
        b = uv[tris[:, 1]]
        c = uv[tris[:, 2]]
        area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        keep &= np.isfinite(area2) & (area2 != 0.0)

        fn = np.cross(cam_pts[tris[:, 1]] - cam_pts[tris[:, 0]],
                      cam_pts[tris[:, 2]] - cam_pts[tris[:, 0]])
        fn_len = np.linalg.norm(fn, axis=1)
        keep &= fn_len > 1e-12
        fn_safe = np.where(keep, fn_len, 1.0)[:, None]

        # Pixel x covers center x + 0.5; bbox in pixel indices, image-clipped.
        us = np.stack([a[:, 0], b[:, 0], c[:, 0]])
        vs = np.stack([a[:, 1], b[:, 1], c[:, 1]])
        with np.errstate(invalid="ignore"):
            lo_u = np.where(keep, us.min(axis=0), 0.0)
            hi_u = np.where(keep, us.max(axis=0), -1.0)
            lo_v = np.where(keep, vs.min(axis=0), 0.0)
            hi_v = np.where(keep, vs.max(axis=0), -1.0)
        self.x0 = np.clip(np.ceil(lo_u - 0.5), 0, cam.width - 1).astype(np.int64)
        self.x1 = np.clip(np.floor(hi_u - 0.5), 0, cam.width - 1).astype(np.int64)
        self.y0 = np.clip(np.ceil(lo_v - 0.5), 0, cam.height - 1).astype(np.int64)
        self.y1 = np.clip(np.floor(hi_v - 0.5), 0, cam.height - 1).astype(np.int64)
        keep &= (self.x0 <= self.x1) & (self.y0 <= self.y1)

        # Edge function i vanishes on the edge opposite vertex i. Winding is
        # canonicalized by folding sign(area2) into the coefficients, so
        # interior values are positive and lambda_i = w_i / |area2| exactly.
        sgn = np.where(area2 >= 0.0, 1.0, -1.0)
        coeff = np.empty((len(tris), 3, 3))
        tl = np.empty((len(tris), 3), dtype=bool)
        for i, (p, q) in enumerate(((b, c), (c, a), (a, b))):
            dx = q[:, 0] - p[:, 0]
            dy = q[:, 1] - p[:, 1]
            coeff[:, i, 0] = sgn * -dy
            coeff[:, i, 1] = sgn * dx
            coeff[:, i, 2] = sgn * (dy * p[:, 0] - dx * p[:, 1])
            tl[:, i] = _is_top_left(sgn * dx, sgn * dy)

        self.keep = keep
        self.area_abs = np.where(keep, np.abs(area2), 1.0)
        self.coeff = coeff
        self.top_left = tl
        self.normals = fn / fn_safe
        with np.errstate(divide="ignore"):
            self.inv_z = np.where(tz >= NEAR_PLANE, 1.0 / np.where(tz > 0, tz, 1.0), 0.0)
        self.tri_oc = np.ascontiguousarray(mesh.object_coords[tris])


@numba.njit(cache=True, nogil=True)
def _band_kernel(keep, x0, x1, y0, y1, coeff, top_left, area_abs, inv_z, normals,
                 tri_oc, band_y0, band_y1, depth, normal, objcoord, index_map, bary):
    covered = 0
    for t in range(len(keep)):
        if not keep[t]:
            continue
        ty0 = y0[t] if y0[t] > band_y0 else band_y0
        ty1 = y1[t] if y1[t] < band_y1 - 1 else band_y1 - 1
        if ty0 > ty1:
            continue
        inv_area = 1.0 / area_abs[t]
        c00 = coeff[t, 0, 0]; c01 = coeff[t, 0, 1]; c02 = coeff[t, 0, 2]
        c10 = coeff[t, 1, 0]; c11 = coeff[t, 1, 1]; c12 = coeff[t, 1, 2]
        c20 = coeff[t, 2, 0]; c21 = coeff[t, 2, 1]; c22 = coeff[t, 2, 2]
        tl0 = top_left[t, 0]; tl1 = top_left[t, 1]; tl2 = top_left[t, 2]
        iz0 = inv_z[t, 0]; iz1 = inv_z[t, 1]; iz2 = inv_z[t, 2]
        for py in range(ty0, ty1 + 1):
            pcy = py + 0.5
            for px in range(x0[t], x1[t] + 1):
                pcx = px + 0.5
                w0 = c00 * pcx + c01 * pcy + c02
                if w0 < 0.0 or (w0 == 0.0 and not tl0):
                    continue
                w1 = c10 * pcx + c11 * pcy + c12
                if w1 < 0.0 or (w1 == 0.0 and not tl1):
                    continue
                w2 = c20 * pcx + c21 * pcy + c22
                if w2 < 0.0 or (w2 == 0.0 and not tl2):
                    continue
                l0 = w0 * inv_area
                l1 = w1 * inv_area
                l2 = w2 * inv_area
                n0 = l0 * iz0
                n1 = l1 * iz1
                n2 = l2 * iz2
                denom = n0 + n1 + n2
                zc = 1.0 / denom
                if zc >= depth[py, px]:
                    continue
                if index_map[py, px] < 0:
                    covered += 1
                depth[py, px] = zc
                index_map[py, px] = t
                b0 = n0 / denom
                b1 = n1 / denom
                b2 = n2 / denom
                bary[py, px, 0] = b0
                bary[py, px, 1] = b1
                bary[py, px, 2] = b2
                for k in range(3):
                    normal[py, px, k] = normals[t, k]
                    objcoord[py, px, k] = (b0 * tri_oc[t, 0, k]
                                           + b1 * tri_oc[t, 1, k]
                                           + b2 * tri_oc[t, 2, k])
    return covered


def rasterize(mesh, pose, cam, workers=1):
    """Render depth, normal, object-coordinate, mask, index and barycentric maps.

    ``workers`` > 1 splits the image into disjoint row bands processed by a
    thread pool; the result is bit-identical for any worker count. An empty
    render (no pixel covered) is reported with a warning, not an error.
    """
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.inf)
    normal = np.zeros((h, w, 3))
    objcoord = np.zeros((h, w, 3))
    index_map = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((h, w, 3))

    setup = _Setup(mesh, pose, cam)
    outs = (depth, normal, objcoord, index_map, bary)
    static = (setup.keep, setup.x0, setup.x1, setup.y0, setup.y1, setup.coeff,
              setup.top_left, setup.area_abs, setup.inv_z, setup.normals, setup.tri_oc)
    if workers <= 1:
        covered = _band_kernel(*static, 0, h, *outs)
    else:
        bounds = np.linspace(0, h, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_band_kernel, *static, int(b0), int(b1), *outs)
                for b0, b1 in zip(bounds[:-1], bounds[1:])
                if b1 > b0
            ]
            covered = sum(f.result() for f in futures)

    if covered == 0:
        logger.warning("empty render: no pixel covered (%d triangles submitted)", mesh.num_triangles)
    mask = index_map >= 0
    return RenderBuffers(depth, normal, objcoord, mask, index_map, bary, pose, cam)


def normalized_depth(buffers):
    """Foreground depth min-max normalized to [0, 1]; background and
    degenerate (flat) renders map to 0."""
    out = np.zeros(buffers.shape)
    if buffers.mask.any():
        vals = buffers.depth[buffers.mask]
        lo = vals.min()
        span = vals.max() - lo
        if span >= 1e-9:
            out[buffers.mask] = (vals - lo) / span
    return out


def channel_stack(buffers):
    """Stack [normalized depth, normal xyz, objcoord xyz] into a (H, W, 7)
    field; background pixels are zero in every channel."""
    h, w = buffers.shape
    out = np.zeros((h, w, 7))
    out[:, :, 0] = normalized_depth(buffers)
    out[:, :, 1:4] = buffers.normal
    out[:, :, 4:7] = buffers.objcoord
    out[~buffers.mask] = 0.0
    return out
