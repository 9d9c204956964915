"""Rasterization backward pass: pixel displacements -> per-vertex gradients
-> 6-DoF pose gradient.

Sign convention: displacements point from the current projection toward
the ground-truth projection, so the accumulated pose gradient is a
*descent* direction of the reprojection loss. The optimizer applies its
step along +g (see :mod:`gcf.refine`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .geometry import NEAR_PLANE, projection_jacobians


@dataclass(frozen=True)
class VertexGradients:
    """Attention/barycentric-weighted average displacement per vertex.

    ``support`` holds the accumulated weight (the denominator of the
    average); vertices with zero support (self-occluded or fully masked)
    carry a zero gradient.
    """

    grad: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        if self.grad.shape != (len(self.support), 2):
            raise DimensionMismatch("grad must be (n, 2) aligned with support")


@dataclass(frozen=True)
class PoseGradient:
    """6-vector in tangent space, ordered (omega, dt)."""

    g: np.ndarray

    def __post_init__(self):
        if self.g.shape != (6,):
            raise DimensionMismatch("pose gradient must be a 6-vector")
        if not np.all(np.isfinite(self.g)):
            raise ValueError("pose gradient must be finite")


def vertex_gradients(field, att, buffers, mesh):
    """Disperse per-pixel displacements onto the vertices of their visible
    triangles and normalize by the accumulated weight.

    For each pixel where the field is valid, each vertex of the visible
    triangle receives the pixel's displacement weighted by the attention
    weight times the vertex's barycentric weight; per-vertex sums are then
    divided by the summed weights.
    """
    if field.shape != buffers.shape or att.weight.shape != buffers.shape:
        raise DimensionMismatch("field, attention, and buffers must be spatially aligned")
    if buffers.mask.any() and buffers.index_map.max() >= mesh.num_triangles:
        raise DimensionMismatch("buffers reference triangles outside the mesh")

    n = mesh.num_vertices
    sel = buffers.mask & field.valid & (att.weight > 0)
    if not sel.any():
        return VertexGradients(np.zeros((n, 2)), np.zeros(n))

    tri = buffers.index_map[sel]
    verts = mesh.triangles[tri]  # (k, 3)
    weights = att.weight[sel][:, None] * buffers.bary[sel]  # (k, 3)
    ids = verts.ravel()
    wflat = weights.ravel()
    du = np.repeat(field.du[sel], 3)
    dv = np.repeat(field.dv[sel], 3)

    support = np.bincount(ids, weights=wflat, minlength=n)
    num_u = np.bincount(ids, weights=wflat * du, minlength=n)
    num_v = np.bincount(ids, weights=wflat * dv, minlength=n)
    grad = np.zeros((n, 2))
    hit = support > 0
    grad[hit, 0] = num_u[hit] / support[hit]
    grad[hit, 1] = num_v[hit] / support[hit]
    return VertexGradients(grad, support)


def vertex_gradients_csv(vgrads, path):
    """Debug dump: one ``index,gx,gy,support`` row per vertex."""
    from .imageio import atomic_write_text

    rows = ["index,gx,gy,support"]
    rows.extend(
        f"{i},{float(vgrads.grad[i, 0])!r},{float(vgrads.grad[i, 1])!r},"
        f"{float(vgrads.support[i])!r}"
        for i in range(len(vgrads.support))
    )
    atomic_write_text(path, "\n".join(rows) + "\n")


def pose_gradient(vgrads, mesh, pose, cam):
    """Chain per-vertex displacement gradients through the projection
    Jacobian: ``g = sum_i J_i^T grad_i`` over supported vertices.

    Vertices behind the near plane are skipped. The result is a descent
    direction of the reprojection loss restricted to the supported set.
    """
    if len(vgrads.support) != mesh.num_vertices:
        raise DimensionMismatch("vertex gradients do not match the mesh")
    supported = vgrads.support > 0
    if not supported.any():
        return PoseGradient(np.zeros(6))
    J, z = projection_jacobians(mesh.vertices[supported], pose, cam)
    ok = z >= NEAR_PLANE
    g = np.einsum("nij,ni->j", J[ok], vgrads.grad[supported][ok])
    return PoseGradient(g)
