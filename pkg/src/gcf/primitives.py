"""Procedural fixture meshes: a unit cube and a table-like object used by
benchmarks, tests, and documentation examples."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh

# Quad faces of a box with outward winding, over corners indexed by
# (x_bit << 2) | (y_bit << 1) | z_bit.
_BOX_QUADS = (
    (0, 2, 6, 4),  # z-
    (1, 5, 7, 3),  # z+
    (0, 4, 5, 1),  # y-
    (2, 3, 7, 6),  # y+
    (0, 1, 3, 2),  # x-
    (4, 6, 7, 5),  # x+
)


def _box_corners(center, half):
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half, dtype=np.float64)
    return np.array([
        c + h * np.array([sx, sy, sz])
        for sx in (-1.0, 1.0)
        for sy in (-1.0, 1.0)
        for sz in (-1.0, 1.0)
    ])


def cube_mesh(size=1.0):
    """Axis-aligned cube centered at the origin: 8 vertices, 12 triangles."""
    verts = _box_corners((0.0, 0.0, 0.0), (size / 2.0,) * 3)
    tris = []
    for a, b, c, d in _BOX_QUADS:
        tris.append((a, b, c))
        tris.append((a, c, d))
    return TriangleMesh.from_arrays(verts, np.array(tris, dtype=np.int64))


def _grid_face(origin, eu, ev, n, vertices, triangles):
    """Append an n x n quad grid spanning origin + u*eu + v*ev, u,v in [0,1]."""
    base = len(vertices)
    for j in range(n + 1):
        for i in range(n + 1):
            vertices.append(origin + (i / n) * eu + (j / n) * ev)
    for j in range(n):
        for i in range(n):
            a = base + j * (n + 1) + i
            b = a + 1
            c = a + (n + 1) + 1
            d = a + (n + 1)
            triangles.append((a, b, c))
            triangles.append((a, c, d))


def box_mesh(center, half, divisions=1):
    """Axis-aligned box with each face subdivided into ``divisions^2`` quads.

    Faces do not share vertices, keeping face normals crisp at the edges.
    """
    corners = _box_corners(center, half)
    vertices = []
    triangles = []
    for a, b, c, d in _BOX_QUADS:
        origin = corners[a]
        eu = corners[b] - corners[a]
        ev = corners[d] - corners[a]
        _grid_face(origin, eu, ev, divisions, vertices, triangles)
    return TriangleMesh.from_arrays(np.array(vertices), np.array(triangles, dtype=np.int64))


def table_mesh(divisions=3):
    """Table-like object (top slab plus four legs); 540 triangles for the
    default subdivision, exercising thin structures and self-occlusion."""
    vertices = []
    triangles = []

    def add(mesh):
        base = len(vertices)
        vertices.extend(mesh.vertices)
        triangles.extend(mesh.triangles + base)

    add(box_mesh((0.0, -0.35, 0.0), (0.5, 0.05, 0.35), divisions))  # top
    for sx in (-1.0, 1.0):
        for sz in (-1.0, 1.0):
            add(box_mesh((sx * 0.42, 0.05, sz * 0.27), (0.04, 0.35, 0.04), divisions))
    return TriangleMesh.from_arrays(np.array(vertices), np.array(triangles, dtype=np.int64))
