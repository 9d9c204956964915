"""Buffer dump formats: binary PPM (P6), ASCII PGM (P2), optional PNG.

All writers are atomic: content goes to a temporary file in the target
directory which is then renamed over the destination, so interrupted runs
leave no partial artifacts.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .raster import normalized_depth


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_ppm(path, rgb):
    """Write a (H, W, 3) uint8 array as binary PPM (P6)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    atomic_write_bytes(path, f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def write_pgm(path, gray, maxval):
    """Write a (H, W) non-negative integer array as ASCII PGM (P2)."""
    gray = np.asarray(gray)
    h, w = gray.shape
    lines = [f"P2\n{w} {h}\n{maxval}"]
    lines.extend(" ".join(str(int(v)) for v in row) for row in gray)
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_png(path, rgb):
    """Write a (H, W, 3) uint8 array as PNG via matplotlib."""
    import matplotlib.image

    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        matplotlib.image.imsave(tmp, np.ascontiguousarray(rgb, dtype=np.uint8))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def normal_to_rgb(buffers):
    """Map camera-frame normals from [-1, 1] to [0, 255]."""
    return np.clip(np.round((buffers.normal + 1.0) * 0.5 * 255.0), 0, 255).astype(np.uint8)


def objcoord_to_rgb(buffers):
    """Map object coordinates from [0, 1] to [0, 255]."""
    return np.clip(np.round(buffers.objcoord * 255.0), 0, 255).astype(np.uint8)


def depth_to_gray(buffers):
    """Foreground depth normalized to 1..65535 (near to far); background 0."""
    nd = normalized_depth(buffers)
    gray = np.zeros(buffers.shape, dtype=np.int64)
    gray[buffers.mask] = 1 + np.round(nd[buffers.mask] * 65534).astype(np.int64)
    return gray, 65535


def index_to_gray(buffers):
    """Triangle index + 1 (background 0), clipped to the 16-bit PGM range."""
    gray = np.clip(buffers.index_map.astype(np.int64) + 1, 0, 65535)
    return gray, int(max(gray.max(), 1))


def mask_to_gray(buffers):
    return buffers.mask.astype(np.int64) * 255, 255


def dump_buffers(buffers, outdir, png=True):
    """Write the five standard buffer visualizations into ``outdir``.

    Returns the list of written paths. PPM/PGM files are always written;
    PNG siblings are added for the color buffers when ``png`` is set.
    """
    os.makedirs(outdir, exist_ok=True)
    written = []

    def _p(name):
        return os.path.join(outdir, name)

    normal_rgb = normal_to_rgb(buffers)
    objcoord_rgb = objcoord_to_rgb(buffers)
    write_ppm(_p("normal.ppm"), normal_rgb)
    written.append(_p("normal.ppm"))
    write_ppm(_p("objcoord.ppm"), objcoord_rgb)
    written.append(_p("objcoord.ppm"))
    for name, (gray, maxval) in (
        ("depth.pgm", depth_to_gray(buffers)),
        ("index_map.pgm", index_to_gray(buffers)),
        ("mask.pgm", mask_to_gray(buffers)),
    ):
        write_pgm(_p(name), gray, maxval)
        written.append(_p(name))
    if png:
        write_png(_p("normal.png"), normal_rgb)
        written.append(_p("normal.png"))
        write_png(_p("objcoord.png"), objcoord_rgb)
        written.append(_p("objcoord.png"))
    return written
