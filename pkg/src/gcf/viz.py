"""Visualization: displacement-field color wheels, attention outlines, and
the matplotlib report figures written next to CSV outputs."""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import hsv_to_rgb  # noqa: E402


def flow_to_rgb(field, max_magnitude=None):
    """Color-wheel rendering of a correspondence field.

    Hue encodes direction, saturation encodes magnitude relative to
    ``max_magnitude`` (defaults to the largest valid displacement);
    invalid pixels are black.
    """
    mag = np.hypot(field.du, field.dv)
    if max_magnitude is None:
        max_magnitude = float(mag[field.valid].max()) if field.valid.any() else 1.0
    if max_magnitude <= 0:
        max_magnitude = 1.0
    hsv = np.zeros(field.shape + (3,))
    hsv[..., 0] = (np.arctan2(field.dv, field.du) / (2.0 * np.pi)) % 1.0
    hsv[..., 1] = np.clip(mag / max_magnitude, 0.0, 1.0)
    hsv[..., 2] = field.valid.astype(np.float64)
    return (hsv_to_rgb(hsv) * 255.0).round().astype(np.uint8)


def mask_outline(weight):
    """Boundary pixels of a binary mask (active pixels with an inactive
    4-neighbor or lying on the image border)."""
    act = weight > 0
    interior = np.zeros_like(act)
    interior[1:-1, 1:-1] = (
        act[1:-1, 1:-1]
        & act[:-2, 1:-1]
        & act[2:, 1:-1]
        & act[1:-1, :-2]
        & act[1:-1, 2:]
    )
    return act & ~interior


def field_visualization(field, att=None, max_magnitude=None):
    """Color-wheel image of the field with attention outlines drawn white."""
    rgb = flow_to_rgb(field, max_magnitude)
    if att is not None:
        rgb[mask_outline(att.weight)] = 255
    return rgb


def _save_figure(fig, path):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=120, bbox_inches="tight")
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)


def plot_accuracy_curve(thresholds, curves, path):
    """Pose-accuracy-vs-threshold figure; ``curves`` maps label -> values."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, values in curves.items():
        ax.plot(thresholds, values, marker="o", markersize=3, label=label)
    ax.set_xlabel("pose distance threshold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend()
    _save_figure(fig, path)


def plot_trace(iterations, losses, rot_errors, trans_errors, path):
    """Refinement trace figure: loss plus rotation/translation errors."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.semilogy(iterations, np.maximum(losses, 1e-300))
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("reprojection loss")
    ax1.grid(alpha=0.3)
    ax2.semilogy(iterations, np.maximum(rot_errors, 1e-300), label="rotation (rad)")
    ax2.semilogy(iterations, np.maximum(trans_errors, 1e-300), label="translation (rel)")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("error")
    ax2.grid(alpha=0.3)
    ax2.legend()
    _save_figure(fig, path)


def plot_error_scatter(initial, final, path):
    """Initial vs final pose-distance scatter over benchmark trials."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    lo = min(min(final), min(initial), 1e-12)
    hi = max(max(final), max(initial))
    ax.loglog(initial, final, "o", markersize=4, alpha=0.7)
    ax.loglog([lo, hi], [lo, hi], "k--", linewidth=0.8, label="no change")
    ax.set_xlabel("initial pose distance")
    ax.set_ylabel("final pose distance")
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    _save_figure(fig, path)
