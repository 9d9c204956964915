"""Iterative pose refinement: render, predict a correspondence field,
accumulate gradients, take an Adam step; plus the evaluation-only
reprojection loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backprop import pose_gradient, vertex_gradients
from .errors import EmptyRenderAtStart, NoValidVertices
from .field import AttentionConfig, attention_mask, predict
from .geometry import NEAR_PLANE, Pose, PoseDelta, apply_delta, project_points
from .raster import rasterize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefinementConfig:
    """Loop settings. ``iterations == 0`` makes :func:`refine` a no-op that
    still returns a (single-entry) trace, which the CLI relies on."""

    iterations: int = 1000
    learning_rate: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    record_trace: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.adam_eps <= 0 or self.learning_rate <= 0:
            raise ValueError("eps and learning_rate must be positive")


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates over the 6-vector increment."""

    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @staticmethod
    def zero():
        return AdamState(np.zeros(6), np.zeros(6), 0)

    def __post_init__(self):
        if self.m.shape != (6,) or self.v.shape != (6,):
            raise ValueError("moments must be 6-vectors")
        if self.v.min() < 0 or self.step_count < 0:
            raise ValueError("second moment and step count must be non-negative")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    loss: float
    pose: Pose


@dataclass(frozen=True)
class RefinementResult:
    """``trace`` has ``iterations + 1`` entries when recorded (initial state
    plus one per completed update). ``stopped_at`` reports the iteration at
    which the render became empty, if it did."""

    final_pose: Pose
    trace: Optional[list]
    stopped_at: Optional[int] = None


def adam_step(state, grad, cfg):
    """One bias-corrected Adam update on a 6-vector descent direction.

    ``grad`` must point toward decreasing loss (the convention of
    :func:`gcf.backprop.pose_gradient`); the returned increment is
    ``+lr * m_hat / (sqrt(v_hat) + eps)`` so applying it via
    :func:`gcf.geometry.apply_delta` shrinks the residual.
    """
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != (6,):
        raise ValueError("gradient must be a 6-vector")
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * g * g
    t = state.step_count + 1
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    step = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return AdamState(m, v, t), PoseDelta(step[:3], step[3:])


def reprojection_loss(mesh, pose, p_gt, cam, vertex_subset=None):
    """Half the summed squared pixel distance between vertex projections
    under the ground-truth and given poses.

    Vertices behind the near plane under either pose are excluded (the
    count is logged at debug level).

    Raises:
        NoValidVertices: every vertex of the subset is excluded.
    """
    if vertex_subset is None:
        idx = np.arange(mesh.num_vertices)
    else:
        idx = np.asarray(vertex_subset)
        if idx.dtype == bool:
            idx = np.nonzero(idx)[0]
    verts = mesh.vertices[idx]
    uv_a, z_a = project_points(verts, pose, cam)
    uv_b, z_b = project_points(verts, p_gt, cam)
    ok = (z_a >= NEAR_PLANE) & (z_b >= NEAR_PLANE)
    if not ok.any():
        raise NoValidVertices("all vertices project behind the camera")
    excluded = int(len(idx) - ok.sum())
    if excluded:
        logger.debug("reprojection_loss: excluded %d vertices behind the camera", excluded)
    d = uv_b[ok] - uv_a[ok]
    return 0.5 * float(np.sum(d * d))


def refine(mesh, p_init, cam, predictor, observation=None, cfg=RefinementConfig(),
           attention=None, gt_pose=None, workers=1):
    """Run the render / predict / backpropagate / step loop.

    One Adam state persists across all iterations; buffers, attention and
    the correspondence field are recomputed from scratch every iteration.
    The loop stops early only if a render becomes empty, reporting the
    iteration in the result.

    ``gt_pose`` is evaluation-only: when given together with
    ``cfg.record_trace``, each trace entry carries the reprojection loss
    over that iteration's supported vertices (NaN otherwise). It never
    influences the update path.

    Raises:
        EmptyRenderAtStart: the initial pose renders no pixels.
        PredictorFailure: propagated from the predictor.
    """
    att_cfg = attention if attention is not None else AttentionConfig()
    pose = p_init
    state = AdamState.zero()
    trace = [] if cfg.record_trace else None
    stopped_at = None
    supported = None

    for it in range(cfg.iterations):
        buffers = rasterize(mesh, pose, cam, workers=workers)
        if not buffers.mask.any():
            if it == 0:
                raise EmptyRenderAtStart("initial pose renders no pixels")
            stopped_at = it
            logger.warning("refinement stopped at iteration %d: empty render", it)
            break
        att = attention_mask(buffers, att_cfg)
        fld = predict(predictor, observation, buffers)
        vg = vertex_gradients(fld, att, buffers, mesh)
        supported = vg.support > 0
        if trace is not None:
            trace.append(TraceEntry(it, _trace_loss(mesh, pose, gt_pose, cam, supported), pose))
        g = pose_gradient(vg, mesh, pose, cam)
        state, delta = adam_step(state, g.g, cfg)
        pose = apply_delta(pose, delta)

    if trace is not None and stopped_at is None:
        trace.append(TraceEntry(cfg.iterations, _trace_loss(mesh, pose, gt_pose, cam, supported), pose))
    return RefinementResult(pose, trace, stopped_at)


def _trace_loss(mesh, pose, gt_pose, cam, supported):
    if gt_pose is None:
        return float("nan")
    subset = supported if supported is not None and supported.any() else None
    try:
        return reprojection_loss(mesh, pose, gt_pose, cam, subset)
    except NoValidVertices:
        return float("nan")
