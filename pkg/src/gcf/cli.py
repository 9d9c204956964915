"""Command-line harness: ``gcf render|refine|benchmark|gradcheck``.

Every command is deterministic given its arguments: all seeds come from
flags or config files, never from the clock, and outputs are written
atomically. Exit codes: 0 success, 1 usage/parse/IO error, 2 gradcheck
deviation beyond tolerance.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import benchmark as bench
from . import imageio, viz
from .backprop import pose_gradient, vertex_gradients
from .errors import GcfError
from .field import (OracleNoiseConfig, OraclePredictor, attention_mask,
                    predict, render_gt_gcf)
from .geometry import (NEAR_PLANE, CameraIntrinsics, Pose, PoseDelta, apply_delta,
                       load_obj, perturb_pose, project_points)
from .metrics import metric_context, sample_errors
from .raster import rasterize
from .refine import RefinementConfig, refine, reprojection_loss

DEFAULT_CAMERA = CameraIntrinsics(300.0, (128.0, 128.0), 256, 256)


class UsageError(Exception):
    """Bad arguments or unreadable inputs; exits with code 1."""


def _load_json_arg(value, what):
    """Accept either a path to a JSON file or an inline JSON object."""
    if value.lstrip().startswith("{"):
        try:
            return json.loads(value)
        except json.JSONDecodeError as exc:
            raise UsageError(f"inline {what} is not valid JSON: {exc}") from exc
    if not os.path.exists(value):
        raise UsageError(f"{what} file not found: {value}")
    with open(value, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{value}: invalid JSON: {exc}") from exc


def parse_pose(value):
    raw = _load_json_arg(value, "pose")
    try:
        return Pose(np.array(raw["rotation"], dtype=np.float64),
                    np.array(raw["translation"], dtype=np.float64))
    except KeyError as exc:
        raise UsageError(f"pose JSON missing key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid pose: {exc}") from exc


def parse_camera(value):
    if value is None:
        return DEFAULT_CAMERA
    raw = _load_json_arg(value, "camera")
    try:
        return bench.camera_from_dict(raw)
    except GcfError as exc:
        raise UsageError(str(exc)) from exc


def pose_to_dict(pose):
    return {
        "rotation": [[float(v) for v in row] for row in pose.rotation],
        "translation": [float(v) for v in pose.translation],
    }


def _load_mesh(path):
    if not os.path.exists(path):
        raise UsageError(f"mesh file not found: {path}")
    try:
        return load_obj(path)
    except GcfError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def default_pose(mesh, cam):
    """Identity rotation with the object centered at a distance where it
    fills about a third of the view."""
    center = mesh.vertices.mean(axis=0)
    z = bench.fit_distance(mesh, cam)
    return Pose(np.eye(3), np.array([0.0, 0.0, z]) - center)


def _emit(line):
    print(line)


# --------------------------------------------------------------------------
# render


def cmd_render(args):
    mesh = _load_mesh(args.mesh)
    cam = parse_camera(args.camera)
    pose = parse_pose(args.pose) if args.pose else default_pose(mesh, cam)
    os.makedirs(args.out, exist_ok=True)

    buffers = rasterize(mesh, pose, cam)
    written = imageio.dump_buffers(buffers, args.out)

    att = attention_mask(buffers)
    meta = {
        "camera": {
            "focal": cam.focal,
            "principal_point": [float(v) for v in cam.principal_point],
            "width": cam.width,
            "height": cam.height,
        },
        "pose": pose_to_dict(pose),
        "covered_pixels": int(buffers.mask.sum()),
        "attended_pixels": int((att.weight > 0).sum()),
        "triangles": mesh.num_triangles,
        "vertices": mesh.num_vertices,
        "files": [os.path.basename(p) for p in written],
    }

    if args.gt_pose:
        gt = parse_pose(args.gt_pose)
        field = render_gt_gcf(mesh, pose, gt, cam, buffers)
        rgb = viz.field_visualization(field, att)
        gcf_ppm = os.path.join(args.out, "gcf.ppm")
        imageio.write_ppm(gcf_ppm, rgb)
        gcf_png = os.path.join(args.out, "gcf.png")
        imageio.write_png(gcf_png, rgb)
        meta["files"] += ["gcf.ppm", "gcf.png"]
        meta["gt_pose"] = pose_to_dict(gt)

    imageio.atomic_write_text(os.path.join(args.out, "metadata.json"),
                              json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _emit(f"wrote {len(meta['files']) + 1} files to {args.out}")
    return 0


# --------------------------------------------------------------------------
# refine


def _errors_line(tag, e):
    return (f"{tag}: e_R={e.e_r:.3e} rad ({math.degrees(e.e_r):.4f} deg)  "
            f"e_t={e.e_t:.3e}  e_Rt={e.e_rt:.3e}  e_P={e.e_p:.3e}")


def cmd_refine(args):
    mesh = _load_mesh(args.mesh)
    cam = parse_camera(args.camera)
    p_gt = parse_pose(args.gt_pose)
    if args.pose:
        p_init = parse_pose(args.pose)
    elif args.perturb:
        p_init = perturb_pose(p_gt, dataclasses.replace(
            bench.PerturbationConfig(), seed=args.seed))
    else:
        p_init = p_gt
    cfg = RefinementConfig(
        iterations=args.iterations,
        learning_rate=args.lr,
        record_trace=True,
    )
    noise = OracleNoiseConfig(sigma_px=args.noise_px, dropout=args.dropout, seed=args.seed)
    predictor = OraclePredictor(mesh, p_gt, cam, noise)
    result = refine(mesh, p_init, cam, predictor, None, cfg, gt_pose=p_gt)

    ctx = metric_context(mesh, p_gt, cam)
    initial = sample_errors(mesh, p_gt, p_init, cam, ctx)
    final = sample_errors(mesh, p_gt, result.final_pose, cam, ctx)
    _emit(_errors_line("initial", initial))
    _emit(_errors_line("final  ", final))

    os.makedirs(args.out, exist_ok=True)
    payload = {
        "schema_version": bench.SCHEMA_VERSION,
        "initial_pose": pose_to_dict(p_init),
        "final_pose": pose_to_dict(result.final_pose),
        "gt_pose": pose_to_dict(p_gt),
        "initial_errors": initial.as_dict(),
        "final_errors": final.as_dict(),
        "iterations": cfg.iterations,
        "learning_rate": cfg.learning_rate,
        "noise": {"sigma_px": noise.sigma_px, "dropout": noise.dropout, "seed": noise.seed},
        "stopped_at": result.stopped_at,
    }
    imageio.atomic_write_text(os.path.join(args.out, "result.json"),
                              json.dumps(payload, indent=2, sort_keys=True) + "\n")

    if args.trace:
        rows = ["iteration,loss,rot_err,trans_err"]
        its, losses, rerrs, terrs = [], [], [], []
        for entry in result.trace:
            e = sample_errors(mesh, p_gt, entry.pose, cam, ctx)
            rows.append(f"{entry.iteration},{entry.loss!r},{e.e_r!r},{e.e_t!r}")
            its.append(entry.iteration)
            losses.append(entry.loss)
            rerrs.append(e.e_r)
            terrs.append(e.e_t)
        imageio.atomic_write_text(os.path.join(args.out, "trace.csv"), "\n".join(rows) + "\n")
        viz.plot_trace(its, losses, rerrs, terrs, os.path.join(args.out, "trace.png"))
    return 0


# --------------------------------------------------------------------------
# benchmark


def cmd_benchmark(args):
    try:
        config = bench.load_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    outdir = args.out if args.out else config.output_dir
    results = bench.run_benchmark(config, workers=args.workers)
    written = bench.write_reports(config, results, outdir, paper_scale=args.paper_scale)
    stopped = [r.trial for r in results if r.stopped_at is not None]
    if stopped:
        _emit(f"warning: {len(stopped)} trials stopped early on empty renders: {stopped}")
    _emit(f"ran {len(results)} trials; wrote {len(written)} report files to {outdir}")
    return 0


# --------------------------------------------------------------------------
# gradcheck


def _analytic_descent_direction(mesh, pose, p_gt, cam, supported):
    """Per-vertex ground-truth displacements chained through the projection
    Jacobian over the supported set (the analytic side of the check)."""
    uv_c, z_c = project_points(mesh.vertices, pose, cam)
    uv_g, z_g = project_points(mesh.vertices, p_gt, cam)
    ok = supported & (z_c >= NEAR_PLANE) & (z_g >= NEAR_PLANE)
    from .backprop import VertexGradients

    disp = np.where(ok[:, None], uv_g - uv_c, 0.0)
    vg = VertexGradients(disp, ok.astype(np.float64))
    return pose_gradient(vg, mesh, pose, cam).g, ok


def _fd_descent_direction(mesh, pose, p_gt, cam, subset, step):
    """Central finite differences of the reprojection loss, negated so it
    is comparable to the descent-direction convention."""
    g = np.zeros(6)
    for j in range(6):
        e = np.zeros(6)
        e[j] = step
        lp = reprojection_loss(mesh, apply_delta(pose, PoseDelta(e[:3], e[3:])), p_gt, cam, subset)
        lm = reprojection_loss(mesh, apply_delta(pose, PoseDelta(-e[:3], -e[3:])), p_gt, cam, subset)
        g[j] = -(lp - lm) / (2.0 * step)
    return g


def run_gradcheck(mesh, cam, trials, seed, step=1e-6, flip_sign=False, workers=1):
    """Compare the analytic pose gradient against finite differences on
    ``trials`` random pose pairs; returns the max relative deviation."""
    max_dev = 0.0
    for k in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, 0]))
        p_gt = bench.make_gt_pose(mesh, cam, rng)
        pert = bench.PerturbationConfig(seed=bench.derived_seed(seed, k, 1))
        pose = perturb_pose(p_gt, pert)

        buffers = rasterize(mesh, pose, cam, workers=workers)
        if not buffers.mask.any():
            continue
        att = attention_mask(buffers)
        predictor = OraclePredictor(mesh, p_gt, cam)
        field = predict(predictor, None, buffers)
        vg = vertex_gradients(field, att, buffers, mesh)
        supported = vg.support > 0
        if not supported.any():
            continue

        g_analytic, subset = _analytic_descent_direction(mesh, pose, p_gt, cam, supported)
        if flip_sign:
            g_analytic = -g_analytic
        g_fd = _fd_descent_direction(mesh, pose, p_gt, cam, subset, step)
        denom = max(float(np.linalg.norm(g_fd)), 1e-300)
        dev = float(np.linalg.norm(g_analytic - g_fd)) / denom
        max_dev = max(max_dev, dev)
    return max_dev


def cmd_gradcheck(args):
    if args.trials <= 0:
        raise UsageError("--trials must be a positive integer")
    mesh = _load_mesh(args.mesh)
    cam = parse_camera(args.camera)
    max_dev = run_gradcheck(mesh, cam, args.trials, args.seed,
                            step=args.step, flip_sign=args.flip_sign)
    _emit(f"max relative deviation over {args.trials} poses: {max_dev:.3e}"
          f" (tolerance {args.tolerance:.1e})")
    return 0 if max_dev <= args.tolerance else 2


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(
        prog="gcf",
        description="Pose refinement via rendered geometric correspondence fields.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render geometry buffers to image files")
    r.add_argument("--mesh", required=True, help="OBJ mesh path")
    r.add_argument("--pose", help="pose JSON (path or inline); default: auto-fitted view")
    r.add_argument("--gt-pose", dest="gt_pose",
                   help="also render the ground-truth correspondence field against this pose")
    r.add_argument("--camera", help="camera JSON (path or inline); default: 256x256, focal 300")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_render)

    f = sub.add_parser("refine", help="run one refinement and report errors")
    f.add_argument("--mesh", required=True)
    f.add_argument("--pose", help="initial pose JSON; defaults to --gt-pose (or a perturbation of it)")
    f.add_argument("--gt-pose", dest="gt_pose", required=True, help="ground-truth pose JSON")
    f.add_argument("--camera")
    f.add_argument("--out", required=True)
    f.add_argument("--iterations", type=int, default=1000)
    f.add_argument("--lr", type=float, default=0.05)
    f.add_argument("--noise-px", dest="noise_px", type=float, default=0.0,
                   help="oracle Gaussian pixel noise std")
    f.add_argument("--dropout", type=float, default=0.0, help="oracle dropout fraction")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--perturb", action="store_true",
                   help="start from a seeded perturbation of the ground truth")
    f.add_argument("--trace", action="store_true", help="write trace.csv and trace.png")
    f.set_defaults(func=cmd_refine)

    b = sub.add_parser("benchmark", help="run a seeded multi-trial benchmark from a JSON config")
    b.add_argument("--config", required=True, help="benchmark config JSON path")
    b.add_argument("--out", help="override the config's output_dir")
    b.add_argument("--workers", type=int, default=1, help="parallel trial processes")
    b.add_argument("--paper-scale", dest="paper_scale", action="store_true",
                   help="report medians in degrees / x100 units")
    b.set_defaults(func=cmd_benchmark)

    g = sub.add_parser("gradcheck", help="verify the analytic pose gradient against finite differences")
    g.add_argument("--mesh", required=True)
    g.add_argument("--camera")
    g.add_argument("--trials", type=int, default=100, help="number of random pose pairs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--step", type=float, default=1e-6, help="finite-difference step")
    g.add_argument("--tolerance", type=float, default=1e-3)
    g.add_argument("--flip-sign", dest="flip_sign", action="store_true",
                   help="self-test hook: negate the analytic gradient (must fail)")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
