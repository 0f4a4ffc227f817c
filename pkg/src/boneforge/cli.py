"""Batch command line front end.

Subcommands cover the offline workflows: scene synthesis, bone fitting,
pose retargeting, metric evaluation, animation export, and soft-mask
rendering. Every run that writes artifacts also writes ``manifest.json``
recording the fully resolved configuration, the seed, and package
versions; the manifest's ``timestamp`` field is the only output byte
that may differ between identical runs.

Configuration is layered, lowest priority first: built-in defaults, a
JSON file named by ``$BONEFORGE_CONFIG``, per-key ``BONEFORGE_<KEY>``
environment variables, then explicit flags.

Exit codes: 0 success, 1 bad invocation or configuration, 2 unreadable
or invalid input data, 3 numerical failure (divergent optimization,
degenerate geometry, non-finite results). Angles on the command line
are degrees; everything below the argument parser works in radians.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime
import json
import logging
import os
import sys
from importlib import metadata

import numpy as np
import scipy

from boneforge.geometry import (
    DegenerateGeometryError,
    MeshFormatError,
    TriMesh,
    eval_record,
    icp_align,
    load_mesh,
    longest_aabb_edge,
    sample_surface,
    save_mesh,
)
from boneforge.occupancy import (
    MaskFormatError,
    OccupancyConfig,
    camera_to_dict,
    render_bone_mask,
    save_mask,
)
from boneforge.optimizer import (
    DivergenceError,
    FitData,
    LossWeights,
    OptimConfig,
    coarse_to_fine,
    init_root_rig,
    report_lines,
    retarget,
)
from boneforge.rig import (
    Pose,
    RigError,
    canonical_pose,
    leaf_bones,
    load_rig,
    save_rig,
)
from boneforge.skinning import pose_surface, skin_surface
from boneforge.synth import SynthScenario, default_camera, make_scenario, perturb_pose

log = logging.getLogger(__name__)


class UsageError(ValueError):
    """Bad flags, bad flag values, or bad configuration."""


# Built-in defaults for every layered key, per subcommand where they
# apply. Values are strings so all three layers parse identically.
_DEFAULTS = {
    "gamma": "1.0",
    "tau": "0.1",
    "lambda": "2.0",
    "seed": "0",
    "threads": "",              # empty = all cores
    "steps": "",                # per-subcommand fallback below
    "depths": "1",
    "children": "2",
    "roots": "6",
    "frames": "1",
    "noise": "0.0",
    "points": "2000",
    "size": "64",
    "perturb": "0.0",
    "step_size": "0.5",
}

_RETARGET_STEPS_DEFAULT = "50,100,150,200"
_FIT_STEPS_DEFAULT = "40"


def _layered_value(key: str, flag_value) -> str:
    """flag > BONEFORGE_<KEY> env > $BONEFORGE_CONFIG file > default."""
    if flag_value is not None:
        return str(flag_value)
    env = os.environ.get(f"BONEFORGE_{key.upper()}")
    if env is not None:
        return env
    cfg_path = os.environ.get("BONEFORGE_CONFIG")
    if cfg_path:
        try:
            with open(cfg_path, "r", encoding="utf-8") as f:
                table = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read BONEFORGE_CONFIG: {exc}") from exc
        if not isinstance(table, dict):
            raise UsageError("BONEFORGE_CONFIG must hold a JSON object")
        if key in table:
            return str(table[key])
    return _DEFAULTS[key]


def _typed(key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge the config layers into one typed dict for this invocation."""
    cfg = {}
    floats = ("gamma", "tau", "lambda", "noise", "perturb", "step_size")
    ints = ("seed", "depths", "children", "roots", "frames", "points", "size")
    for key in floats:
        cfg[key] = _typed(key, _layered_value(key, getattr(args, key.replace("-", "_"), None)), float)
    for key in ints:
        cfg[key] = _typed(key, _layered_value(key, getattr(args, key, None)), int)

    raw_threads = _layered_value("threads", getattr(args, "threads", None))
    cfg["threads"] = _typed("threads", raw_threads, int) if raw_threads != "" else None

    raw_steps = _layered_value("steps", getattr(args, "steps", None))
    if raw_steps == "":
        raw_steps = (_RETARGET_STEPS_DEFAULT if args.subcommand == "retarget"
                     else _FIT_STEPS_DEFAULT)
    try:
        steps = tuple(int(s) for s in str(raw_steps).split(","))
    except ValueError as exc:
        raise UsageError(f"bad value for steps: {raw_steps!r}") from exc
    if not steps or any(s < 1 for s in steps) or list(steps) != sorted(steps):
        raise UsageError(f"steps must be ascending positive integers, got {raw_steps!r}")
    cfg["steps"] = steps

    for key in ("gamma", "tau", "step_size"):
        if cfg[key] <= 0:
            raise UsageError(f"{key} must be > 0, got {cfg[key]}")
    for key in ("lambda", "noise", "perturb"):
        if cfg[key] < 0:
            raise UsageError(f"{key} must be >= 0, got {cfg[key]}")
    for key in ("depths", "children", "roots", "frames", "points", "size"):
        if cfg[key] < 1:
            raise UsageError(f"{key} must be >= 1, got {cfg[key]}")
    if cfg["threads"] is not None and cfg["threads"] < 1:
        raise UsageError(f"threads must be >= 1, got {cfg['threads']}")
    return cfg


def _occ_config(cfg: dict) -> OccupancyConfig:
    return OccupancyConfig(gamma=cfg["gamma"], tau=cfg["tau"],
                           lambda_max=cfg["lambda"])


def _versions() -> dict:
    try:
        own = metadata.version("boneforge")
    except metadata.PackageNotFoundError:
        own = "unpackaged"
    return {
        "boneforge": own,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    }


def write_manifest(out_dir: str, subcommand: str, cfg: dict, inputs: dict) -> None:
    body = {
        "subcommand": subcommand,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in cfg.items()},
        "seed": cfg["seed"],
        "versions": _versions(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _select_pose(rig, poses, name: str | None) -> Pose:
    """Pick a pose from a rig file by frame name or index; None = canonical."""
    if name is None:
        return canonical_pose(rig)
    for p in poses:
        if p.frame == name:
            return p
    try:
        return poses[int(name)]
    except (ValueError, IndexError) as exc:
        have = [p.frame for p in poses]
        raise KeyError(f"no pose {name!r} in rig file (poses: {have})") from exc


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def _cmd_synth(args, cfg) -> None:
    out = _ensure_out(args.out)
    try:
        scn = SynthScenario(args.kind, n_frames=cfg["frames"], seed=cfg["seed"],
                            noise=cfg["noise"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data = make_scenario(scn, occ_cfg=_occ_config(cfg), mask_size=cfg["size"])
    save_rig(os.path.join(out, "rig.json"), data.rig, poses=data.poses)
    save_mesh(os.path.join(out, "mesh.obj"), data.mesh)
    for i, frame in enumerate(data.frame_meshes):
        save_mesh(os.path.join(out, f"frame_{i:03d}.obj"), frame)
    for i, mask in enumerate(data.masks):
        save_mask(os.path.join(out, f"mask_{i:03d}.png"), mask)
    with open(os.path.join(out, "camera.json"), "w", encoding="utf-8") as f:
        json.dump(camera_to_dict(data.camera), f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(out, "synth", cfg, {"kind": args.kind})
    log.info("synth %s: %d frames -> %s", args.kind, len(data.frame_meshes), out)


def _cmd_fit(args, cfg) -> None:
    out = _ensure_out(args.out)
    mesh = load_mesh(args.mesh)
    cloud = sample_surface(mesh, cfg["points"], seed=cfg["seed"])
    scale = 0.2 * longest_aabb_edge(cloud.points)
    rig0 = init_root_rig(cloud.points, cfg["roots"], seed=cfg["seed"], scale=scale)
    ocfg = OptimConfig(
        step_size=cfg["step_size"],
        max_steps=cfg["steps"][-1],
        loss_weights=LossWeights(bone_mask=0.0, overlap=1.0, cover=1.0),
        seed=cfg["seed"],
        children_per_bone=cfg["children"],
    )
    result = coarse_to_fine(rig0, FitData(cloud.points, (), mesh),
                            cfg["depths"], ocfg, _occ_config(cfg))
    save_rig(os.path.join(out, "rig.json"), result.rig)
    trace = [
        {"depth": d + 1, "steps": len(fit.trace), "loss": fit.final_loss}
        for d, fit in enumerate(result.depth_fits)
    ]
    with open(os.path.join(out, "fit.json"), "w", encoding="utf-8") as f:
        json.dump({"depths": trace, "leaves": len(leaf_bones(result.rig))},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(out, "fit", cfg, {"mesh": args.mesh})
    log.info("fit: %d leaf bones -> %s", len(leaf_bones(result.rig)), out)


def _cmd_retarget(args, cfg) -> None:
    out = _ensure_out(args.out)
    rig, poses = load_rig(args.rig)
    mesh = load_mesh(args.mesh)
    target = load_mesh(args.target).vertices
    pc = canonical_pose(rig)
    pose0 = _select_pose(rig, poses, args.pose)
    if cfg["perturb"] > 0:
        pose0 = perturb_pose(rig, pose0, np.deg2rad(cfg["perturb"]),
                             seed=cfg["seed"])
    skinned = skin_surface(mesh, rig, pc)
    ocfg = OptimConfig(step_size=cfg["step_size"], max_steps=cfg["steps"][-1],
                       convergence_tol=0.0, seed=cfg["seed"])
    report = retarget(rig, skinned, pose0, target, ocfg)

    want = set(cfg["steps"])
    rows = [json.loads(line) for line in report_lines(report)]
    keep = [r for r in rows if r["step"] in want]
    if not keep or keep[-1]["step"] != rows[-1]["step"]:
        keep.append(rows[-1])
    with open(os.path.join(out, "report.jsonl"), "w", encoding="utf-8") as f:
        for r in keep:
            f.write(json.dumps(r) + "\n")

    final = Pose("retargeted", dict(report.final_pose.locals))
    save_rig(os.path.join(out, "rig.json"), rig, poses=[*poses, final])
    warped = TriMesh(pose_surface(skinned, rig, pc, final), mesh.triangles)
    save_mesh(os.path.join(out, "warped.obj"), warped)
    write_manifest(out, "retarget", cfg,
                   {"rig": args.rig, "mesh": args.mesh, "target": args.target,
                    "pose": args.pose})
    log.info("retarget: cd %.6g after %d steps (%s) -> %s",
             report.final_cd, rows[-1]["step"], report.stopped, out)


def _cmd_eval(args, cfg) -> None:
    pred = load_mesh(args.mesh).vertices
    gt = load_mesh(args.target).vertices
    rec = eval_record(pred, gt)
    # ICP pre-alignment only counts when it actually helps the metric.
    try:
        aligned = icp_align(pred, gt).aligned.points
        rec_icp = eval_record(aligned, gt)
        if rec_icp["cd"] < rec["cd"]:
            rec = rec_icp
    except DegenerateGeometryError:
        pass
    line = json.dumps(rec, sort_keys=True)
    print(line)
    if args.out:
        out = _ensure_out(args.out)
        with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as f:
            f.write(line + "\n")
        write_manifest(out, "eval", cfg,
                       {"mesh": args.mesh, "target": args.target})


def _cmd_animate(args, cfg) -> None:
    out = _ensure_out(args.out)
    rig, poses = load_rig(args.rig)
    if not poses:
        raise RigError(f"{args.rig}: no poses to animate")
    mesh = load_mesh(args.mesh)
    pc = canonical_pose(rig)
    skinned = skin_surface(mesh, rig, pc)
    for i, pose in enumerate(poses):
        verts = pose_surface(skinned, rig, pc, pose)
        save_mesh(os.path.join(out, f"frame_{i:03d}.obj"),
                  TriMesh(verts, mesh.triangles))
    write_manifest(out, "animate", cfg, {"rig": args.rig, "mesh": args.mesh})
    log.info("animate: %d frames -> %s", len(poses), out)


def _cmd_render_mask(args, cfg) -> None:
    out = _ensure_out(args.out)
    rig, poses = load_rig(args.rig)
    mesh = load_mesh(args.mesh)
    pose = _select_pose(rig, poses, args.pose)
    camera = default_camera(mesh, cfg["size"], cfg["size"])
    mask = render_bone_mask(rig, pose, camera, _occ_config(cfg),
                            samples_per_ray=48)
    save_mask(os.path.join(out, "mask.png"), mask)
    with open(os.path.join(out, "camera.json"), "w", encoding="utf-8") as f:
        json.dump(camera_to_dict(camera), f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(out, "render-mask", cfg,
                   {"rig": args.rig, "mesh": args.mesh, "pose": args.pose})
    log.info("render-mask: %dx%d -> %s", cfg["size"], cfg["size"], out)


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--gamma", type=float, help="occupancy iso-level (Mahalanobis units)")
    sub.add_argument("--tau", type=float, help="occupancy sigmoid temperature")
    sub.add_argument("--lambda", dest="lambda_", type=float,
                     help="overlap budget per surface point")
    sub.add_argument("--seed", type=int, help="RNG seed (default 0)")
    sub.add_argument("--threads", type=int,
                     help="BLAS thread cap; default uses all cores")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boneforge",
        description="Hierarchical ellipsoid-bone rigs: synthesis, fitting, "
                    "retargeting, and evaluation.",
        epilog="Config precedence: built-in < $BONEFORGE_CONFIG JSON file "
               "< BONEFORGE_<KEY> env vars < flags.",
    )
    subs = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    p = subs.add_parser("synth", help="generate a ground-truth scene")
    p.add_argument("kind", help="chain-<k>, quadruped, or dumbbell")
    p.add_argument("--frames", type=int, help="animation frame count")
    p.add_argument("--noise", type=float, help="vertex jitter stddev")
    p.add_argument("--size", type=int, help="mask resolution in pixels")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = subs.add_parser("fit", help="fit a bone hierarchy to a mesh")
    p.add_argument("--mesh", required=True, help="target surface (OBJ/PLY)")
    p.add_argument("--roots", type=int, help="bones at depth 1")
    p.add_argument("--depths", type=int, help="hierarchy depth to grow to")
    p.add_argument("--children", type=int, help="children per bone when growing")
    p.add_argument("--steps", help="max optimization steps per depth")
    p.add_argument("--points", type=int, help="surface samples for the fit")
    p.add_argument("--step-size", dest="step_size", type=float,
                   help="line-searched gradient step")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = subs.add_parser("retarget", help="optimize a pose toward a target surface")
    p.add_argument("--rig", required=True, help="rig file (poses included)")
    p.add_argument("--mesh", required=True, help="canonical surface to skin")
    p.add_argument("--target", required=True, help="target surface (OBJ/PLY)")
    p.add_argument("--pose", help="starting pose name or index (default canonical)")
    p.add_argument("--perturb", type=float,
                   help="perturb the starting pose by this many degrees per bone")
    p.add_argument("--steps", help="comma-separated report checkpoints "
                                   f"(default {_RETARGET_STEPS_DEFAULT})")
    p.add_argument("--step-size", dest="step_size", type=float,
                   help="line-searched gradient step")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = subs.add_parser("eval", help="chamfer + F2 between two surfaces")
    p.add_argument("--mesh", required=True, help="predicted surface")
    p.add_argument("--target", required=True, help="reference surface")
    p.add_argument("--out", help="optional output directory")
    _add_common(p)

    p = subs.add_parser("animate", help="export deformed meshes for stored poses")
    p.add_argument("--rig", required=True, help="rig file with poses")
    p.add_argument("--mesh", required=True, help="canonical surface to skin")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = subs.add_parser("render-mask", help="render the soft occupancy mask")
    p.add_argument("--rig", required=True, help="rig file")
    p.add_argument("--mesh", required=True, help="surface used to frame the camera")
    p.add_argument("--pose", help="pose name or index (default canonical)")
    p.add_argument("--size", type=int, help="mask resolution in pixels")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    return parser


_HANDLERS = {
    "synth": _cmd_synth,
    "fit": _cmd_fit,
    "retarget": _cmd_retarget,
    "eval": _cmd_eval,
    "animate": _cmd_animate,
    "render-mask": _cmd_render_mask,
}


def _thread_limit(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return 0 if (exc.code or 0) == 0 else 1
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return 1
    # argparse stores --lambda as lambda_; the config layer wants "lambda"
    if hasattr(args, "lambda_"):
        setattr(args, "lambda", args.lambda_)
    try:
        cfg = resolve_config(args)
        with _thread_limit(cfg["threads"]):
            _HANDLERS[args.subcommand](args, cfg)
    except UsageError as exc:
        print(f"boneforge: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, DegenerateGeometryError, FloatingPointError) as exc:
        print(f"boneforge: {exc}", file=sys.stderr)
        return 3
    except (OSError, KeyError, ValueError, MeshFormatError, RigError,
            MaskFormatError) as exc:
        print(f"boneforge: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
