"""Command-line entry point: ``planefuse <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 ambiguous initial pose,
3 initial pose not found, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, synth
from .config import load_config
from .errors import InitializationError, PlanefuseError
from .evaluation import compute_ate, compute_rpe
from .geometry import Pose, RigidTransform, Trajectory, compose, invert
from .localization import GlobalMap, fused_map, initial_pose_search, initialize, track_step
from .preprocessing import estimate_scale, preprocess, scale_cloud, scale_trajectory
from .registration import icp_refine, register_segments
from .segmentation import segment_planes
from .timing import stage

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_AMBIGUOUS = 2
EXIT_NOT_FOUND = 3
EXIT_USAGE = 64

STATUS_EXIT = {"pose": EXIT_OK, "ambiguous": EXIT_AMBIGUOUS, "not_found": EXIT_NOT_FOUND}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _vector(text, sizes=(3,)):
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if len(vals) not in sizes:
        raise argparse.ArgumentTypeError(
            f"expected {' or '.join(map(str, sizes))} comma-separated numbers, got {len(vals)}")
    return np.array(vals)


def _vec3(text):
    return _vector(text, (3,))


def _pose_arg(text):
    """``x,y,z`` or ``x,y,z,yaw_deg``."""
    v = _vector(text, (3, 4))
    return synth.yaw_pose(*v[:3], v[3] if len(v) == 4 else 0.0)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _maybe_preprocess(cloud, cfg, enabled):
    if not enabled:
        return cloud
    with stage("preprocessing"):
        return preprocess(cloud, cfg.filter)


def _relative_odometry(traj: Trajectory):
    """Per-scan translation in the previous pose's frame; the first entry is None."""
    odom = [None]
    for a, b in zip(traj.poses[:-1], traj.poses[1:]):
        odom.append(compose(invert(a.transform), b.transform).translation)
    return odom


def _odometry_for(args, n_scans):
    if args.odom is None:
        return None, [None] * n_scans, [float(k) for k in range(n_scans)]
    traj = io.load_trajectory(args.odom)
    if len(traj) != n_scans:
        raise UsageError(f"odometry has {len(traj)} poses for {n_scans} scans")
    return traj, _relative_odometry(traj), [float(t) for t in traj.timestamps]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_segment(args, cfg):
    with stage("load"):
        cloud = io.load_cloud(args.input)
    cloud = _maybe_preprocess(cloud, cfg, args.preprocess)
    with stage("segmentation"):
        segs = segment_planes(cloud, cfg.segmentation, args.viewpoint)
    io.save_segments(segs, args.output)
    return EXIT_OK


def cmd_register(args, cfg):
    with stage("load"):
        src = io.load_cloud(args.source)
        tgt = io.load_cloud(args.target)
    src = _maybe_preprocess(src, cfg, args.preprocess)
    tgt = _maybe_preprocess(tgt, cfg, args.preprocess)
    hint = io.load_transform(args.hint) if args.hint else None
    if hint is None and args.odom is not None:
        hint = RigidTransform.from_translation(args.odom)
    with stage("segmentation"):
        src_segs = segment_planes(src, cfg.segmentation)
        tgt_segs = segment_planes(tgt, cfg.segmentation)
    with stage("registration"):
        res = register_segments(src_segs, tgt_segs, cfg.matching, hint, args.odom)
    T = res.transform
    if args.icp and res.success:
        with stage("icp"):
            T = icp_refine(src, tgt, T, cfg.localization.icp_max_iter,
                           cfg.localization.icp_max_corr_dist).transform
    io.save_transform(T, args.output)
    print(f"rank={res.rank} pairs={len(res.correspondences)}")
    if not res.success:
        print("registration failed: too few verified plane correspondences", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def _metadata(cfg):
    # parameters in effect, written as comments ahead of the poses
    return tuple(line for line in cfg.to_text().splitlines() if line)


def _load_scans(paths, cfg):
    with stage("load"):
        return [io.load_cloud(p) for p in paths]


def cmd_track(args, cfg):
    scans = _load_scans(args.scans, cfg)
    odom_traj, odom, stamps = _odometry_for(args, len(scans))
    start = odom_traj[0].transform if odom_traj is not None else RigidTransform.identity()
    state = initialize(scans[0], cfg, start, None, stamps[0])
    for k in range(1, len(scans)):
        track_step(state, scans[k], odom[k], stamps[k])
    io.save_trajectory(state.trajectory(), args.output, _metadata(cfg))
    return EXIT_OK


def _load_map(path, cfg):
    with stage("load"):
        cloud = io.load_cloud(path, source_tag="vision")
    return GlobalMap(_maybe_preprocess(cloud, cfg, cfg.localization.preprocess))


def cmd_localize(args, cfg):
    gmap = _load_map(args.map, cfg)
    scans = _load_scans(args.scans, cfg)
    odom_traj, odom, stamps = _odometry_for(args, len(scans))
    start = args.initial_pose
    if start is None and odom_traj is not None:
        start = odom_traj[0].transform
    try:
        state = initialize(scans[0], cfg, start, gmap, stamps[0])
    except InitializationError as exc:
        if exc.status is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return STATUS_EXIT[exc.status]
    for k in range(1, len(scans)):
        track_step(state, scans[k], odom[k], stamps[k])
    io.save_trajectory(state.trajectory(), args.output, _metadata(cfg))
    if args.fused:
        with stage("fuse"):
            cloud, provenance = fused_map(state, gmap)
        io.save_fused_cloud(cloud, provenance, args.fused)
    flagged = [k for k, rec in enumerate(state.scans) if "global" not in rec.flags]
    if flagged:
        print(f"scans without global correction: {' '.join(map(str, flagged))}", file=sys.stderr)
    return EXIT_OK


def cmd_init_pose(args, cfg):
    gmap = _load_map(args.map, cfg)
    with stage("load"):
        scan = io.load_cloud(args.scan)
    scan = _maybe_preprocess(scan, cfg, cfg.localization.preprocess)
    with stage("initial_pose_search"):
        res = initial_pose_search(gmap, scan, cfg)
    print(f"status={res.status} r1={res.r1:.6g} r2={res.r2:.6g}", file=sys.stderr)
    if res.found:
        io.save_trajectory(Trajectory((Pose(0.0, res.pose),)), args.output,
                           _metadata(cfg) + (f"r1 = {res.r1:.6g}", f"r2 = {res.r2:.6g}"))
    else:
        print(res.status.upper(), file=sys.stderr)
    return STATUS_EXIT[res.status]


def cmd_evaluate(args, cfg):
    est = io.load_trajectory(args.est)
    ref = io.load_trajectory(args.ref)
    if args.metric == "rpe":
        stats = compute_rpe(est, ref, args.delta, args.max_dt)
    else:
        stats = compute_ate(est, ref, args.max_dt)
    print(stats.summary())
    if stats.degenerate:
        print("warning: degenerate alignment (positions nearly collinear)", file=sys.stderr)
    return EXIT_OK


def cmd_scale(args, cfg):
    vision = io.load_trajectory(args.vision)
    gps = io.load_trajectory(args.gps)
    s = estimate_scale(vision, gps, args.by)
    print(f"scale={s:.10g}")
    if args.cloud:
        cloud = io.load_cloud(args.cloud, source_tag="vision")
        io.save_cloud(scale_cloud(cloud, s), args.cloud_out)
    if args.trajectory_out:
        io.save_trajectory(scale_trajectory(vision, s), args.trajectory_out)
    return EXIT_OK


def _scene_from_args(args):
    if args.scene:
        text = Path(args.scene).read_text()
        sensor = args.sensor or "laser"
        return synth.parse_scene(text, args.noise, sensor)
    if args.preset is None:
        raise UsageError("synth needs a preset name or --scene")
    kwargs = {"noise": args.noise}
    if args.sensor:
        kwargs["sensor"] = args.sensor
    if args.density is not None:
        kwargs["density"] = args.density
    return synth.PRESETS[args.preset](**kwargs).validate()


def _dead_reckoning(truth: Trajectory, odom, rng, start_noise):
    """Pose file whose consecutive relative translations equal ``odom``."""
    first = truth[0].transform
    T = RigidTransform(first.rotation, first.translation + rng.normal(0.0, start_noise, 3))
    poses = [Pose(truth[0].timestamp, T)]
    for p, step in zip(truth.poses[1:], odom[1:]):
        T = RigidTransform(T.rotation, T.translation + T.rotation @ step)
        poses.append(Pose(p.timestamp, T))
    return Trajectory(tuple(poses))


def cmd_synth(args, cfg):
    spec = _scene_from_args(args)
    rng = np.random.default_rng(args.seed)
    pose = args.pose or RigidTransform.identity()
    if args.sequence:
        if args.outdir is None:
            raise UsageError("--sequence needs --outdir")
        if args.preset != "two-rooms":
            raise UsageError("--sequence is only defined for the two-rooms preset")
        truth = synth.two_rooms_trajectory()
        data = synth.make_sequence(spec, truth, args.seed, args.max_range, args.odom_noise)
        out = Path(args.outdir)
        out.mkdir(parents=True, exist_ok=True)
        names = []
        for k, scan in enumerate(data.scans):
            name = out / f"scan_{k:03d}.{args.format}"
            io.save_cloud(scan, name, args.format)
            names.append(name)
        io.save_cloud(data.map_cloud, out / f"map.{args.format}", args.format)
        io.save_trajectory(truth, out / "truth.txt")
        odo_rng = np.random.default_rng([args.seed, 1])
        io.save_trajectory(_dead_reckoning(truth, data.odometry, odo_rng, args.odom_noise),
                           out / "odom.txt")
        return EXIT_OK
    if args.outdir is not None:
        out = Path(args.outdir)
        out.mkdir(parents=True, exist_ok=True)
        laser_spec = synth.SceneSpec(spec.primitives, spec.noise, "laser")
        vision_spec = synth.SceneSpec(spec.primitives, spec.noise, "vision")
        laser = synth.laser_scan(laser_spec, pose, rng, args.max_range)
        vision = synth.vision_cloud(vision_spec, rng)
        io.save_cloud(laser, out / f"laser.{args.format}", args.format)
        io.save_cloud(vision, out / f"vision.{args.format}", args.format)
        # maps laser (sensor frame) coordinates into the scene frame
        io.save_transform(pose, out / "truth.txt")
        return EXIT_OK
    cloud = synth.sample_cloud(spec, rng, pose, args.max_range)
    io.save_cloud(cloud, args.output, args.format)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> Parser:
    p = Parser(prog="planefuse", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="config file (key = value with [section] headers)")
    p.add_argument("--verbose", action="store_true",
                   help="print per-stage timings as 'stage=<name> seconds=<float>' on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    s = sub.add_parser("segment", help="extract planar segments from a cloud")
    s.add_argument("input", nargs="?", default="-", help="cloud file, '-' for stdin")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--viewpoint", type=_vec3, default=np.zeros(3),
                   help="normals face this point (x,y,z)")
    s.add_argument("--preprocess", action="store_true", help="voxel and outlier filter first")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("register", help="estimate the transform taking source onto target")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--hint", help="initial transform file")
    s.add_argument("--odom", type=_vec3, help="odometry translation tx,ty,tz")
    s.add_argument("--icp", action="store_true", help="refine with point-to-point ICP")
    s.add_argument("--preprocess", action="store_true")
    s.add_argument("-o", "--output", default="-", help="transform file (default stdout)")
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("track", help="relative tracking over a scan sequence")
    s.add_argument("scans", nargs="+")
    s.add_argument("--odom", help="dead-reckoning trajectory, one pose per scan")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("localize", help="tracking with global correction against a map")
    s.add_argument("--map", required=True, help="vision map cloud")
    s.add_argument("scans", nargs="+")
    s.add_argument("--odom", help="dead-reckoning trajectory, one pose per scan")
    s.add_argument("--initial-pose", type=_pose_arg, help="x,y,z[,yaw_deg]; default searches the map")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--fused", help="write map plus scans as PLY with a per-point source tag")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("init-pose", help="locate one scan in the map")
    s.add_argument("--map", required=True)
    s.add_argument("scan")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_init_pose)

    s = sub.add_parser("evaluate", help="RPE or ATE between two trajectory files")
    s.add_argument("--est", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--metric", choices=("ate", "rpe"), default="ate")
    s.add_argument("--delta", type=int, default=1)
    s.add_argument("--max-dt", type=float, default=0.02)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("scale", help="recover monocular scale from a GPS track")
    s.add_argument("--vision", required=True, help="vision trajectory")
    s.add_argument("--gps", required=True, help="GPS trajectory (positions used)")
    s.add_argument("--by", choices=("auto", "time", "index"), default="auto")
    s.add_argument("--cloud", help="vision cloud to rescale")
    s.add_argument("--cloud-out", default="-")
    s.add_argument("--trajectory-out")
    s.set_defaults(func=cmd_scale)

    s = sub.add_parser("synth", help="generate synthetic scenes")
    s.add_argument("preset", nargs="?", choices=sorted(synth.PRESETS))
    s.add_argument("--scene", help="scene file with 'box|rect x0 y0 z0 x1 y1 z1 [density]' lines")
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sensor", choices=("laser", "vision"))
    s.add_argument("--density", type=float)
    s.add_argument("--pose", type=_pose_arg, help="laser pose x,y,z[,yaw_deg]")
    s.add_argument("--max-range", type=float, default=8.0)
    s.add_argument("--format", choices=io.CLOUD_FORMATS, default="xyz")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--outdir", help="write paired laser/vision clouds and ground truth here")
    s.add_argument("--sequence", action="store_true",
                   help="with --outdir: scans, map, truth and odometry along a trajectory")
    s.add_argument("--odom-noise", type=float, default=0.1)
    s.set_defaults(func=cmd_synth)
    return p


def _setup_logging(verbose):
    log = logging.getLogger("planefuse.timing")
    for h in list(log.handlers):
        if getattr(h, "_planefuse_cli", False):
            log.removeHandler(h)
    if verbose:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        handler._planefuse_cli = True
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        log.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = load_config(args.config)
        if args.config and not Path(args.config).exists():
            print(f"warning: config {args.config} not found, using defaults", file=sys.stderr)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"planefuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PlanefuseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
