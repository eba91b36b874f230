"""``occunav`` command line interface.

Exit status: 0 on success, 1 on usage errors, 2 on data errors (missing,
malformed or inconsistent input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import EgoPose, load_rig, load_trajectory
from .metrics import (
    ScenarioResult,
    alignment_residual,
    batch_report,
    histogram_csv,
    load_pose_sequence,
    pose_errors,
    reward_histogram,
    sim3_align,
)
from .occupancy import (
    DEFAULT_TAXONOMY,
    GRID_MAGIC,
    GridGeometry,
    fuse_from_panorama,
    iou_miou,
    read_grid,
    read_sequence,
    write_grid,
)
from .planner import make_planner
from .raymap import (
    RAYMAP_MAGIC,
    NormalizationConfig,
    downsample,
    normalized_raymap,
    read_raymap,
    write_raymap,
)
from .reward import (
    EgoFootprint,
    RewardParams,
    breakdown_csv_rows,
    load_reward_params,
    trajectory_rewards,
)
from .rollout import GeneratorError, PlaybackGenerator, run_closed_loop
from .scenarios import load_scenario, standard_suite, write_suite

log = logging.getLogger("occunav")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _floats(text: str, n: int) -> tuple:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return tuple(parts)


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{p}: no such file or directory")
    return p


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OCCUNAV_THREADS", "1")))
    except ValueError:
        return 1


# -- subcommands -------------------------------------------------------------------


def cmd_version(args) -> int:
    print(f"occunav {__version__}")
    return EXIT_OK


def cmd_raymap(args) -> int:
    rig = load_rig(_require(args.rig))
    traj = load_trajectory(_require(args.traj))
    cfg = NormalizationConfig(args.reference, args.printed_transform, args.anchor)
    rm = normalized_raymap(rig, traj, args.height, args.width, cfg)
    if args.spatial > 1 or args.temporal > 1:
        rm = downsample(rm, args.spatial, args.temporal)
    write_raymap(rm, args.out)
    print(f"raymap frames={rm.n_frames} views={rm.n_views} h={rm.height} w={rm.width} -> {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    rig = load_rig(_require(args.rig))
    depth = np.load(_require(args.depth))
    sem = np.load(_require(args.semantic))
    x, y, yaw = args.ego
    geometry = GridGeometry(args.origin, args.voxel, tuple(int(d) for d in args.dims))
    grid = fuse_from_panorama(rig, EgoPose(0.0, x, y, yaw), list(depth), list(sem), geometry, DEFAULT_TAXONOMY)
    write_grid(grid, args.out)
    occupied = int(np.count_nonzero(grid.labels != grid.taxonomy.free))
    print(f"fused {occupied} occupied voxels -> {args.out}")
    return EXIT_OK


def cmd_reward(args) -> int:
    seq = read_sequence(_require(args.grid_seq))
    traj = load_trajectory(_require(args.traj))
    params = load_reward_params(_require(args.params)) if args.params else RewardParams()
    breakdowns, avg = trajectory_rewards(seq, traj, EgoFootprint(), params)
    rows = breakdown_csv_rows(traj, breakdowns)
    text = "\n".join(",".join(r) for r in rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    n_col = sum(b.collided for b in breakdowns)
    n_bd = sum(b.off_drivable for b in breakdowns)
    print(f"waypoints={len(breakdowns)} average={avg!r} collisions={n_col} off_drivable={n_bd}")
    return EXIT_OK


def _run_scenario(scenario, planner_name: str, seed: int | None):
    if seed is not None:
        scenario = replace(scenario, seed=seed, planner_cfg=replace(scenario.planner_cfg, seed=seed))
    planner = make_planner(planner_name, scenario.planner_cfg)
    gen = PlaybackGenerator(scenario.sequence, seed=scenario.seed)
    return scenario, run_closed_loop(gen, planner, scenario)


def cmd_simulate(args) -> int:
    scenario = load_scenario(_require(args.scenario))
    scenario, episode = _run_scenario(scenario, args.planner, args.seed)
    text = episode.to_json(include_timing=args.timing, criterion=scenario.pass_criterion)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(
        f"{scenario.scenario_id}: {episode.termination} after {len(episode)} steps, "
        f"average={episode.average_reward!r}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_suite(args) -> int:
    paths = write_suite(standard_suite(args.horizon, args.seed or 0), args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_metrics_sim3(args) -> int:
    est = load_pose_sequence(_require(args.est))
    gt = load_pose_sequence(_require(args.gt))
    sim = sim3_align(est, gt)
    rot, trans = pose_errors(est, gt, sim)
    res = alignment_residual(sim, est, gt)
    print("scale,rot_err,trans_err,residual")
    print(f"{sim.scale!r},{rot!r},{trans!r},{res!r}")
    return EXIT_OK


def cmd_metrics_iou(args) -> int:
    pred, gt = read_grid(_require(args.pred)), read_grid(_require(args.gt))
    iou, miou, per_class = iou_miou(pred, gt)
    print(json.dumps({"iou": iou, "miou": miou, "per_class": per_class}, sort_keys=True))
    return EXIT_OK


def cmd_metrics_batch(args) -> int:
    root = _require(args.suite)
    manifests = sorted(root.glob("*/scenario.json")) if root.is_dir() else [root]
    if not manifests:
        raise FileNotFoundError(f"{root}: no */scenario.json manifests found")
    scenarios = [load_scenario(m) for m in manifests]

    def run(sc):
        sc, episode = _run_scenario(sc, args.planner, args.seed)
        return ScenarioResult.from_log(episode, sc.pass_criterion)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(run, scenarios))
    report = batch_report(results)
    report["planner"] = args.planner
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    if args.hist:
        Path(args.hist).write_text(histogram_csv(reward_histogram(results, args.bins)))
    s = report["summary"]
    print(f"planner={args.planner} scenarios={len(results)} spr={s['spr']!r} mean_reward={s['mean_reward']!r}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = _require(args.file)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == RAYMAP_MAGIC:
        rm = read_raymap(path)
        print(f"raymap frames={rm.n_frames} views={rm.n_views} h={rm.height} w={rm.width} "
              f"max|m.d|={rm.max_orthogonality_error():.3e}")
    elif magic == GRID_MAGIC:
        g = read_grid(path)
        counts = {name: int(np.count_nonzero(g.labels == i)) for i, name in enumerate(g.taxonomy.labels)}
        print(json.dumps({"dims": list(g.dims), "origin": list(g.geometry.origin),
                          "voxel_size": g.voxel_size, "counts": counts}, sort_keys=True))
    else:
        raise ValueError(f"{path}: unrecognized file magic {magic!r}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="occunav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("version", help="print the version")
    s.set_defaults(func=cmd_version)

    s = sub.add_parser("raymap", help="encode a trajectory as a normalized panoramic ray-map")
    s.add_argument("--rig", required=True)
    s.add_argument("--traj", required=True)
    s.add_argument("--height", type=int, default=16)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--spatial", type=int, default=1, help="spatial downsampling factor")
    s.add_argument("--temporal", type=int, default=1, help="temporal downsampling factor")
    s.add_argument("--reference", type=int, default=None, help="reference view index (default: rig's)")
    s.add_argument("--anchor", choices=("frame", "sequence"), default="frame")
    s.add_argument("--printed-transform", action="store_true", help="use the non-invariant printed transform")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_raymap)

    s = sub.add_parser("fuse", help="fuse per-view depth + semantics into an occupancy grid")
    s.add_argument("--rig", required=True)
    s.add_argument("--depth", required=True, help=".npy stack (views, h, w) of metric ray depth")
    s.add_argument("--semantic", required=True, help=".npy stack (views, h, w) of label indices")
    s.add_argument("--ego", type=lambda t: _floats(t, 3), default=(0.0, 0.0, 0.0), help="x,y,yaw")
    s.add_argument("--origin", type=lambda t: _floats(t, 3), default=(-51.2, -51.2, -5.0))
    s.add_argument("--voxel", type=float, default=0.2)
    s.add_argument("--dims", type=lambda t: _floats(t, 3), default=(512, 512, 40))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("reward", help="score a trajectory against an occupancy sequence")
    s.add_argument("--grid-seq", required=True)
    s.add_argument("--traj", required=True)
    s.add_argument("--params", default=None, help="TOML/JSON file with a [reward] section")
    s.add_argument("--out", default=None, help="per-waypoint CSV (default: stdout)")
    s.set_defaults(func=cmd_reward)

    s = sub.add_parser("simulate", help="run one closed-loop scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--planner", default="arc-greedy")
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--timing", action="store_true", help="include generator latencies in the log")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("suite", help="write the built-in ten-scenario suite")
    s.add_argument("--out", required=True)
    s.add_argument("--horizon", type=int, default=48)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("metrics", help="evaluation metrics")
    msub = s.add_subparsers(dest="metric", parser_class=_Parser)
    m = msub.add_parser("sim3", help="Sim(3)-aligned rotation/translation errors")
    m.add_argument("--est", required=True)
    m.add_argument("--gt", required=True)
    m.set_defaults(func=cmd_metrics_sim3)
    m = msub.add_parser("iou", help="occupancy IoU / mIoU between two grids")
    m.add_argument("--pred", required=True)
    m.add_argument("--gt", required=True)
    m.set_defaults(func=cmd_metrics_iou)
    m = msub.add_parser("batch", help="run a scenario suite and report pass rate")
    m.add_argument("--suite", required=True)
    m.add_argument("--planner", default="arc-greedy")
    m.add_argument("--report", default=None)
    m.add_argument("--hist", default=None, help="reward histogram CSV")
    m.add_argument("--bins", type=int, default=10)
    m.add_argument("--seed", type=int, default=None)
    m.set_defaults(func=cmd_metrics_batch)

    s = sub.add_parser("inspect", help="summarize a ray-map or occupancy grid file")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        sys.stderr.write(str(exc) if str(exc).endswith("\n") else f"{exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, GeneratorError) as exc:
        sys.stderr.write(f"occunav: error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
