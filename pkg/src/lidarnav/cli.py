"""Command-line harness: map / plan / train / eval / replay pipelines.

Every run derives all randomness from one master seed, records a manifest
with checksums of inputs and produced artifacts, and uses a stable exit-code
contract: 0 success, 1 configuration error, 2 I/O error, 3 planner found no
path. The output directory defaults to $RELAX_NAV_OUT or ./out.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import agent, lidar, mapping, planner, world
from .net import CheckpointError
from .seeding import derive_rng, derive_seed

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NO_PATH = 3

_CONFIG_KEYS = set(agent.EpisodeConfig().__dict__) | {"reset"}
_RESET_KEYS = set(agent.ResetConfig().__dict__)


class ConfigError(ValueError):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, config: dict, out_dir: str):
        self.data = {
            "version": 1,
            "command": command,
            "config": config,
            "inputs": {},
            "artifacts": [],
            "timings": {},
        }
        self.out_dir = out_dir
        self._t0 = time.monotonic()

    def add_input(self, path) -> None:
        self.data["inputs"][str(path)] = _sha256(path)

    def add_artifact(self, path) -> None:
        self.data["artifacts"].append(
            {"path": str(path), "sha256": _sha256(path), "bytes": os.path.getsize(path)}
        )

    def write(self) -> str:
        self.data["timings"]["wall_seconds"] = time.monotonic() - self._t0
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2)
            fh.write("\n")
        return path


def _prepare_out_dir(args) -> str:
    out = args.out or os.environ.get("RELAX_NAV_OUT") or "out"
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.unlink(probe)
    except OSError as exc:
        raise IOError(f"output directory not writable: {exc}") from exc
    return out


def _load_scenario_arg(args) -> world.WorldConfig:
    if getattr(args, "scenario", None):
        if not os.path.exists(args.scenario):
            raise ConfigError(f"scenario file not found: {args.scenario}")
        return world.load_scenario(args.scenario)
    return world.spawn_scenario(args.seed, args.template)


def _load_run_config(args) -> tuple[agent.EpisodeConfig, agent.ResetConfig]:
    overrides = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            try:
                overrides = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    unknown = set(overrides) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    reset_overrides = overrides.pop("reset", {})
    unknown_reset = set(reset_overrides) - _RESET_KEYS
    if unknown_reset:
        raise ConfigError(f"unknown reset config fields: {sorted(unknown_reset)}")
    if args.command == "train" and args.episodes is not None:
        overrides["n_eps"] = args.episodes
    if getattr(args, "no_terminal_mask", False):
        overrides["terminal_mask"] = False
    try:
        cfg = agent.EpisodeConfig(**overrides)
        reset_cfg = agent.ResetConfig(**reset_overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg, reset_cfg


def _parse_xy(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected 'x,y', got {text!r}") from exc
    return x, y


# --- commands ---------------------------------------------------------------


def cmd_map(args) -> int:
    out = _prepare_out_dir(args)
    scenario = _load_scenario_arg(args)
    manifest = Manifest("map", {"seed": args.seed, "template": args.template,
                                "resolution": args.resolution, "poses": args.poses}, out)
    if args.scenario:
        manifest.add_input(args.scenario)

    if args.poses:
        poses = []
        with open(args.poses) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                x, y = (float(v) for v in line.split(",")[:2])
                poses.append((x, y))
    else:
        rng = derive_rng(args.seed, "map-poses")
        poses = []
        for _ in range(200):
            if len(poses) >= args.n_poses:
                break
            x = rng.uniform(scenario.x_min + 2, scenario.x_max - 2)
            y = rng.uniform(scenario.y_min + 2, scenario.y_max - 2)
            if world.nearest_obstacle_distance((x, y), scenario) > 1.0:
                poses.append((x, y))

    grid = mapping.OccupancyGrid.for_bounds(
        scenario.x_min, scenario.x_max, scenario.y_min, scenario.y_max, args.resolution
    )
    scans = []
    for x, y in poses:
        pose = world.DronePose.at(x, y, scenario.altitude)
        scan = lidar.cast_scan(scenario, pose, max_range=args.max_range)
        scans.append(scan)
        mapping.integrate_scan(grid, mapping.PoseEstimate(x, y, 0.0), scan)

    corners = rotation = None
    try:
        rotation = mapping.estimate_rotation(grid)
        corners = mapping.extract_corners(grid, rotation.angle)
    except ValueError:
        pass

    pgm_path = os.path.join(out, "map.pgm")
    sidecar_path = os.path.join(out, "map.json")
    scan_path = os.path.join(out, "scans.csv")
    scenario_path = os.path.join(out, "scenario.json")
    mapping.save_pgm(grid, pgm_path)
    mapping.save_sidecar(
        sidecar_path, grid, corners, rotation,
        extra={"bounds": {"x_min": scenario.x_min, "x_max": scenario.x_max,
                          "y_min": scenario.y_min, "y_max": scenario.y_max}},
    )
    lidar.write_scan_log(scan_path, scans, [float(i) for i in range(len(scans))])
    world.save_scenario(scenario, scenario_path)
    for p in (pgm_path, sidecar_path, scan_path, scenario_path):
        manifest.add_artifact(p)
    manifest.write()
    print(f"map: integrated {len(poses)} scans -> {pgm_path}")
    return EXIT_OK


def cmd_plan(args) -> int:
    out = _prepare_out_dir(args)
    if not os.path.exists(args.grid):
        raise ConfigError(f"grid file not found: {args.grid}")
    sidecar_path = os.path.splitext(args.grid)[0] + ".json"
    if not os.path.exists(sidecar_path):
        raise ConfigError(f"map sidecar not found: {sidecar_path}")
    sidecar = mapping.load_sidecar(sidecar_path)
    grid = mapping.load_pgm(
        args.grid, resolution=sidecar["resolution"], origin=tuple(sidecar["origin"])
    )
    manifest = Manifest(
        "plan",
        {"grid": args.grid, "start": args.start, "target": args.target, "seed": args.seed,
         "step_size": args.step_size, "test_range": args.test_range,
         "iterations": args.iterations, "mode": args.mode},
        out,
    )
    manifest.add_input(args.grid)
    manifest.add_input(sidecar_path)

    start = _parse_xy(args.start)
    target = _parse_xy(args.target)
    cfg = planner.RRTConfig(
        num_iterations=args.iterations,
        step_size=args.step_size,
        test_range=args.test_range,
        rng_seed=args.seed,
    )
    try:
        result = planner.plan_rrt(grid, start, target, cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    tree_path = os.path.join(out, "tree.json")
    planner.export_tree_json(result.tree, tree_path)
    manifest.add_artifact(tree_path)
    if not result.found:
        manifest.write()
        print(f"plan: no path after {result.iterations} iterations "
              f"({len(result.tree.positions)} nodes explored)")
        return EXIT_NO_PATH

    # Two corner/extent wirings: "grid" uses the full grid's metric geometry
    # (exact for maps built with known poses); "corner" scales the scanned
    # region's bounding box to the recorded world bounds, which matches the
    # corner-ratio construction and is equivalent when the scanned
    # boundary is the world boundary (walled scenarios).
    bounds = sidecar.get("bounds") or {}
    corners_data = sidecar.get("corners")
    if args.transform == "corner" and corners_data:
        corners = mapping.MapCorners(*(tuple(c) for c in corners_data))
        x_min_g = bounds.get("x_min", 0.0)
        x_max_g = bounds.get("x_max", grid.width * grid.resolution)
        y_min_g = bounds.get("y_min", 0.0)
        y_max_g = bounds.get("y_max", grid.height * grid.resolution)
        rotation = (sidecar.get("rotation") or {}).get("angle", 0.0)
    else:
        if args.transform == "corner":
            print("plan: no corners in sidecar, falling back to grid transform")
        corners = mapping.MapCorners(
            (0.0, grid.height), (grid.width, grid.height), (grid.width, 0.0), (0.0, 0.0)
        )
        x_min_g = grid.origin[0]
        x_max_g = grid.origin[0] + grid.width * grid.resolution
        y_min_g = grid.origin[1]
        y_max_g = grid.origin[1] + grid.height * grid.resolution
        rotation = 0.0
    tcfg = planner.TransformConfig(
        corners=corners,
        x_min_g=x_min_g,
        x_max_g=x_max_g,
        y_min_g=y_min_g,
        y_max_g=y_max_g,
        theta=rotation,
        mode=args.mode,
    )
    world_path = planner.transform_path(result.path, tcfg)
    path_csv = os.path.join(out, "path.csv")
    planner.export_path_csv(result.path, world_path.points, path_csv)
    manifest.add_artifact(path_csv)
    manifest.write()
    print(f"plan: {len(result.path)} waypoints ({world_path.mode} transform) -> {path_csv}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = _prepare_out_dir(args)
    cfg, reset_cfg = _load_run_config(args)
    manifest = Manifest("train", {"seed": args.seed, "episodes": cfg.n_eps,
                                  "config": args.config}, out)
    if args.config:
        manifest.add_input(args.config)
    policy = agent.DuelingNet(seed=derive_seed(args.seed, "policy-init"))
    target_net = agent.DuelingNet(seed=derive_seed(args.seed, "target-init"))
    factory = agent.default_world_factory(args.seed)
    result = agent.run_training(factory, policy, target_net, cfg, reset_cfg, out, args.seed)
    manifest.add_artifact(result.checkpoint_path)
    manifest.add_artifact(result.curve_path)
    manifest.write()
    print(f"train: {result.episodes} episodes, final rolling score "
          f"{np.mean(result.scores[-100:]):.1f} -> {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _prepare_out_dir(args)
    cfg, _ = _load_run_config(args)
    if args.policy == "greedy":
        if not os.path.exists(args.checkpoint):
            raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    manifest = Manifest(
        "eval",
        {"seed": args.seed, "episodes": args.episodes, "checkpoint": args.checkpoint,
         "policy": args.policy, "jobs": args.jobs},
        out,
    )
    if args.policy == "greedy":
        manifest.add_input(args.checkpoint)
    seeds = [derive_seed(args.seed, f"eval-scenario:{i}") for i in range(args.episodes)]
    result = agent.run_evaluation(
        args.checkpoint, seeds, cfg, master_seed=args.seed,
        policy_mode=args.policy, jobs=args.jobs,
    )
    summary_path, trace_paths = agent.write_eval_outputs(result, out)
    manifest.add_artifact(summary_path)
    for p in trace_paths:
        manifest.add_artifact(p)
    manifest.write()
    print(f"eval: success rate {result.success_rate:.0%} over {args.episodes} episodes")
    return EXIT_OK


def _rasterize_scenario(scenario: world.WorldConfig, px_per_m: int = 8) -> np.ndarray:
    occupied = world.occupancy_mask(scenario, 1.0 / px_per_m)
    img = np.full(occupied.shape + (3,), 255, dtype=np.uint8)
    img[occupied] = (40, 40, 40)
    return img[::-1, :, :]  # top row = max y


def cmd_replay(args) -> int:
    out = _prepare_out_dir(args)
    if not os.path.exists(args.trace):
        raise ConfigError(f"trace file not found: {args.trace}")
    if not os.path.exists(args.scenario):
        raise ConfigError(f"scenario file not found: {args.scenario}")
    scenario = world.load_scenario(args.scenario)
    manifest = Manifest("replay", {"trace": args.trace, "scenario": args.scenario}, out)
    manifest.add_input(args.trace)
    manifest.add_input(args.scenario)

    points = []
    with open(args.trace) as fh:
        for row in csv.DictReader(fh):
            points.append((float(row["x"]), float(row["y"])))
    if not points:
        raise ConfigError("trace has no rows")

    px_per_m = 8
    img = _rasterize_scenario(scenario, px_per_m)
    h = img.shape[0]

    def to_px(x, y):
        cx = int((x - scenario.x_min) * px_per_m)
        cy = h - 1 - int((y - scenario.y_min) * px_per_m)
        return cx, cy

    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        c0, r0 = to_px(x0, y0)
        c1, r1 = to_px(x1, y1)
        n = max(abs(c1 - c0), abs(r1 - r0), 1)
        for t in np.linspace(0.0, 1.0, n + 1):
            c = int(round(c0 + t * (c1 - c0)))
            r = int(round(r0 + t * (r1 - r0)))
            if 0 <= r < img.shape[0] and 0 <= c < img.shape[1]:
                img[r, c] = (220, 30, 30)

    ppm_path = os.path.join(out, "replay.ppm")
    with open(ppm_path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    manifest.add_artifact(ppm_path)
    manifest.write()
    print(f"replay: {len(points)} trace points -> {ppm_path}")
    return EXIT_OK


# --- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarnav",
        description="2D-LiDAR navigation pipelines: map, plan, train, eval, replay",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out", default=None, help="output directory (default $RELAX_NAV_OUT or ./out)")

    p_map = sub.add_parser("map", help="scan a scenario and export the occupancy map")
    common(p_map)
    p_map.add_argument("--scenario", default=None, help="scenario JSON file")
    p_map.add_argument("--template", default="farmland", choices=["farmland", "corridor", "empty"])
    p_map.add_argument("--poses", default=None, help="CSV of x,y scan poses")
    p_map.add_argument("--n-poses", type=int, default=10)
    p_map.add_argument("--resolution", type=float, default=0.1)
    p_map.add_argument("--max-range", type=float, default=30.0)

    p_plan = sub.add_parser("plan", help="plan a path on an exported map")
    common(p_plan)
    p_plan.add_argument("--grid", required=True, help="map PGM (sidecar JSON beside it)")
    p_plan.add_argument("--start", required=True, help="start pixel 'x,y'")
    p_plan.add_argument("--target", required=True, help="target pixel 'x,y'")
    p_plan.add_argument("--step-size", type=float, default=8.0)
    p_plan.add_argument("--test-range", type=float, default=8.0)
    p_plan.add_argument("--iterations", type=int, default=2000)
    p_plan.add_argument("--mode", default="affine", choices=["affine", "literal"])
    p_plan.add_argument("--transform", default="grid", choices=["grid", "corner"],
                        help="waypoint extent source: grid metric geometry or scanned corner box")

    p_train = sub.add_parser("train", help="train the obstacle handler")
    common(p_train)
    p_train.add_argument("--config", default=None, help="JSON config overrides")
    p_train.add_argument("--episodes", type=int, default=None, help="override training episodes")
    p_train.add_argument("--no-terminal-mask", action="store_true",
                         help="reproduce the literal bootstrap without terminal masking")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint over seeded scenarios")
    common(p_eval)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--episodes", type=int, default=50)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--policy", default="greedy", choices=["greedy", "random"])
    p_eval.add_argument("--jobs", type=int, default=1)

    p_replay = sub.add_parser("replay", help="render a stored trace over the scenario")
    common(p_replay)
    p_replay.add_argument("--trace", required=True)
    p_replay.add_argument("--scenario", required=True)

    return parser


_COMMANDS = {
    "map": cmd_map,
    "plan": cmd_plan,
    "train": cmd_train,
    "eval": cmd_eval,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and args.policy == "greedy" and not args.checkpoint:
        print("error: --checkpoint is required for greedy evaluation", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
