"""Deterministic 2D world standing in for the full physics simulator.

Static walls and landmarks, movable thin bars, a drone flying at fixed
altitude, and an emulation of the laggy reported-pose behaviour seen when a
simulated vehicle is teleported back to its spawn point: the true pose jumps
immediately while the pose the control layer sees converges step by step.

Frame convention: x forward, y left, bearings in degrees counter-clockwise
from +x. One action unit is one meter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Planar displacements of the 8 discrete actions, in meters.
ACTIONS = np.array(
    [
        (1.0, -1.0),
        (1.0, 0.0),
        (1.0, 1.0),
        (0.0, 1.0),
        (-1.0, 1.0),
        (-1.0, 0.0),
        (-1.0, -1.0),
        (0.0, -1.0),
    ]
)

DEFAULT_ALTITUDE = 4.4
POLL_DT = 0.1  # simulated seconds consumed per reported-pose poll

SCENARIO_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box obstacle."""

    center: tuple[float, float]
    half_extents: tuple[float, float]

    kind = "rectangle"

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise ValueError("rectangle half-extents must be positive")


@dataclass(frozen=True)
class Bar:
    """Thin oriented bar given by its segment endpoints and full thickness."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    thickness: float

    kind = "bar"

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError("bar thickness must be positive")
        if math.dist(self.p0, self.p1) == 0.0:
            raise ValueError("bar endpoints must be distinct")


Obstacle = Rectangle | Bar


@dataclass(frozen=True)
class DronePose:
    """True pose plus the pose the control layer currently sees.

    The two only diverge while a lagged reset is in flight.
    """

    x: float
    y: float
    z: float
    reported_x: float
    reported_y: float
    reported_z: float

    @classmethod
    def at(cls, x: float, y: float, z: float) -> "DronePose":
        return cls(x, y, z, x, y, z)

    def reported(self) -> tuple[float, float, float]:
        return (self.reported_x, self.reported_y, self.reported_z)


@dataclass
class EpisodeStatus:
    step_counter: int = 0
    done: bool = False
    done_reason: str = "none"  # target | out_of_bounds | step_limit | collision | none


@dataclass
class WorldConfig:
    x_min: float = -20.0
    x_max: float = 20.0
    y_min: float = -20.0
    y_max: float = 20.0
    altitude: float = DEFAULT_ALTITUDE
    obstacles: list = field(default_factory=list)
    col_threshold: float = 0.8
    reset_lag_enabled: bool = True
    reset_lag_step: float = 1.0
    rng_seed: int = 0
    # Extensions beyond the bare geometry: where missions start and the
    # scenario's canonical goal, both guaranteed clear by the generators.
    start: tuple[float, float] = (0.0, 0.0)
    target: tuple[float, float] | None = None
    template: str = "custom"

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("world bounds must have positive extent")
        if self.col_threshold <= 0:
            raise ValueError("col_threshold must be positive")
        if self.altitude <= 0:
            raise ValueError("altitude must be positive")

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


def _obb_params(obs: Obstacle) -> tuple[np.ndarray, tuple[float, float], float]:
    """Canonical oriented-box parameters (center, half extents, angle)."""
    if isinstance(obs, Rectangle):
        return np.asarray(obs.center, dtype=float), obs.half_extents, 0.0
    p0 = np.asarray(obs.p0, dtype=float)
    p1 = np.asarray(obs.p1, dtype=float)
    axis = p1 - p0
    length = float(np.hypot(*axis))
    angle = math.atan2(axis[1], axis[0])
    return (p0 + p1) / 2.0, (length / 2.0, obs.thickness / 2.0), angle


def obstacle_distance(point, obs: Obstacle) -> float:
    """Euclidean distance from a point to the obstacle boundary (0 inside)."""
    center, (hx, hy), ang = _obb_params(obs)
    p = np.asarray(point, dtype=float) - center
    c, s = math.cos(-ang), math.sin(-ang)
    lx = c * p[0] - s * p[1]
    ly = s * p[0] + c * p[1]
    dx = max(abs(lx) - hx, 0.0)
    dy = max(abs(ly) - hy, 0.0)
    return math.hypot(dx, dy)


def obstacle_ray_distances(origin, angles: np.ndarray, obs: Obstacle) -> np.ndarray:
    """Hit distances of rays from origin at the given angles; inf on miss.

    Slab intersection in the box's local frame, vectorized over angles.
    """
    center, (hx, hy), ang = _obb_params(obs)
    o = np.asarray(origin, dtype=float) - center
    c, s = math.cos(-ang), math.sin(-ang)
    ox = c * o[0] - s * o[1]
    oy = s * o[0] + c * o[1]
    world_dx, world_dy = np.cos(angles), np.sin(angles)
    dx = c * world_dx - s * world_dy
    dy = s * world_dx + c * world_dy

    with np.errstate(divide="ignore", invalid="ignore"):
        t1x = (-hx - ox) / dx
        t2x = (hx - ox) / dx
        t1y = (-hy - oy) / dy
        t2y = (hy - oy) / dy
    near_x = np.minimum(t1x, t2x)
    far_x = np.maximum(t1x, t2x)
    near_y = np.minimum(t1y, t2y)
    far_y = np.maximum(t1y, t2y)
    # Parallel rays: inside the slab -> unconstrained, outside -> never hit.
    para_x = dx == 0.0
    near_x = np.where(para_x, np.where(abs(ox) <= hx, -np.inf, np.inf), near_x)
    far_x = np.where(para_x, np.where(abs(ox) <= hx, np.inf, -np.inf), far_x)
    para_y = dy == 0.0
    near_y = np.where(para_y, np.where(abs(oy) <= hy, -np.inf, np.inf), near_y)
    far_y = np.where(para_y, np.where(abs(oy) <= hy, np.inf, -np.inf), far_y)

    t_enter = np.maximum(near_x, near_y)
    t_exit = np.minimum(far_x, far_y)
    hit = (t_exit >= np.maximum(t_enter, 0.0)) & (t_exit >= 0.0)
    dist = np.where(hit, np.maximum(t_enter, 0.0), np.inf)
    return dist


def step(pose: DronePose, action_index: int, world: WorldConfig) -> DronePose:
    """Apply one discrete action. Pure; boundaries are not enforced here."""
    if not isinstance(action_index, (int, np.integer)) or not 0 <= action_index <= 7:
        raise ValueError(f"action index must be in [0, 7], got {action_index!r}")
    dx, dy = ACTIONS[action_index]
    return DronePose(
        pose.x + dx,
        pose.y + dy,
        pose.z,
        pose.reported_x + dx,
        pose.reported_y + dy,
        pose.reported_z,
    )


def nearest_obstacle_distance(pose, world: WorldConfig) -> float:
    """Ground-truth distance to the closest obstacle boundary; inf if none."""
    if isinstance(pose, DronePose):
        point = (pose.x, pose.y)
    else:
        point = (pose[0], pose[1])
    if not world.obstacles:
        return float("inf")
    return min(obstacle_distance(point, obs) for obs in world.obstacles)


def occupancy_mask(world: WorldConfig, resolution: float, margin: float = 0.0) -> np.ndarray:
    """Boolean (height, width) grid of cells within ``margin`` of an obstacle.

    Cell (iy, ix) covers world x in [x_min + ix*res, ...); row 0 is y_min.
    """
    width = int(math.ceil((world.x_max - world.x_min) / resolution))
    height = int(math.ceil((world.y_max - world.y_min) / resolution))
    xs = world.x_min + (np.arange(width) + 0.5) * resolution
    ys = world.y_min + (np.arange(height) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    mask = np.zeros((height, width), dtype=bool)
    for obs in world.obstacles:
        center, (hx, hy), ang = _obb_params(obs)
        c, s = math.cos(-ang), math.sin(-ang)
        px = gx - center[0]
        py = gy - center[1]
        lx = c * px - s * py
        ly = s * px + c * py
        dx = np.maximum(np.abs(lx) - hx, 0.0)
        dy = np.maximum(np.abs(ly) - hy, 0.0)
        mask |= np.hypot(dx, dy) <= margin
    return mask


def _boundary_walls(cfg_bounds, thickness=0.4) -> list[Obstacle]:
    x_min, x_max, y_min, y_max = cfg_bounds
    cx, cy = (x_min + x_max) / 2.0, (y_min + y_max) / 2.0
    hx, hy = (x_max - x_min) / 2.0, (y_max - y_min) / 2.0
    t = thickness / 2.0
    return [
        Rectangle((cx, y_max - t), (hx, t)),
        Rectangle((cx, y_min + t), (hx, t)),
        Rectangle((x_min + t, cy), (t, hy)),
        Rectangle((x_max - t, cy), (t, hy)),
    ]


def spawn_scenario(seed: int, template: str = "farmland") -> WorldConfig:
    """Build a deterministic scenario from (seed, template).

    farmland: walled 40x40 field with fixed landmark blocks and 4-8 randomly
    placed thin bars that always leave the start and the canonical target
    clear. corridor: two long walls. empty: bounds only.
    """
    if template == "empty":
        return WorldConfig(obstacles=[], rng_seed=seed, template="empty", target=(12.0, 12.0))
    if template == "corridor":
        obstacles = [
            Rectangle((0.0, 3.2), (20.0, 0.2)),
            Rectangle((0.0, -3.2), (20.0, 0.2)),
        ]
        return WorldConfig(
            obstacles=obstacles, rng_seed=seed, template="corridor", target=(15.0, 0.0)
        )
    if template != "farmland":
        raise ValueError(f"unknown scenario template {template!r}")

    rng = np.random.default_rng(seed)
    bounds = (-20.0, 20.0, -20.0, 20.0)
    start = (0.0, 0.0)
    obstacles: list[Obstacle] = _boundary_walls(bounds)
    obstacles.append(Rectangle((-12.0, -12.0), (1.5, 1.2)))  # house
    obstacles.append(Rectangle((12.0, 12.0), (1.0, 1.0)))  # tower

    n_bars = int(rng.integers(4, 9))
    start_clearance = 2.5
    placed = 0
    attempts = 0
    while placed < n_bars and attempts < 200:
        attempts += 1
        cx, cy = rng.uniform(-16.0, 16.0, size=2)
        angle = rng.uniform(0.0, math.pi)
        length = rng.uniform(4.0, 10.0)
        dx, dy = math.cos(angle) * length / 2.0, math.sin(angle) * length / 2.0
        bar = Bar((cx - dx, cy - dy), (cx + dx, cy + dy), thickness=0.3)
        if obstacle_distance(start, bar) < start_clearance:
            continue
        obstacles.append(bar)
        placed += 1

    cfg = WorldConfig(
        obstacles=obstacles,
        rng_seed=seed,
        template="farmland",
        start=start,
    )
    # The canonical mission target is a genuine cross-field flight, well away
    # from the spawn point.
    cfg.target = sample_clear_target(cfg, rng, min_from_start=6.0)
    return cfg


def sample_clear_target(
    world: WorldConfig,
    rng: np.random.Generator,
    target_range: float = 12.0,
    min_from_start: float = 3.0,
    clearance: float = 2.0,
) -> tuple[float, float]:
    """Uniform target in the configured square, away from start and obstacles."""
    for _ in range(1000):
        tx, ty = rng.uniform(-target_range, target_range, size=2)
        if math.hypot(tx - world.start[0], ty - world.start[1]) <= min_from_start:
            continue
        if nearest_obstacle_distance((tx, ty), world) <= clearance:
            continue
        return (float(tx), float(ty))
    raise RuntimeError("could not sample a clear target after 1000 tries")


# --- scenario JSON ---------------------------------------------------------


def _obstacle_to_json(obs: Obstacle) -> dict:
    if isinstance(obs, Rectangle):
        return {
            "kind": "rectangle",
            "center": list(obs.center),
            "half_extents": list(obs.half_extents),
        }
    return {"kind": "bar", "p0": list(obs.p0), "p1": list(obs.p1), "thickness": obs.thickness}


def _obstacle_from_json(data: dict) -> Obstacle:
    kind = data.get("kind")
    if kind == "rectangle":
        return Rectangle(tuple(data["center"]), tuple(data["half_extents"]))
    if kind == "bar":
        return Bar(tuple(data["p0"]), tuple(data["p1"]), float(data["thickness"]))
    raise ValueError(f"unknown obstacle kind {kind!r}")


def scenario_to_json(cfg: WorldConfig) -> dict:
    return {
        "version": SCENARIO_SCHEMA_VERSION,
        "template": cfg.template,
        "seed": cfg.rng_seed,
        "bounds": {
            "x_min": cfg.x_min,
            "x_max": cfg.x_max,
            "y_min": cfg.y_min,
            "y_max": cfg.y_max,
        },
        "altitude": cfg.altitude,
        "col_threshold": cfg.col_threshold,
        "reset_lag": {"enabled": cfg.reset_lag_enabled, "step": cfg.reset_lag_step},
        "start": list(cfg.start),
        "target": list(cfg.target) if cfg.target is not None else None,
        "obstacles": [_obstacle_to_json(o) for o in cfg.obstacles],
    }


def scenario_from_json(data: dict) -> WorldConfig:
    try:
        bounds = data["bounds"]
        cfg = WorldConfig(
            x_min=float(bounds["x_min"]),
            x_max=float(bounds["x_max"]),
            y_min=float(bounds["y_min"]),
            y_max=float(bounds["y_max"]),
            altitude=float(data.get("altitude", DEFAULT_ALTITUDE)),
            obstacles=[_obstacle_from_json(o) for o in data.get("obstacles", [])],
            col_threshold=float(data.get("col_threshold", 0.8)),
            reset_lag_enabled=bool(data.get("reset_lag", {}).get("enabled", True)),
            reset_lag_step=float(data.get("reset_lag", {}).get("step", 1.0)),
            rng_seed=int(data.get("seed", 0)),
            start=tuple(data.get("start", (0.0, 0.0))),
            target=tuple(data["target"]) if data.get("target") is not None else None,
            template=str(data.get("template", "custom")),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"invalid scenario file: {exc}") from exc
    return cfg


def save_scenario(cfg: WorldConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_json(cfg), fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> WorldConfig:
    with open(path) as fh:
        return scenario_from_json(json.load(fh))


# --- runtime world ---------------------------------------------------------


class SimWorld:
    """Owns the drone pose, the simulated clock, and the reset emulation.

    During a lagged reset the true pose snaps to the spawn point while the
    reported pose walks back one axis at a time (x, then y, then z) at
    ``reset_lag_step`` per poll, matching the step-by-step convergence the
    control layer observes. Handing control back while the reported pose is
    still next to an obstacle is recorded as a post-episode collision event.
    """

    def __init__(self, config: WorldConfig):
        self.config = config
        spawn = DronePose.at(config.start[0], config.start[1], config.altitude)
        self.pose = spawn
        self.clock = 0.0
        self.resetting = False
        self.active_setpoint: tuple[float, float, float] | None = None
        self.collision_events: list[dict] = []

    @property
    def reset_position(self) -> tuple[float, float, float]:
        return (0.0, 0.0, self.config.altitude)

    def place(self, x: float, y: float) -> None:
        if self.resetting:
            raise RuntimeError("cannot place the drone during an active reset")
        self.pose = DronePose.at(x, y, self.config.altitude)

    def apply_action(self, action_index: int) -> DronePose:
        if self.resetting:
            raise RuntimeError("cannot act during an active reset")
        self.pose = step(self.pose, action_index, self.config)
        return self.pose

    def begin_reset(self) -> None:
        rx, ry, rz = self.reset_position
        self.pose = DronePose(rx, ry, rz, self.pose.reported_x, self.pose.reported_y, self.pose.reported_z)
        self.resetting = True
        self.active_setpoint = self.reset_position
        if not self.config.reset_lag_enabled:
            # Snap happens on the next poll, mirroring a one-message delay.
            return

    def command_move(self, target: tuple[float, float, float]) -> None:
        self.active_setpoint = tuple(float(v) for v in target)

    def poll_reported_pose(self) -> DronePose:
        self.clock += POLL_DT
        if not self.resetting:
            return self.pose
        if not self.config.reset_lag_enabled:
            rx, ry, rz = self.reset_position
            self.pose = DronePose.at(rx, ry, rz)
            return self.pose
        rx, ry, rz = self.reset_position
        cur = [self.pose.reported_x, self.pose.reported_y, self.pose.reported_z]
        goal = [rx, ry, rz]
        step_len = self.config.reset_lag_step
        # One axis converges per poll: x first, then y, then z.
        for axis in range(3):
            delta = goal[axis] - cur[axis]
            if abs(delta) > 1e-12:
                move = math.copysign(min(step_len, abs(delta)), delta)
                cur[axis] += move
                break
        self.pose = DronePose(rx, ry, rz, cur[0], cur[1], cur[2])
        return self.pose

    def end_reset(self) -> None:
        """Hand control back; logs an event if the phantom pose is unsafe."""
        if self.resetting:
            reported_xy = (self.pose.reported_x, self.pose.reported_y)
            dist = nearest_obstacle_distance(reported_xy, self.config)
            if dist <= self.config.col_threshold:
                self.collision_events.append(
                    {
                        "clock": self.clock,
                        "reported": reported_xy,
                        "obstacle_distance": dist,
                    }
                )
        rx, ry, rz = self.reset_position
        self.pose = DronePose.at(rx, ry, rz)
        self.resetting = False
        self.active_setpoint = None
