"""Static path planning on the occupancy grid and pixel-to-world conversion.

The tree planner samples free space (with a small goal bias), steers by a
bounded step toward each sample, keeps only collision-free edges, and stops
as soon as a node lands within the test range of the target with a clear
final hop. Unknown cells are treated as obstacles by default.

Waypoint conversion carries two modes. ``literal`` evaluates the
radial-plus-rotation formula exactly as written, which stretches points on
the +x axis by a factor of two; ``affine`` applies the evident geometric
intent (rotate, scale per axis, translate to the world minimum corner) and
is what the navigation pipeline uses. The mode travels with the output.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .mapping import FREE_THRESHOLD, OCCUPIED_THRESHOLD, MapCorners, OccupancyGrid


@dataclass(frozen=True)
class RRTConfig:
    num_iterations: int = 2000
    step_size: float = 8.0  # pixels
    test_range: float = 8.0  # pixels
    rng_seed: int = 0
    goal_bias: float = 0.05

    def __post_init__(self):
        if self.num_iterations <= 0 or self.step_size <= 0 or self.test_range <= 0:
            raise ValueError("num_iterations, step_size and test_range must be positive")


@dataclass
class RRTree:
    positions: list  # (px, py) per node, node 0 = start
    parents: list  # parent index per node, -1 for the root

    def add(self, position, parent: int) -> int:
        self.positions.append((float(position[0]), float(position[1])))
        self.parents.append(parent)
        return len(self.positions) - 1


@dataclass
class PlanResult:
    found: bool
    path: list | None  # pixel waypoints start..target when found
    tree: RRTree
    iterations: int


@dataclass(frozen=True)
class WorldPath:
    points: list
    mode: str


@dataclass(frozen=True)
class TransformConfig:
    corners: MapCorners
    x_min_g: float
    x_max_g: float
    y_min_g: float
    y_max_g: float
    theta: float = 0.0
    mode: str = "affine"  # literal | affine

    def __post_init__(self):
        if self.mode not in ("literal", "affine"):
            raise ValueError(f"unknown transform mode {self.mode!r}")
        if self.x_max_g <= self.x_min_g or self.y_max_g <= self.y_min_g:
            raise ValueError("world spans must be positive")
        if self._top_len() <= 0 or self._side_len() <= 0:
            raise ValueError("corner edges must have positive length")

    def _top_len(self) -> float:
        return math.dist(self.corners.upper_right, self.corners.upper_left)

    def _side_len(self) -> float:
        return math.dist(self.corners.upper_right, self.corners.lower_right)

    def scale_x(self) -> float:
        return (self.x_max_g - self.x_min_g) / self._top_len()

    def scale_y(self) -> float:
        return (self.y_max_g - self.y_min_g) / self._side_len()


def _cell_blocked(grid: OccupancyGrid, ix: int, iy: int, unknown_as_obstacle: bool) -> bool:
    if not grid.in_grid(ix, iy):
        return True
    v = grid.cells[iy, ix]
    if v > OCCUPIED_THRESHOLD:
        return True
    return unknown_as_obstacle and v >= FREE_THRESHOLD


def traversed_cells(a, b) -> list:
    """Every grid cell the segment a->b touches (supercover traversal).

    Exact lattice-point crossings include both side cells, erring on the
    conservative side.
    """
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    ix, iy = int(math.floor(ax)), int(math.floor(ay))
    cells = [(ix, iy)]
    dx, dy = bx - ax, by - ay
    n_steps = abs(int(math.floor(bx)) - ix) + abs(int(math.floor(by)) - iy)
    if n_steps == 0:
        return cells
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    if dx != 0:
        t_delta_x = abs(1.0 / dx)
        t_max_x = ((ix + 1 if dx > 0 else ix) - ax) / dx
    else:
        t_delta_x = t_max_x = math.inf
    if dy != 0:
        t_delta_y = abs(1.0 / dy)
        t_max_y = ((iy + 1 if dy > 0 else iy) - ay) / dy
    else:
        t_delta_y = t_max_y = math.inf
    for _ in range(2 * n_steps + 4):
        if min(t_max_x, t_max_y) > 1.0:
            break
        if t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_delta_x
            cells.append((ix, iy))
        elif t_max_y < t_max_x:
            iy += step_y
            t_max_y += t_delta_y
            cells.append((ix, iy))
        else:
            cells.append((ix + step_x, iy))
            cells.append((ix, iy + step_y))
            ix += step_x
            iy += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
            cells.append((ix, iy))
    return cells


def segment_free(grid: OccupancyGrid, a, b, unknown_as_obstacle: bool = True) -> bool:
    """True iff no cell touched by the segment a->b is blocked."""
    for ix, iy in traversed_cells(a, b):
        if _cell_blocked(grid, ix, iy, unknown_as_obstacle):
            return False
    return True


def plan_rrt(grid: OccupancyGrid, start, target, cfg: RRTConfig) -> PlanResult:
    """Grow a random tree from start until a node connects to the target.

    Returns a no-path result (not an error) when the iteration budget runs
    out; occupied start or target cells are contract violations.
    """
    start = (float(start[0]), float(start[1]))
    target = (float(target[0]), float(target[1]))
    for name, p in (("start", start), ("target", target)):
        ix, iy = int(math.floor(p[0])), int(math.floor(p[1]))
        if _cell_blocked(grid, ix, iy, unknown_as_obstacle=True):
            raise ValueError(f"{name} cell is not free")

    rng = np.random.default_rng(cfg.rng_seed)
    free_iy, free_ix = np.nonzero(grid.cells < FREE_THRESHOLD)
    if len(free_ix) == 0:
        raise ValueError("grid has no free cells to sample")

    tree = RRTree(positions=[start], parents=[-1])
    pos_arr = np.empty((cfg.num_iterations + 2, 2))
    pos_arr[0] = start
    n_nodes = 1

    for iteration in range(1, cfg.num_iterations + 1):
        if rng.random() < cfg.goal_bias:
            sample = target
        else:
            k = int(rng.integers(len(free_ix)))
            sample = (free_ix[k] + 0.5, free_iy[k] + 0.5)
        deltas = pos_arr[:n_nodes] - sample
        nearest_idx = int(np.argmin(np.einsum("ij,ij->i", deltas, deltas)))
        nearest = pos_arr[nearest_idx]
        dist = math.dist(nearest, sample)
        if dist < 1e-9:
            continue
        scale = min(cfg.step_size, dist) / dist
        new = (nearest[0] + (sample[0] - nearest[0]) * scale,
               nearest[1] + (sample[1] - nearest[1]) * scale)
        if not segment_free(grid, nearest, new):
            continue
        node_idx = tree.add(new, nearest_idx)
        pos_arr[n_nodes] = new
        n_nodes += 1
        if math.dist(new, target) <= cfg.test_range and segment_free(grid, new, target):
            goal_idx = tree.add(target, node_idx)
            path = _retrace(tree, goal_idx)
            return PlanResult(found=True, path=path, tree=tree, iterations=iteration)
    return PlanResult(found=False, path=None, tree=tree, iterations=cfg.num_iterations)


def _retrace(tree: RRTree, node_idx: int) -> list:
    path = []
    idx = node_idx
    while idx != -1:
        path.append(tree.positions[idx])
        idx = tree.parents[idx]
    path.reverse()
    return path


def transform_point(p, cfg: TransformConfig) -> tuple[float, float]:
    px, py = float(p[0]), float(p[1])
    c, s = math.cos(cfg.theta), math.sin(cfg.theta)
    x_pr = px * c - py * s
    y_pr = px * s + py * c
    sx, sy = cfg.scale_x(), cfg.scale_y()
    if cfg.mode == "literal":
        r = math.hypot(px, py)
        return ((r * c + x_pr) * sx, (r * s + y_pr) * sy)
    return (x_pr * sx + cfg.x_min_g, y_pr * sy + cfg.y_min_g)


def invert_affine_point(p_world, cfg: TransformConfig) -> tuple[float, float]:
    """Inverse of the affine mode; undefined for literal."""
    if cfg.mode != "affine":
        raise ValueError("only the affine mode is invertible")
    x_pr = (float(p_world[0]) - cfg.x_min_g) / cfg.scale_x()
    y_pr = (float(p_world[1]) - cfg.y_min_g) / cfg.scale_y()
    c, s = math.cos(-cfg.theta), math.sin(-cfg.theta)
    return (x_pr * c - y_pr * s, x_pr * s + y_pr * c)


def transform_path(path, cfg: TransformConfig) -> WorldPath:
    return WorldPath(points=[transform_point(p, cfg) for p in path], mode=cfg.mode)


def verify_path(grid: OccupancyGrid, path, cfg: RRTConfig) -> bool:
    """Post-hoc soundness: every hop free and within the configured bounds."""
    if path is None or len(path) < 2:
        return False
    for a, b in zip(path, path[1:]):
        if not segment_free(grid, a, b):
            return False
    hops = [math.dist(a, b) for a, b in zip(path, path[1:])]
    body, last = hops[:-1], hops[-1]
    tol = 1e-9
    return all(h <= cfg.step_size + tol for h in body) and last <= cfg.test_range + tol


def export_path_csv(path_px, path_world, out_path) -> None:
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "px_x", "px_y", "world_x", "world_y"])
        for i, (pp, wp) in enumerate(zip(path_px, path_world)):
            writer.writerow([i, f"{pp[0]:.6f}", f"{pp[1]:.6f}", f"{wp[0]:.6f}", f"{wp[1]:.6f}"])


def export_tree_json(tree: RRTree, out_path) -> None:
    edges = [
        {"from": tree.positions[parent], "to": tree.positions[i]}
        for i, parent in enumerate(tree.parents)
        if parent != -1
    ]
    with open(out_path, "w") as fh:
        json.dump({"nodes": len(tree.positions), "edges": edges}, fh)
        fh.write("\n")
