"""Occupancy-grid construction from scans and map-level geometry estimates.

Log-odds cells, a conservative max-pooled resolution pyramid, a windowed
coarse-to-fine scan aligner, bounding-corner extraction and boundary-line
rotation estimation. Pixel coordinates are (px, py) = continuous cell units
measured from the grid origin (world position of cell (0, 0)'s corner); cell
indices are their floors. PGM exports are written top row = highest y.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .lidar import RawScan

L_MIN = -4.0
L_MAX = 4.0
LOG_ODDS_OCCUPIED = 0.85
LOG_ODDS_FREE = -0.4
OCCUPIED_THRESHOLD = 1.0
FREE_THRESHOLD = -1.0

PGM_OCCUPIED = 0
PGM_UNKNOWN = 128
PGM_FREE = 255


@dataclass
class OccupancyGrid:
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray  # (height, width) log-odds

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells = np.asarray(self.cells, dtype=float)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @classmethod
    def blank(cls, width: int, height: int, resolution: float, origin=(0.0, 0.0)):
        return cls(resolution, tuple(origin), np.zeros((height, width)))

    @classmethod
    def for_bounds(cls, x_min, x_max, y_min, y_max, resolution):
        width = int(math.ceil((x_max - x_min) / resolution))
        height = int(math.ceil((y_max - y_min) / resolution))
        return cls.blank(width, height, resolution, (x_min, y_min))

    def world_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.origin[0]) / self.resolution, (y - self.origin[1]) / self.resolution)

    def pixel_to_world(self, px: float, py: float) -> tuple[float, float]:
        return (self.origin[0] + px * self.resolution, self.origin[1] + py * self.resolution)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        px, py = self.world_to_pixel(x, y)
        return (int(math.floor(px)), int(math.floor(py)))

    def in_grid(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def classes(self) -> np.ndarray:
        """Per-cell class: +1 occupied, 0 unknown, -1 free."""
        out = np.zeros_like(self.cells, dtype=np.int8)
        out[self.cells > OCCUPIED_THRESHOLD] = 1
        out[self.cells < FREE_THRESHOLD] = -1
        return out

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.origin, self.cells.copy())


@dataclass
class MapPyramid:
    levels: list  # level 0 finest; each coarser level doubles resolution


@dataclass(frozen=True)
class MapCorners:
    upper_left: tuple[float, float]
    upper_right: tuple[float, float]
    lower_right: tuple[float, float]
    lower_left: tuple[float, float]

    def as_list(self):
        return [self.upper_left, self.upper_right, self.lower_right, self.lower_left]


@dataclass(frozen=True)
class PoseEstimate:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        # normalize theta to (-pi, pi]
        t = math.remainder(self.theta, 2 * math.pi)
        if t <= -math.pi:
            t += 2 * math.pi
        object.__setattr__(self, "theta", t)


@dataclass(frozen=True)
class SearchWindow:
    half_x: float = 0.5
    half_y: float = 0.5
    half_theta: float = math.radians(10.0)


@dataclass(frozen=True)
class MatchResult:
    pose: PoseEstimate
    score: float
    degenerate: bool = False


@dataclass(frozen=True)
class RotationEstimate:
    angle: float  # radians
    line_angles: tuple
    fallback: bool = False


def bresenham(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    """Integer line cells from a to b inclusive."""
    x0, y0 = a
    x1, y1 = b
    cells = []
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return cells


def integrate_scan(grid: OccupancyGrid, pose: PoseEstimate, scan: RawScan) -> OccupancyGrid:
    """Fold one scan into the grid.

    Cells strictly between the sensor cell and each beam endpoint get the
    free-space decrement; the endpoint cell gets the occupied increment when
    the beam actually hit something (range below max_range). Mutates and
    returns the grid.
    """
    sensor_cell = grid.cell_of(pose.x, pose.y)
    if not grid.in_grid(*sensor_cell):
        raise ValueError("pose outside grid extents")
    for deg in range(len(scan.ranges)):
        r = scan.ranges[deg]
        ang = math.radians(deg) + pose.theta
        ex = pose.x + r * math.cos(ang)
        ey = pose.y + r * math.sin(ang)
        end_cell = grid.cell_of(ex, ey)
        ray = bresenham(sensor_cell, end_cell)
        hit = r < scan.max_range - 1e-9
        for ix, iy in ray[1:-1]:
            if grid.in_grid(ix, iy):
                grid.cells[iy, ix] = max(L_MIN, grid.cells[iy, ix] + LOG_ODDS_FREE)
        if hit and len(ray) > 1 and grid.in_grid(*end_cell):
            ix, iy = end_cell
            grid.cells[iy, ix] = min(L_MAX, grid.cells[iy, ix] + LOG_ODDS_OCCUPIED)
    return grid


def build_pyramid(grid: OccupancyGrid, n_levels: int) -> MapPyramid:
    """Max-pooled pyramid: a cell occupied at one level stays occupied above."""
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    if n_levels > math.log2(min(grid.width, grid.height)):
        raise ValueError("n_levels exceeds log2 of the smallest grid dimension")
    levels = [grid]
    cur = grid
    for _ in range(n_levels - 1):
        h2 = (cur.height + 1) // 2
        w2 = (cur.width + 1) // 2
        padded = np.full((h2 * 2, w2 * 2), L_MIN)
        padded[: cur.height, : cur.width] = cur.cells
        pooled = padded.reshape(h2, 2, w2, 2).max(axis=(1, 3))
        cur = OccupancyGrid(cur.resolution * 2, cur.origin, pooled)
        levels.append(cur)
    return MapPyramid(levels=levels)


def _score_endpoints(grid: OccupancyGrid, ex: np.ndarray, ey: np.ndarray) -> float:
    ix = np.floor((ex - grid.origin[0]) / grid.resolution).astype(int)
    iy = np.floor((ey - grid.origin[1]) / grid.resolution).astype(int)
    inside = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    score = grid.cells[iy[inside], ix[inside]].sum()
    return float(score + L_MIN * (len(ex) - inside.sum()))


def match_scan(
    pyramid: MapPyramid,
    scan: RawScan,
    init: PoseEstimate,
    window: SearchWindow = SearchWindow(),
) -> MatchResult:
    """Coarse-to-fine exhaustive alignment of a scan against the map.

    Maximizes summed endpoint occupancy over (dx, dy, dtheta) inside the
    window, halving the refinement window per pyramid level. Ties resolve to
    the smallest perturbation, then lexicographically.
    """
    if not pyramid.levels:
        raise ValueError("empty pyramid")
    hit_mask = scan.ranges < scan.max_range - 1e-9
    if not hit_mask.any():
        return MatchResult(init, float("-inf"), degenerate=True)
    r = scan.ranges[hit_mask]
    beam_angles = np.deg2rad(np.arange(len(scan.ranges), dtype=float))[hit_mask]

    best = (0.0, 0.0, 0.0)
    levels = list(reversed(pyramid.levels))  # coarsest first
    for li, level in enumerate(levels):
        shrink = 2**li  # full window at the coarsest level, halved per refinement
        hx, hy = window.half_x / shrink, window.half_y / shrink
        ht = window.half_theta / shrink
        step_xy = level.resolution / 2.0
        step_t = max(ht / 4.0, 1e-6)
        dxs = _centered_steps(best[0], hx, step_xy, window.half_x)
        dys = _centered_steps(best[1], hy, step_xy, window.half_y)
        dts = _centered_steps(best[2], ht, step_t, window.half_theta)

        candidates = []
        for dt in dts:
            ang = beam_angles + init.theta + dt
            px = r * np.cos(ang)
            py = r * np.sin(ang)
            for dx in dxs:
                for dy in dys:
                    score = _score_endpoints(level, init.x + dx + px, init.y + dy + py)
                    candidates.append((score, dx, dy, dt))
        best = _select_best(candidates)
    pose = PoseEstimate(init.x + best[0], init.y + best[1], init.theta + best[2])
    final_score = next(s for s, dx, dy, dt in candidates if (dx, dy, dt) == best)
    return MatchResult(pose, final_score, degenerate=False)


def _centered_steps(center: float, half: float, step: float, outer: float) -> np.ndarray:
    n = max(1, int(round(half / step)))
    vals = center + np.arange(-n, n + 1) * step
    return np.clip(vals, -outer, outer)


def _select_best(candidates) -> tuple[float, float, float]:
    best_key = None
    best = None
    for score, dx, dy, dt in candidates:
        key = (-score, dx * dx + dy * dy + dt * dt, dx, dy, dt)
        if best_key is None or key < best_key:
            best_key = key
            best = (dx, dy, dt)
    return best


def occupied_points(grid: OccupancyGrid) -> np.ndarray:
    """Pixel-space centers of occupied cells, shape (n, 2)."""
    iy, ix = np.nonzero(grid.cells > OCCUPIED_THRESHOLD)
    return np.column_stack((ix + 0.5, iy + 0.5))


def estimate_rotation(grid: OccupancyGrid, weights=(1 / 3, 1 / 3, 1 / 3)) -> RotationEstimate:
    """Map tilt from the axis deviations of the three longest boundary lines.

    Straight-line accumulation (Hough) over occupied cells; each peak line's
    deviation from the nearest axis contributes with its normalized weight.
    Falls back, flagged, to the dominant line when fewer than three are found.
    """
    pts = occupied_points(grid)
    if len(pts) == 0:
        raise ValueError("no occupied cells")
    if len(weights) != 3:
        raise ValueError("exactly three line weights expected")

    theta_step = math.radians(0.25)
    thetas = np.arange(0.0, math.pi, theta_step)
    rho = pts[:, 0:1] * np.cos(thetas) + pts[:, 1:2] * np.sin(thetas)
    rho_min = rho.min()
    rho_idx = np.floor(rho - rho_min).astype(int)
    n_rho = rho_idx.max() + 1
    acc = np.zeros((len(thetas), n_rho), dtype=np.int32)
    flat = np.ravel_multi_index(
        (np.broadcast_to(np.arange(len(thetas)), rho_idx.shape).ravel(), rho_idx.ravel()),
        acc.shape,
    )
    np.add.at(acc.ravel(), flat, 1)

    min_votes = max(8, int(0.02 * len(pts)))
    peaks = []
    work = acc.copy()
    for _ in range(3):
        t_i, r_i = np.unravel_index(np.argmax(work), work.shape)
        votes = work[t_i, r_i]
        if votes < min_votes:
            break
        peaks.append(thetas[t_i])
        t_lo, t_hi = max(0, t_i - 12), min(len(thetas), t_i + 13)
        r_lo, r_hi = max(0, r_i - 5), min(n_rho, r_i + 6)
        work[t_lo:t_hi, r_lo:r_hi] = 0
    if not peaks:
        raise ValueError("no boundary lines detected")

    def axis_deviation(angle: float) -> float:
        return math.remainder(angle, math.pi / 2)

    devs = [axis_deviation(t) for t in peaks]
    if len(devs) < 3:
        return RotationEstimate(devs[0], tuple(devs), fallback=True)
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        raise ValueError("weights must sum to a positive value")
    w = w / w.sum()
    angle = float(np.dot(w, devs[:3]))
    return RotationEstimate(angle, tuple(devs[:3]), fallback=False)


def extract_corners(grid: OccupancyGrid, rotation: float | None = None) -> MapCorners:
    """Bounding-box corners of the occupied region, in pixel coordinates.

    The box is axis-aligned in the frame de-rotated by the rotation estimate,
    then mapped back, which approximates the minimum-area box for wall-built
    maps. Degenerate (zero-area) boxes are rejected.
    """
    pts = occupied_points(grid)
    if len(pts) == 0:
        raise ValueError("no occupied cells")
    theta = estimate_rotation(grid).angle if rotation is None else rotation
    c, s = math.cos(-theta), math.sin(-theta)
    rot = np.array([[c, -s], [s, c]])
    local = pts @ rot.T
    x0, y0 = local.min(axis=0)
    x1, y1 = local.max(axis=0)
    if (x1 - x0) * (y1 - y0) <= 0:
        raise ValueError("occupied region has zero area")
    back = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    corners_local = np.array([(x0, y1), (x1, y1), (x1, y0), (x0, y0)])
    ul, ur, lr, ll = (tuple(map(float, p)) for p in corners_local @ back.T)
    return MapCorners(ul, ur, lr, ll)


# --- export / import -------------------------------------------------------


def save_pgm(grid: OccupancyGrid, path) -> None:
    """Binary 8-bit PGM: 0 occupied, 255 free, 128 unknown, top row = max y."""
    classes = grid.classes()
    img = np.full(classes.shape, PGM_UNKNOWN, dtype=np.uint8)
    img[classes == 1] = PGM_OCCUPIED
    img[classes == -1] = PGM_FREE
    img = img[::-1, :]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_pgm(path, resolution: float = 1.0, origin=(0.0, 0.0)) -> OccupancyGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError("expected 8-bit PGM")
    raw = np.frombuffer(parts[3][: width * height], dtype=np.uint8)
    if raw.size != width * height:
        raise ValueError("truncated PGM payload")
    img = raw.reshape(height, width)[::-1, :]
    cells = np.zeros((height, width))
    cells[img <= PGM_OCCUPIED + 63] = L_MAX
    cells[img >= PGM_FREE - 63] = L_MIN
    return OccupancyGrid(resolution, tuple(origin), cells)


def save_sidecar(path, grid: OccupancyGrid, corners: MapCorners | None, rotation: RotationEstimate | None, extra: dict | None = None) -> None:
    data = {
        "resolution": grid.resolution,
        "origin": list(grid.origin),
        "width": grid.width,
        "height": grid.height,
        "corners": [list(c) for c in corners.as_list()] if corners else None,
        "rotation": (
            {"angle": rotation.angle, "line_angles": list(rotation.line_angles), "fallback": rotation.fallback}
            if rotation
            else None
        ),
    }
    data.update(extra or {})
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_sidecar(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
