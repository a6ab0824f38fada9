"""Synthetic room geometry shared by the mapping tests.

The analytic classifier is the independent oracle: a cell is occupied when
its center lies inside a wall band, free inside the room interior, unknown
outside.
"""

import math

from lidarnav.lidar import cast_scan
from lidarnav.mapping import OccupancyGrid, PoseEstimate, integrate_scan
from lidarnav.world import Bar, DronePose, Rectangle, WorldConfig

ROOM_W = 10.0
ROOM_H = 8.0
WALL_T = 0.2

ROOM_POSES = [
    (2, 2), (5, 4), (8, 6), (3, 6), (7, 2),
    (5, 1), (1, 4), (9, 4), (5, 7), (6, 5),
]


def make_room_world() -> WorldConfig:
    """Axis-aligned rectangular room, interior (0,0)..(10,8)."""
    walls = [
        Rectangle((ROOM_W / 2, ROOM_H + WALL_T / 2), (ROOM_W / 2 + WALL_T, WALL_T / 2)),
        Rectangle((ROOM_W / 2, -WALL_T / 2), (ROOM_W / 2 + WALL_T, WALL_T / 2)),
        Rectangle((-WALL_T / 2, ROOM_H / 2), (WALL_T / 2, ROOM_H / 2 + WALL_T)),
        Rectangle((ROOM_W + WALL_T / 2, ROOM_H / 2), (WALL_T / 2, ROOM_H / 2 + WALL_T)),
    ]
    return WorldConfig(
        x_min=-2, x_max=12, y_min=-2, y_max=10, obstacles=walls, reset_lag_enabled=False
    )


def make_rotated_room_world(rotation_deg: float) -> WorldConfig:
    """Room walls built from bars, rotated about the origin."""

    def rot(p):
        a = math.radians(rotation_deg)
        return (p[0] * math.cos(a) - p[1] * math.sin(a), p[0] * math.sin(a) + p[1] * math.cos(a))

    corners = [(-5, -4), (5, -4), (5, 4), (-5, 4)]
    rotated = [rot(p) for p in corners]
    walls = [Bar(rotated[i], rotated[(i + 1) % 4], WALL_T) for i in range(4)]
    return WorldConfig(
        x_min=-10, x_max=10, y_min=-10, y_max=10, obstacles=walls, reset_lag_enabled=False
    )


def scan_room(world: WorldConfig, grid: OccupancyGrid, poses, max_range=25.0):
    for x, y in poses:
        scan = cast_scan(world, DronePose.at(x, y, world.altitude), max_range=max_range)
        integrate_scan(grid, PoseEstimate(x, y, 0.0), scan)
    return grid


def analytic_room_class(x: float, y: float) -> int:
    """+1 wall band, -1 interior, 0 outside."""
    in_wall_x = -WALL_T <= x <= ROOM_W + WALL_T
    in_wall_y = -WALL_T <= y <= ROOM_H + WALL_T
    interior = 0.0 < x < ROOM_W and 0.0 < y < ROOM_H
    if interior:
        return -1
    if in_wall_x and in_wall_y:
        return 1
    return 0
