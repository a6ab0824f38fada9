"""Desk-scale 2D-LiDAR drone navigation stack.

Occupancy-map construction from simulated scans, random-tree mission
planning with pixel-to-world waypoint conversion, and a dueling double-DQN
dynamic obstacle handler, all driven by one deterministic master seed.
"""

__version__ = "0.1.0"

from .world import (
    ACTIONS,
    Bar,
    DronePose,
    EpisodeStatus,
    Rectangle,
    SimWorld,
    WorldConfig,
    nearest_obstacle_distance,
    spawn_scenario,
    step,
)

__all__ = [
    "ACTIONS",
    "Bar",
    "DronePose",
    "EpisodeStatus",
    "Rectangle",
    "SimWorld",
    "WorldConfig",
    "nearest_obstacle_distance",
    "spawn_scenario",
    "step",
    "__version__",
]
