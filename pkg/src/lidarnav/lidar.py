"""Simulated 360-degree planar LiDAR and the state it feeds the agent.

Sector convention: the 360 beams (one per degree, bearing 0 along +x,
counter-clockwise) are reduced to 8 values by thresholded min-pooling. Sector
``i`` is the 45-degree arc centered on the displacement direction of action
``i``, half-open on the upper edge so every beam belongs to exactly one
sector. The figure-label ambiguity between "backward right" and the
[1, -1, 0] action is resolved in favour of action alignment: sector 0 is the
arc around (+1, -1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .world import DronePose, WorldConfig, obstacle_ray_distances

N_BEAMS = 360
N_SECTORS = 8

# Action index owning each 45-degree arc, by arc number counted CCW from 0deg.
_ARC_TO_SECTOR = (1, 2, 3, 4, 5, 6, 7, 0)


def _beam_sectors() -> np.ndarray:
    arcs = ((np.arange(N_BEAMS) + 22.5) % 360 // 45).astype(int)
    return np.array([_ARC_TO_SECTOR[a] for a in arcs])


BEAM_TO_SECTOR = _beam_sectors()


@dataclass(frozen=True)
class RawScan:
    ranges: np.ndarray  # 360 values, meters, index = bearing degree
    max_range: float

    def __post_init__(self):
        if self.ranges.shape != (N_BEAMS,):
            raise ValueError(f"scan must have exactly {N_BEAMS} beams")
        if np.any(self.ranges <= 0) or np.any(self.ranges > self.max_range + 1e-9):
            raise ValueError("beam ranges must lie in (0, max_range]")


@dataclass(frozen=True)
class NoiseModel:
    """Spurious short returns driven by simulated attitude disturbance.

    The per-beam replacement probability is p_noise scaled by the current
    disturbance magnitude, capped at attitude_gain.
    """

    p_noise: float = 0.02
    attitude_gain: float = 3.0
    short_min: float = 0.1


@dataclass(frozen=True)
class MotionReading:
    linear_velocity: float
    roll: float
    pitch: float


@dataclass(frozen=True)
class FilterState:
    lidar_data_t: np.ndarray  # previous 8 pooled values
    index_list: np.ndarray  # 8 counters
    det_range: float
    vl_thr: float
    r_thr: float
    p_thr: float
    detect_flag: bool
    first: bool


def make_filter_state(
    det_range: float = 6.0, vl_thr: float = 0.3, r_thr: float = 0.1, p_thr: float = 0.1
) -> FilterState:
    if det_range <= 0:
        raise ValueError("det_range must be positive")
    return FilterState(
        lidar_data_t=np.full(N_SECTORS, float(det_range)),
        index_list=np.zeros(N_SECTORS),
        det_range=float(det_range),
        vl_thr=vl_thr,
        r_thr=r_thr,
        p_thr=p_thr,
        detect_flag=True,
        first=True,
    )


def cast_scan(
    world: WorldConfig,
    pose: DronePose,
    noise: NoiseModel | None = None,
    rng: np.random.Generator | None = None,
    max_range: float = 12.0,
    yaw: float = 0.0,
    disturbance: float = 0.0,
) -> RawScan:
    """Cast 360 rays against the world geometry.

    ``yaw`` rotates the whole beam fan (sensor attitude); ``disturbance``
    scales the noise probability, emulating degraded returns while the
    vehicle is maneuvering.
    """
    if not world.contains(pose.x, pose.y):
        raise ValueError("scan undefined: pose outside world bounds")
    angles = np.deg2rad(np.arange(N_BEAMS, dtype=float)) + yaw
    ranges = np.full(N_BEAMS, float(max_range))
    for obs in world.obstacles:
        ranges = np.minimum(ranges, obstacle_ray_distances((pose.x, pose.y), angles, obs))
    ranges = np.minimum(ranges, max_range)
    if noise is not None and rng is not None:
        p = noise.p_noise * min(noise.attitude_gain, disturbance)
        hit = rng.random(N_BEAMS) < p
        shorts = rng.uniform(noise.short_min, np.maximum(ranges, noise.short_min * 2))
        ranges = np.where(hit & (ranges > noise.short_min * 2), shorts, ranges)
    return RawScan(ranges=np.maximum(ranges, 1e-6), max_range=max_range)


def pool_sectors(scan: RawScan, det_range: float) -> np.ndarray:
    """Thresholded min-pooling: per-sector minimum capped at det_range."""
    if det_range <= 0:
        raise ValueError("det_range must be positive")
    pooled = np.empty(N_SECTORS)
    for i in range(N_SECTORS):
        pooled[i] = min(scan.ranges[BEAM_TO_SECTOR == i].min(), det_range)
    return pooled


def filter_scan(
    fs: FilterState, pooled: np.ndarray, motion: MotionReading
) -> tuple[np.ndarray, FilterState]:
    """One step of the jump-rejection filter.

    Readings taken while the vehicle moves or tilts beyond the thresholds, or
    when no fresh reading is expected (``detect_flag`` cleared), are ignored
    and the previous values returned. Otherwise a drop of at least 1.5 in a
    sector is treated as spurious: repeated drops escalate a counter, the
    output backs off one meter per step, and a saturated counter snaps the
    sector to a mid-range alert value.
    """
    gated = (
        motion.linear_velocity > fs.vl_thr
        or abs(motion.roll) > fs.r_thr
        or abs(motion.pitch) > fs.p_thr
        or not fs.detect_flag
    )
    if gated:
        return fs.lidar_data_t.copy(), fs
    if fs.first:
        out = np.asarray(pooled, dtype=float).copy()
        new = replace(fs, lidar_data_t=out.copy(), first=False, detect_flag=False)
        return out, new
    out = np.asarray(pooled, dtype=float).copy()
    idx = fs.index_list.copy()
    d_r = round(0.5 * fs.det_range)
    for i in range(N_SECTORS):
        if fs.lidar_data_t[i] - pooled[i] >= 1.5:
            idx[i] += 1
            if idx[i] >= d_r:
                out[i] = fs.det_range - d_r + 1
                idx[i] -= fs.det_range - d_r - 1
            else:
                out[i] = fs.lidar_data_t[i] - 1
        elif idx[i] > 0:
            idx[i] -= 1
    new = replace(fs, lidar_data_t=out.copy(), index_list=idx, detect_flag=False)
    return out, new


def build_state(current: DronePose, target, filtered: np.ndarray) -> np.ndarray:
    """11-dim agent state: direction vector to target plus the 8 sectors.

    Uses the reported pose, the position the control layer acts on.
    """
    tx, ty = target[0], target[1]
    tz = target[2] if len(target) > 2 else current.reported_z
    if filtered.shape != (N_SECTORS,):
        raise ValueError("expected 8 filtered sector distances")
    return np.concatenate(
        (
            [tx - current.reported_x, ty - current.reported_y, tz - current.reported_z],
            np.asarray(filtered, dtype=float),
        )
    )


def write_scan_log(path, scans: list[RawScan], timestamps: list[float]) -> None:
    """CSV dump, one row per scan: timestamp then 360 beam ranges."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + [f"beam_{d}" for d in range(N_BEAMS)])
        for t, scan in zip(timestamps, scans):
            writer.writerow([f"{t:.3f}"] + [f"{r:.6f}" for r in scan.ranges])


def write_filter_trace(path, rows: list[dict]) -> None:
    """Per-step filter debugging trace: pooled input, output, counters."""
    fields = (
        ["step", "gated"]
        + [f"before_{i}" for i in range(N_SECTORS)]
        + [f"after_{i}" for i in range(N_SECTORS)]
        + [f"index_{i}" for i in range(N_SECTORS)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def filter_trace_row(step_idx: int, gated: bool, before, after, index_list) -> dict:
    row = {"step": step_idx, "gated": int(gated)}
    for i in range(N_SECTORS):
        row[f"before_{i}"] = f"{before[i]:.6f}"
        row[f"after_{i}"] = f"{after[i]:.6f}"
        row[f"index_{i}"] = f"{index_list[i]:g}"
    return row
