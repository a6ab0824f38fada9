"""Dynamic obstacle handler: replay memory, epsilon-greedy double-DQN
training with a periodically synced target network, the reward and
termination rules, the staged reset procedure, and the evaluation harness.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import lidar
from .lidar import MotionReading, NoiseModel, build_state, make_filter_state
from .net import AdamState, DuelingNet, load_checkpoint, mse_loss, optimize_step, save_checkpoint
from .seeding import derive_rng, derive_seed
from .world import EpisodeStatus, SimWorld, sample_clear_target, spawn_scenario

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class EpisodeConfig:
    n_eps: int = 500
    n_step: int = 50
    batch_size: int = 96
    gamma: float = 0.99
    f_u: int = 1000
    learning_rate: float = 5e-4
    eps_max: float = 1.0
    eps_min: float = 0.01
    eps_decay: float = 1e-4
    memory_capacity: int = 1_000_000
    target_radius: float = 3.0
    limit_x: float = 20.0
    limit_y: float = 20.0
    col_threshold: float = 0.8
    target_range: float = 12.0
    target_z: float = 4.4
    det_range: float = 6.0
    max_range: float = 12.0
    noise_p: float = 0.02
    terminal_mask: bool = True

    def __post_init__(self):
        positives = (
            self.n_eps, self.n_step, self.batch_size, self.gamma, self.f_u,
            self.learning_rate, self.memory_capacity, self.target_radius,
            self.limit_x, self.limit_y, self.col_threshold, self.det_range,
        )
        if any(v <= 0 for v in positives):
            raise ValueError("episode config values must be positive")
        if self.target_radius >= min(self.limit_x, self.limit_y):
            raise ValueError("target_radius must be below the world limits")


@dataclass
class ResetConfig:
    a_thr: float = 3.0
    b_thr: float = 6.0
    offset_a: float = 2.0
    offset_b: float = 4.0
    soft_timeout: float = 20.0
    hard_timeout: float = 60.0

    def __post_init__(self):
        if not (self.b_thr > self.a_thr > 0):
            raise ValueError("need b_thr > a_thr > 0")
        if not (self.offset_b > self.offset_a > 0):
            raise ValueError("need offset_b > offset_a > 0")


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with uniform sampling."""

    def __init__(self, capacity: int = 1_000_000, rng_seed: int = 0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._data: list = []
        self._next = 0
        self._rng = np.random.default_rng(rng_seed)

    def push(self, state, action, reward, next_state, done) -> None:
        item = (
            np.asarray(state, dtype=float),
            int(action),
            float(reward),
            np.asarray(next_state, dtype=float),
            bool(done),
        )
        if item[1] < 0:
            raise ValueError("action index must be non-negative")
        if item[0].shape != item[3].shape:
            raise ValueError("state and next_state must have the same shape")
        if self._data and item[0].shape != self._data[0][0].shape:
            raise ValueError("transition state shape differs from stored transitions")
        if len(self._data) < self.capacity:
            self._data.append(item)
        else:
            self._data[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._data)

    def contents(self) -> list:
        """Stored transitions, oldest first."""
        return self._data[self._next :] + self._data[: self._next]

    def sample(self, batch_size: int):
        if batch_size > len(self._data):
            raise ValueError("not enough transitions to sample")
        idx = self._rng.choice(len(self._data), size=batch_size, replace=False)
        states = np.stack([self._data[i][0] for i in idx])
        actions = np.array([self._data[i][1] for i in idx])
        rewards = np.array([self._data[i][2] for i in idx])
        next_states = np.stack([self._data[i][3] for i in idx])
        dones = np.array([self._data[i][4] for i in idx])
        return states, actions, rewards, next_states, dones


@dataclass
class EpsilonSchedule:
    eps_max: float = 1.0
    eps_min: float = 0.01
    decay: float = 1e-4
    t: int = 0

    def value(self) -> float:
        return max(self.eps_min, self.eps_max - self.decay * self.t)

    def advance(self) -> float:
        eps = self.value()
        self.t += 1
        return eps


def compute_reward(d_current, d_last, step_count, collision, cfg: EpisodeConfig) -> float:
    """Event reward by precedence, minus the quadratic distance shaping."""
    if d_current <= cfg.target_radius:
        r_t = 3000.0
    elif collision:
        r_t = -2000.0
    elif step_count >= cfg.n_step:
        r_t = -1000.0
    elif d_current > d_last:
        r_t = -50.0
    else:
        r_t = 0.0
    return r_t - d_current**2 / 100.0


def check_done(dists, pose, d_current, counter, cfg: EpisodeConfig):
    """Episode termination with reason precedence target > collision >
    out_of_bounds > step_limit."""
    target = d_current <= cfg.target_radius
    collision = bool(np.any(np.asarray(dists) <= cfg.col_threshold))
    bounds = abs(pose.reported_x) > abs(cfg.limit_x) or abs(pose.reported_y) > abs(cfg.limit_y)
    timeout = counter >= cfg.n_step
    if target:
        return True, "target"
    if collision:
        return True, "collision"
    if bounds:
        return True, "out_of_bounds"
    if timeout:
        return True, "step_limit"
    return False, "none"


def select_action(net: DuelingNet, state, sched: EpsilonSchedule, rng: np.random.Generator) -> int:
    eps = sched.advance()
    if rng.random() < eps:
        return int(rng.integers(net.action_dim))
    return int(np.argmax(net.forward(state)))


def train_step(
    policy: DuelingNet,
    target: DuelingNet,
    batch,
    opt: AdamState,
    cfg: EpisodeConfig,
) -> float:
    """One double-DQN update: action picked by the policy net, valued by the
    target net, terminals masked (unless disabled), MSE on the taken action."""
    states, actions, rewards, next_states, dones = batch
    if len(states) == 0:
        raise ValueError("empty batch")
    a_star = np.argmax(policy.forward(next_states), axis=1)
    rows = np.arange(len(states))
    q_next = target.forward(next_states)[rows, a_star]
    if cfg.terminal_mask:
        q_next = np.where(dones, 0.0, q_next)
    q_target = rewards + cfg.gamma * q_next
    q_pred = policy.forward(states, record=True)[rows, actions]
    loss, d_pred = mse_loss(q_pred, q_target)
    if not math.isfinite(loss):
        raise TrainingAborted(f"non-finite loss {loss}")
    grad_q = np.zeros((len(states), policy.action_dim))
    grad_q[rows, actions] = d_pred
    policy.zero_grad()
    policy.backward(grad_q)
    optimize_step(policy, opt)
    return loss


def sync_target(policy: DuelingNet, target: DuelingNet, step: int, f_u: int = 1000) -> None:
    if step % f_u == 0:
        target.copy_from(policy)


@dataclass
class ResetReport:
    exit_reason: str  # converged | soft_timeout | hard_timeout
    polls: int
    staging_point: tuple | None
    elapsed: float
    collision_events: int


def reset_sequence(world: SimWorld, cfg: ResetConfig, stop_flag: bool = False) -> ResetReport:
    """Bring the vehicle home without trusting the lagging reported pose.

    The pose is commanded back to the spawn point immediately; until the
    reported pose settles within one meter of it, the vehicle is steered
    toward a staging point computed once from the entry position (each axis
    pulled in by offset_b or offset_a depending on how far out it was, or
    pinned to the current reading when already close). Timeouts end the wait;
    they are normal exits, not errors.
    """
    t0 = world.clock
    entry = world.pose
    x_t, y_t = entry.reported_x, entry.reported_y
    events_before = len(world.collision_events)
    world.begin_reset()
    reset_pos = world.reset_position
    modified = True
    staging = None
    polls = 0
    reason = "converged"
    while True:
        p = world.pose
        if math.dist(p.reported(), reset_pos) <= 1.0:
            break
        if (x_t != p.reported_x or y_t != p.reported_y) and modified:
            if abs(x_t) >= cfg.a_thr:
                x_t = abs(x_t) - (cfg.offset_b if abs(x_t) >= cfg.b_thr else cfg.offset_a)
                modified = False
            else:
                x_t = p.reported_x
            if abs(y_t) >= cfg.a_thr:
                y_t = abs(y_t) - (cfg.offset_b if abs(y_t) >= cfg.b_thr else cfg.offset_a)
                modified = False
            else:
                y_t = p.reported_y
            staging = (x_t, y_t, world.config.altitude)
        if staging is not None:
            world.command_move(staging)
        world.poll_reported_pose()
        polls += 1
        elapsed = world.clock - t0
        if elapsed > cfg.soft_timeout and stop_flag:
            reason = "soft_timeout"
            break
        elif elapsed > cfg.hard_timeout:
            reason = "hard_timeout"
            break
    world.command_move(reset_pos)
    world.end_reset()
    return ResetReport(
        exit_reason=reason,
        polls=polls,
        staging_point=staging,
        elapsed=world.clock - t0,
        collision_events=len(world.collision_events) - events_before,
    )


# --- episode loop -----------------------------------------------------------


def synth_motion(rng: np.random.Generator, p_spike: float = 0.08) -> MotionReading:
    """Mostly-calm attitude stream with occasional maneuver spikes that
    exceed the filter gates."""
    if rng.random() < p_spike:
        roll = rng.uniform(0.12, 0.3) * (1.0 if rng.random() < 0.5 else -1.0)
        pitch = rng.uniform(0.0, 0.1)
        vel = rng.uniform(0.2, 0.6)
    else:
        roll = rng.normal(0.0, 0.02)
        pitch = rng.normal(0.0, 0.02)
        vel = abs(rng.normal(0.08, 0.03))
    return MotionReading(linear_velocity=vel, roll=roll, pitch=pitch)


def _sense(world, fs, cfg, noise_model, noise_rng, motion_rng, max_attempts=5, stationary=False):
    """One accepted LiDAR reading, retrying frames the motion gate rejects.

    ``stationary`` models the pre-takeoff hover at episode start: no attitude
    disturbance, so the unprotected first filter pass sees a clean frame.
    """
    pose = world.pose
    for _ in range(max_attempts):
        motion = MotionReading(0.0, 0.0, 0.0) if stationary else synth_motion(motion_rng)
        disturbance = (abs(motion.roll) + abs(motion.pitch)) / fs.r_thr
        if world.config.contains(pose.reported_x, pose.reported_y):
            scan = lidar.cast_scan(
                world.config,
                pose,
                noise=noise_model,
                rng=noise_rng,
                max_range=cfg.max_range,
                disturbance=disturbance,
            )
            pooled = lidar.pool_sectors(scan, fs.det_range)
        else:
            pooled = fs.lidar_data_t  # no scan out of bounds; episode ends on the bounds check
        out, new_fs = lidar.filter_scan(fs, pooled, motion)
        if new_fs is not fs:
            return out, new_fs
        fs = new_fs
    return fs.lidar_data_t.copy(), fs


@dataclass
class EpisodeResult:
    score: float
    status: EpisodeStatus
    trace: list | None = None

    @property
    def steps(self) -> int:
        return self.status.step_counter

    @property
    def done_reason(self) -> str:
        return self.status.done_reason


class Trainer:
    """Owns the learner state shared across episodes."""

    def __init__(self, policy, target_net, cfg: EpisodeConfig, master_seed: int):
        self.policy = policy
        self.target_net = target_net
        self.cfg = cfg
        self.opt = AdamState(policy.parameters(), learning_rate=cfg.learning_rate)
        self.buffer = ReplayBuffer(cfg.memory_capacity, derive_seed(master_seed, "replay"))
        self.sched = EpsilonSchedule(cfg.eps_max, cfg.eps_min, cfg.eps_decay)
        self.action_rng = derive_rng(master_seed, "actions")
        self.learn_steps = 0
        self.target_net.copy_from(policy)

    def act(self, state) -> int:
        return select_action(self.policy, state, self.sched, self.action_rng)

    def observe(self, state, action, reward, next_state, done) -> None:
        self.buffer.push(state, action, reward, next_state, done)
        if len(self.buffer) >= self.cfg.batch_size:
            self.learn_steps += 1
            sync_target(self.policy, self.target_net, self.learn_steps, self.cfg.f_u)
            batch = self.buffer.sample(self.cfg.batch_size)
            train_step(self.policy, self.target_net, batch, self.opt, self.cfg)


def run_episode(
    world: SimWorld,
    target_pos,
    cfg: EpisodeConfig,
    act,
    noise_rng,
    motion_rng,
    noise_model: NoiseModel | None = None,
    trainer: Trainer | None = None,
    collect_trace: bool = False,
) -> EpisodeResult:
    """One mission: sense, act, reward, learn (optionally), until done."""
    tx, ty = target_pos[0], target_pos[1]
    target3 = (tx, ty, cfg.target_z)
    fs = make_filter_state(det_range=cfg.det_range)
    dists, fs = _sense(world, fs, cfg, noise_model, noise_rng, motion_rng, stationary=True)
    pose = world.pose
    state = build_state(pose, target3, dists)
    d_last = math.hypot(tx - pose.reported_x, ty - pose.reported_y)
    status = EpisodeStatus()
    score = 0.0
    trace = [] if collect_trace else None
    if collect_trace:
        trace.append(
            {"step": 0, "x": pose.reported_x, "y": pose.reported_y, "action": -1,
             "reward": 0.0, "done_reason": "none"}
        )
    status.done, status.done_reason = check_done(dists, pose, d_last, status.step_counter, cfg)
    if status.done and collect_trace:
        trace[-1]["done_reason"] = status.done_reason
    while not status.done:
        action = act(state)
        pose = world.apply_action(action)
        status.step_counter += 1
        fs = replace(fs, detect_flag=True)
        dists, fs = _sense(world, fs, cfg, noise_model, noise_rng, motion_rng)
        next_state = build_state(pose, target3, dists)
        d_current = math.hypot(tx - pose.reported_x, ty - pose.reported_y)
        collision = bool(np.any(dists <= cfg.col_threshold))
        status.done, status.done_reason = check_done(
            dists, pose, d_current, status.step_counter, cfg
        )
        reward = compute_reward(d_current, d_last, status.step_counter, collision, cfg)
        score += reward
        if trainer is not None:
            trainer.observe(state, action, reward, next_state, status.done)
        if collect_trace:
            trace.append(
                {"step": status.step_counter, "x": pose.reported_x, "y": pose.reported_y,
                 "action": action, "reward": reward,
                 "done_reason": status.done_reason if status.done else "none"}
            )
        state = next_state
        d_last = d_current
    return EpisodeResult(score=score, status=status, trace=trace)


# --- training and evaluation harnesses --------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: str
    curve_path: str
    episodes: int
    scores: list = field(default_factory=list)


def default_world_factory(master_seed: int):
    def factory(episode: int) -> SimWorld:
        scenario_seed = derive_seed(master_seed, f"scenario:{episode}")
        return SimWorld(spawn_scenario(scenario_seed, "farmland"))

    return factory


def run_training(
    world_factory,
    policy: DuelingNet,
    target_net: DuelingNet,
    cfg: EpisodeConfig,
    reset_cfg: ResetConfig,
    out_dir,
    master_seed: int,
) -> TrainResult:
    """The full training regimen; deterministic in the master seed."""
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_path = os.path.join(out_dir, "policy.ckpt.npz")
    curve_path = os.path.join(out_dir, "learning_curve.csv")
    trainer = Trainer(policy, target_net, cfg, master_seed)
    noise_model = NoiseModel(p_noise=cfg.noise_p)
    log.info("arming handshake is a no-op in the simulator; starting immediately")
    rows = []
    scores: list[float] = []
    try:
        for episode in range(cfg.n_eps):
            world = world_factory(episode)
            world.place(*world.config.start)
            target_rng = derive_rng(master_seed, f"target:{episode}")
            target_pos = sample_clear_target(
                world.config, target_rng, cfg.target_range, cfg.target_radius
            )
            noise_rng = derive_rng(master_seed, f"noise:{episode}")
            motion_rng = derive_rng(master_seed, f"motion:{episode}")
            result = run_episode(
                world, target_pos, cfg, trainer.act, noise_rng, motion_rng,
                noise_model=noise_model, trainer=trainer,
            )
            reset_sequence(world, reset_cfg)
            scores.append(result.score)
            rolling = float(np.mean(scores[-100:]))
            log.info(
                "episode %d: score %.2f, average %.2f (%s)",
                episode, result.score, rolling, result.done_reason,
            )
            rows.append(
                {
                    "episode": episode,
                    "score": f"{result.score:.6f}",
                    "rolling_avg": f"{rolling:.6f}",
                    "epsilon": f"{trainer.sched.value():.6f}",
                    "buffer_size": len(trainer.buffer),
                }
            )
    except TrainingAborted as exc:
        save_checkpoint(policy, trainer.opt, checkpoint_path)
        _write_curve(curve_path, rows)
        raise TrainingAborted(
            f"{exc}; last good state saved to {checkpoint_path}", checkpoint_path
        ) from exc
    save_checkpoint(policy, trainer.opt, checkpoint_path)
    _write_curve(curve_path, rows)
    return TrainResult(
        checkpoint_path=checkpoint_path,
        curve_path=curve_path,
        episodes=cfg.n_eps,
        scores=scores,
    )


def _write_curve(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["episode", "score", "rolling_avg", "epsilon", "buffer_size"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


@dataclass
class EvalResult:
    success_rate: float
    episodes: list  # per-episode dicts
    traces: list  # per-episode trace row lists


def _eval_one(args) -> tuple[dict, list]:
    (index, scenario_seed, cfg, checkpoint_path, policy_mode, master_seed) = args
    world_cfg = spawn_scenario(scenario_seed, "farmland")
    world = SimWorld(world_cfg)
    world.place(*world_cfg.start)
    target_pos = world_cfg.target
    noise_rng = derive_rng(master_seed, f"eval-noise:{index}")
    motion_rng = derive_rng(master_seed, f"eval-motion:{index}")
    if policy_mode == "random":
        rng = derive_rng(master_seed, f"eval-random:{index}")

        def act(_state):
            return int(rng.integers(8))

    else:
        net, _ = load_checkpoint(checkpoint_path, expected_dims=(11, 8))

        def act(state):
            return int(np.argmax(net.forward(state)))

    result = run_episode(
        world, target_pos, cfg, act, noise_rng, motion_rng,
        noise_model=NoiseModel(p_noise=cfg.noise_p), collect_trace=True,
    )
    episode_row = {
        "episode": index,
        "seed": scenario_seed,
        "steps": result.steps,
        "score": result.score,
        "done_reason": result.done_reason,
        "success": int(result.done_reason == "target"),
    }
    return episode_row, result.trace


def run_evaluation(
    checkpoint_path,
    scenario_seeds,
    cfg: EpisodeConfig,
    master_seed: int = 0,
    policy_mode: str = "greedy",
    jobs: int = 1,
) -> EvalResult:
    """Greedy (epsilon forced to 0) or random rollouts over seeded scenarios."""
    tasks = [
        (i, seed, cfg, checkpoint_path, policy_mode, master_seed)
        for i, seed in enumerate(scenario_seeds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_eval_one, tasks))
    else:
        outcomes = [_eval_one(t) for t in tasks]
    episodes = [row for row, _ in outcomes]
    traces = [trace for _, trace in outcomes]
    rate = float(np.mean([e["success"] for e in episodes])) if episodes else 0.0
    return EvalResult(success_rate=rate, episodes=episodes, traces=traces)


def write_eval_outputs(result: EvalResult, out_dir) -> tuple[str, list]:
    os.makedirs(out_dir, exist_ok=True)
    summary_path = os.path.join(out_dir, "eval_summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["episode", "seed", "steps", "score", "done_reason", "success"]
        )
        writer.writeheader()
        for row in result.episodes:
            writer.writerow(row)
    trace_paths = []
    for row, trace in zip(result.episodes, result.traces):
        path = os.path.join(out_dir, f"trace_{row['episode']:03d}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["step", "x", "y", "action", "reward", "done_reason"]
            )
            writer.writeheader()
            for t in trace:
                writer.writerow(t)
        trace_paths.append(path)
    return summary_path, trace_paths
