"""Episode orchestration: seeding, policy dispatch, metrics logging, suite runs, replay."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path as FilePath

import numpy as np

from . import planners
from .bridge import BridgeClient, BridgeProtocolError, BridgeTimeout
from .dataset import (
    EpisodeBuffer,
    EpisodeHeader,
    EpisodeRecord,
    StepRecord,
    _step_to_json,
    make_target_features,
    read_episode,
    record_step,
)
from .estimation import FilterBank, process_step
from .metrics import MetricsFrame, entropy, nll, rmse
from .planners import (
    FrontierWeights,
    NoPath,
    Path,
    PlannerMode,
    RrtParams,
    TimeHybridState,
    choose_tracking_target,
    inflated_occupancy,
    lookahead_control,
    nearest_unblocked_cell,
    plan_frontier,
    rrt_star,
    smooth_path,
    step_time_hybrid,
)
from .world import (
    AgentCommand,
    AgentPose,
    OccupancyGrid,
    SimConfig,
    TargetState,
    egocentric_crop,
    load_map,
    sense,
    step_agent,
    step_targets,
    update_explored,
)

EXPERT_NAMES = ("frontier", "uncertainty", "time")


@dataclass
class EpisodeConfig:
    """Everything a single episode needs; identical configs replay identically.

    Fields left as None are derived at episode setup: the process-noise scales
    from sim.target_noise_range, sigma_bar from the map diagonal, and the
    tracking threshold from the new-target prior.
    """

    map_path: str
    sim: SimConfig = field(default_factory=SimConfig)
    policy: str = "frontier"
    n_targets: int | None = None
    kf_q: np.ndarray = field(default_factory=lambda: np.diag([90.0, 40.0]))
    kf_r: np.ndarray = field(default_factory=lambda: np.diag([0.5 ** 2, 0.5 ** 2]))
    init_sigma: np.ndarray = field(default_factory=lambda: np.diag([0.25, 0.25]))
    sigma_bar: np.ndarray | None = None
    sigma_threshold: float | None = None
    track_duration: int = 60
    replan_interval: int = 10
    rrt_iterations: int = 600
    lookahead: float = 0.8
    omega_gain: float = 1.0
    t_o: int = 2
    t_a: int = 16
    t_exec: int = 8
    n_max: int = 8
    ego_size: int = 64
    map_threshold: int = 128
    resolution: float = 0.1
    bridge_timeout: float = 10.0

    def __post_init__(self):
        if not (1 <= self.t_exec <= self.t_a):
            raise ValueError("T_exec must satisfy 1 <= T_exec <= T_a")
        if self.t_o < 1:
            raise ValueError("T_o must be at least 1")

    def rrt_params(self) -> RrtParams:
        return RrtParams.from_resolution(self.resolution, self.rrt_iterations)

    def weights(self) -> FrontierWeights:
        return FrontierWeights.from_resolution(self.resolution)


@dataclass
class EpisodeResult:
    metrics: list[MetricsFrame]
    record: EpisodeRecord
    modes: list[PlannerMode]
    failed: bool = False
    error: str | None = None
    bridge_replies: list[list[tuple[float, float]]] = field(default_factory=list)

    def step_means(self) -> dict[str, float]:
        if not self.metrics:
            return {"rmse": math.nan, "entropy": math.nan, "nll": math.nan}
        return {
            "rmse": float(np.mean([m.rmse for m in self.metrics])),
            "entropy": float(np.mean([m.entropy for m in self.metrics])),
            "nll": float(np.mean([m.nll for m in self.metrics])),
        }


def observation_view(record: StepRecord) -> dict:
    """StepRecord-shaped JSON object with the action-side fields stripped."""
    obj = _step_to_json(replace(record, action=None))
    del obj["action"]
    del obj["mode"]
    del obj["expert_id"]
    return obj


class ExpertController:
    """Re-planning wrapper around the three expert planners.

    The mode decision is re-evaluated every step; paths are re-planned on mode
    change, on a fixed cadence, on arrival, and after a planning fallback.
    """

    def __init__(self, kind: str, config: EpisodeConfig, sigma_threshold: float,
                 rng: np.random.Generator):
        if kind not in EXPERT_NAMES:
            raise ValueError(f"unknown expert {kind!r}")
        self.kind = kind
        self.config = config
        self.sigma_threshold = sigma_threshold
        self.rng = rng
        self.rrt = config.rrt_params()
        self.weights = config.weights()
        self.visit_counts: np.ndarray | None = None
        self.path: Path | None = None
        self.steps_since_plan = 0
        self.prev_mode = PlannerMode.explore()
        self.time_state = TimeHybridState.initial()

    def _desired_mode(self, bank: FilterBank) -> PlannerMode:
        if self.kind == "frontier":
            return PlannerMode.explore()
        if self.kind == "uncertainty":
            target = choose_tracking_target(bank, self.sigma_threshold)
            return PlannerMode.explore() if target is None else PlannerMode.track(target)
        self.time_state, mode = step_time_hybrid(
            self.time_state, set(bank.detected), self.config.track_duration)
        return mode

    def _plan(self, mode: PlannerMode, bank: FilterBank, pose: AgentPose,
              grid: OccupancyGrid) -> tuple[PlannerMode, Path]:
        gain_radius = self.config.sim.fov.radius
        if mode.kind == "track":
            blocked = inflated_occupancy(grid, self.rrt.safety_margin)
            goal = nearest_unblocked_cell(
                grid, blocked, bank.beliefs[mode.target_id].position(), 4)
            start = nearest_unblocked_cell(grid, blocked, pose.position(), 12)
            if goal is not None and start is not None:
                path = self._rrt_with_retry(grid, start, goal)
                return mode, smooth_path(path, grid, self.rrt.safety_margin)
            # Unplannable tracking goal: the uncertainty expert reverts to
            # exploration for the step, the time expert keeps its bout ticking
            # but follows an exploration path.
            fallback = PlannerMode.explore() if self.kind == "uncertainty" else mode
            return fallback, self._plan_explore(pose, grid, gain_radius)
        return mode, self._plan_explore(pose, grid, gain_radius)

    def _retry_params(self) -> RrtParams:
        # Narrow inflation corridors occasionally starve the sampler; the
        # retry spends a bigger budget and pulls harder toward the goal.
        return replace(self.rrt,
                       max_iterations=max(4 * self.rrt.max_iterations, 2000),
                       goal_bias=0.3)

    def _plan_explore(self, pose: AgentPose, grid: OccupancyGrid,
                      gain_radius: float) -> Path:
        try:
            return plan_frontier(pose, grid, self.visit_counts, self.weights,
                                 self.rrt, self.rng, gain_radius)
        except NoPath:
            return plan_frontier(pose, grid, self.visit_counts, self.weights,
                                 self._retry_params(), self.rng, gain_radius)

    def _rrt_with_retry(self, grid: OccupancyGrid, start: np.ndarray,
                        goal: np.ndarray) -> Path:
        try:
            return rrt_star(grid, start, goal, self.rrt, self.rng)
        except NoPath:
            return rrt_star(grid, start, goal, self._retry_params(), self.rng)

    def decide(self, t: int, obs: dict, bank: FilterBank, pose: AgentPose,
               grid: OccupancyGrid) -> tuple[AgentCommand, PlannerMode]:
        if self.visit_counts is None:
            self.visit_counts = np.zeros((grid.height, grid.width), dtype=np.int64)
        mode = self._desired_mode(bank)
        arrived = (self.path is not None
                   and np.linalg.norm(pose.position() - self.path.end())
                   <= self.rrt.goal_tolerance)
        if (self.path is None or mode != self.prev_mode or arrived
                or self.steps_since_plan >= self.config.replan_interval):
            mode, self.path = self._plan(mode, bank, pose, grid)
            self.steps_since_plan = 0
        else:
            mode = self.prev_mode
            self.steps_since_plan += 1
        self.prev_mode = mode
        cmd = lookahead_control(pose, self.path, self.config.lookahead,
                                self.config.sim.v_max, self.config.sim.omega_max,
                                self.rrt.goal_tolerance)
        return cmd, mode

    def close(self) -> None:
        pass


class BridgePolicy:
    """Receding-horizon client: query every T_exec steps, execute the head."""

    def __init__(self, command: str, config: EpisodeConfig):
        self.client = BridgeClient(command, timeout=config.bridge_timeout)
        self.t_o = config.t_o
        self.t_a = config.t_a
        self.t_exec = config.t_exec
        self.history: deque[dict] = deque(maxlen=config.t_o)
        self.queue: list[tuple[float, float]] = []
        self.replies: list[list[tuple[float, float]]] = []
        self.name = self.client.peer_name

    def decide(self, t: int, obs: dict, bank: FilterBank, pose: AgentPose,
               grid: OccupancyGrid) -> tuple[AgentCommand, PlannerMode]:
        self.history.append(obs)
        if t % self.t_exec == 0:
            padded = list(self.history)
            while len(padded) < self.t_o:
                padded.insert(0, padded[0])
            actions = self.client.request_actions(t, padded, self.t_a)
            self.replies.append(actions)
            self.queue = list(actions[:self.t_exec])
        v, omega = self.queue[t % self.t_exec]
        return AgentCommand(v, omega), PlannerMode.explore()

    def close(self) -> None:
        self.client.close()


class ScriptedPolicy:
    """Replays a fixed action sequence; used for bridge-equivalence tests."""

    def __init__(self, actions):
        self.actions = [tuple(a) for a in actions]

    def decide(self, t, obs, bank, pose, grid):
        v, omega = self.actions[t % len(self.actions)]
        return AgentCommand(v, omega), PlannerMode.explore()

    def close(self) -> None:
        pass


def _derive_sigma_bar(config: EpisodeConfig, grid: OccupancyGrid) -> np.ndarray:
    if config.sigma_bar is not None:
        return np.asarray(config.sigma_bar, dtype=float)
    # 2-sigma ellipse covering the map diagonal; floored so log det stays > 1.
    s = max((grid.diagonal / 2.0) ** 2, math.e)
    return np.diag([s, s])


def _sample_free_cell(grid: OccupancyGrid, mask: np.ndarray,
                      rng: np.random.Generator) -> tuple[int, int]:
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("map has no usable free cell")
    i = int(rng.integers(rows.size))
    return int(rows[i]), int(cols[i])


def make_policy(config: EpisodeConfig, sigma_threshold: float,
                rng_planner: np.random.Generator):
    if config.policy in EXPERT_NAMES:
        return ExpertController(config.policy, config, sigma_threshold, rng_planner)
    if config.policy.startswith("bridge:"):
        return BridgePolicy(config.policy[len("bridge:"):], config)
    raise ValueError(f"unknown policy {config.policy!r}")


def run_episode(config: EpisodeConfig, policy=None) -> EpisodeResult:
    """Run one seeded episode and return its metrics trace and step record.

    Per-episode randomness comes from two Philox streams keyed by the seed:
    the world stream (target count and noise scales, initial poses, process and
    sensor noise, in that order) and a jumped planner stream.  Planner and
    bridge failures abort the episode, flagging the partial trace as failed.
    """
    grid = load_map(config.map_path, config.map_threshold, config.resolution)
    seed = config.sim.seed
    rng_world = np.random.Generator(np.random.Philox(seed))
    rng_planner = np.random.Generator(np.random.Philox(seed).jumped(1))

    n_targets = config.n_targets
    if n_targets is None:
        n_targets = int(rng_world.integers(3, 7))
    w = config.sim.w
    if w is None:
        lo, hi = config.sim.target_noise_range
        w = np.diag(rng_world.uniform(lo, hi, 2) ** 2)

    clear = ~inflated_occupancy(grid, 2)
    start_mask = clear if clear.any() else ~grid.occupied
    ar, ac = _sample_free_cell(grid, start_mask, rng_world)
    theta = float(rng_world.uniform(-math.pi, math.pi))
    pose = AgentPose((ar + 0.5) * grid.resolution, (ac + 0.5) * grid.resolution, theta)

    targets = []
    free = ~grid.occupied
    for j in range(n_targets):
        tr, tc = _sample_free_cell(grid, free, rng_world)
        targets.append(TargetState(j, np.array([(tr + 0.5) * grid.resolution,
                                                (tc + 0.5) * grid.resolution])))

    sigma_bar = _derive_sigma_bar(config, grid)
    sigma_threshold = config.sigma_threshold
    if sigma_threshold is None:
        sigma_threshold = float(np.linalg.slogdet(config.init_sigma)[1]) + 4.0
    bank = FilterBank(a=config.sim.a, q=config.kf_q, h=config.sim.h, r=config.kf_r,
                      sigma_bar=sigma_bar, init_sigma=config.init_sigma)

    if policy is None:
        policy = make_policy(config, sigma_threshold, rng_planner)
    if isinstance(policy, ExpertController):
        expert_id = policy.kind
    else:
        expert_id = f"external:{getattr(policy, 'name', 'scripted')}"

    buffer = EpisodeBuffer()
    frames: list[MetricsFrame] = []
    modes: list[PlannerMode] = []
    failed = False
    error = None
    empty_rmse = grid.diagonal
    sim = config.sim

    try:
        for t in range(sim.episode_length):
            targets = step_targets(targets, (sim.a, w), sim.dt, grid, rng_world)
            measurements = sense(pose, targets, sim.h, sim.r_true, grid, sim.fov,
                                 rng_world)
            bank = process_step(bank, measurements, pose, grid, sim.fov)
            update_explored(grid, pose, sim.fov)

            features = make_target_features(bank, pose, config.n_max)
            ego = egocentric_crop(grid, pose, config.ego_size)
            pending = StepRecord(t, pose.as_tuple(), ego, features, None,
                                 "explore", expert_id)
            cmd, mode = policy.decide(t, observation_view(pending), bank, pose, grid)
            v = min(max(cmd.v, 0.0), sim.v_max)
            omega = max(-sim.omega_max,
                        min(sim.omega_max, cmd.omega * config.omega_gain))
            cmd = AgentCommand(v, omega)

            next_pose = step_agent(pose, cmd, sim.dt, grid)
            truths = {tgt.id: tgt.state for tgt in targets}
            frames.append(MetricsFrame(
                t,
                rmse(bank.beliefs, truths, bank.detected, empty_rmse),
                entropy(bank.beliefs, bank.detected, n_targets, sigma_bar),
                nll(bank.beliefs, truths, bank.detected, n_targets, sigma_bar),
                len(bank.detected), n_targets))
            record_step(buffer, replace(pending, action=(float(cmd.v), float(cmd.omega)),
                                        mode=mode.kind))
            modes.append(mode)
            pose = next_pose
    except (planners.NoPath, planners.NoReachableGoal, planners.InvalidEndpoint,
            planners.UnreachableFrontier, BridgeTimeout, BridgeProtocolError) as e:
        failed = True
        error = f"{type(e).__name__}: {e}"
    finally:
        policy.close()

    header = EpisodeHeader(
        map_path=str(config.map_path), resolution=config.resolution,
        n_max=config.n_max, ego_size=config.ego_size,
        fov_radius=sim.fov.radius, fov_half_angle=sim.fov.half_angle,
        seed=seed, expert_id=expert_id, n_targets=n_targets)
    return EpisodeResult(frames, EpisodeRecord(header, buffer.records), modes,
                         failed, error,
                         bridge_replies=list(getattr(policy, "replies", [])))


def write_metrics_csv(path, frames: list[MetricsFrame]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "rmse", "entropy", "nll", "detected_count"])
        for m in frames:
            writer.writerow([m.t, repr(m.rmse), repr(m.entropy), repr(m.nll),
                             m.detected_count])


def read_metrics_csv(path) -> dict[str, list[float]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    series = {"t": [], "rmse": [], "entropy": [], "nll": [], "detected_count": []}
    for row in rows:
        for key in series:
            series[key].append(float(row[key]))
    return series


def metrics_csv_path_for(episode_path) -> FilePath:
    p = FilePath(episode_path)
    return p.with_suffix(".metrics.csv")


@dataclass
class SuiteResult:
    rows: list[dict]
    aggregates: list[dict]


def _suite_episode(args):
    base_config, name, seed = args
    config = replace(base_config, policy=name,
                     sim=replace(base_config.sim, seed=seed))
    return run_episode(config)


def run_suite(base_config: EpisodeConfig, policies: list[str],
              seeds: list[int], record_dir=None, workers: int = 1) -> SuiteResult:
    """Episode-averaged metrics per policy and seed plus per-policy means.

    Episodes are independent (no shared mutable state), so workers > 1 runs
    them in parallel processes; results are assembled in deterministic order
    either way.
    """
    import re

    from .dataset import write_episode

    if not seeds:
        raise ValueError("need at least one seed")
    jobs = [(base_config, name, seed) for name in policies for seed in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_suite_episode, jobs))
    else:
        results = [_suite_episode(job) for job in jobs]

    rows = []
    for (_, name, seed), result in zip(jobs, results):
        if result.failed:
            raise RuntimeError(f"episode failed ({name}, seed {seed}): {result.error}")
        if record_dir is not None:
            rec_dir = FilePath(record_dir)
            rec_dir.mkdir(parents=True, exist_ok=True)
            label = re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")
            ep_path = rec_dir / f"{label}_seed{seed}.jsonl"
            write_episode(ep_path, result.record)
            write_metrics_csv(metrics_csv_path_for(ep_path), result.metrics)
        means = result.step_means()
        rows.append({"method": name, "seed": seed, **means})
    aggregates = []
    for name in policies:
        mine = [r for r in rows if r["method"] == name]
        aggregates.append({
            "method": name, "seed": "mean",
            "rmse": float(np.mean([r["rmse"] for r in mine])),
            "entropy": float(np.mean([r["entropy"] for r in mine])),
            "nll": float(np.mean([r["nll"] for r in mine])),
        })
    return SuiteResult(rows, aggregates)


def write_suite_csv(path, result: SuiteResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["method", "seed", "rmse", "entropy", "nll"])
        for row in result.rows + result.aggregates:
            writer.writerow([row["method"], row["seed"], repr(row["rmse"]),
                             repr(row["entropy"]), repr(row["nll"])])


def format_suite_table(result: SuiteResult) -> str:
    lines = [f"{'method':<14}{'seed':>6}{'rmse':>12}{'entropy':>12}{'nll':>12}"]
    for row in result.rows + result.aggregates:
        lines.append(f"{row['method']:<14}{str(row['seed']):>6}"
                     f"{row['rmse']:>12.4f}{row['entropy']:>12.4f}{row['nll']:>12.4f}")
    return "\n".join(lines)


@dataclass
class ReplayOutputs:
    paths: dict[str, FilePath]
    series: dict[str, list[float]]


def serve_replay(episode_path, out_dir, metrics_csv=None) -> ReplayOutputs:
    """Render trajectory and metric time-series plots for a recorded episode."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .dataset import MalformedEpisode

    record = read_episode(episode_path)
    if not record.steps:
        raise MalformedEpisode("episode has no steps")
    csv_path = FilePath(metrics_csv) if metrics_csv else metrics_csv_path_for(episode_path)
    if not csv_path.exists():
        raise MalformedEpisode(f"metrics CSV not found: {csv_path}")
    series = read_metrics_csv(csv_path)
    if not series["t"]:
        raise MalformedEpisode(f"metrics CSV has no rows: {csv_path}")

    out = FilePath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, FilePath] = {}

    xs = [s.pose[0] for s in record.steps]
    ys = [s.pose[1] for s in record.steps]
    fig, ax = plt.subplots(figsize=(6, 6))
    map_file = FilePath(record.header.map_path)
    if map_file.exists():
        grid = load_map(map_file, resolution=record.header.resolution)
        ax.imshow(grid.occupied, cmap="gray_r",
                  extent=(0, grid.y_extent, grid.x_extent, 0))
    else:
        ax.invert_yaxis()
    ax.plot(ys, xs, "-", color="tab:blue", lw=1.2, label="agent")
    # Estimated target positions from unmasked feature slots, mapped to world.
    est_y, est_x = [], []
    for s in record.steps:
        c, sn = math.cos(s.pose[2]), math.sin(s.pose[2])
        for f in s.features:
            if f.mask == 0:
                wx = s.pose[0] + c * f.mu[0] - sn * f.mu[1]
                wy = s.pose[1] + sn * f.mu[0] + c * f.mu[1]
                est_x.append(wx)
                est_y.append(wy)
    if est_x:
        ax.plot(est_y, est_x, ".", color="tab:red", ms=2, label="target estimates")
    fov_r = record.header.fov_radius
    fov_h = record.header.fov_half_angle
    stride = max(1, len(record.steps) // 8)
    for s in record.steps[::stride]:
        angles = np.linspace(s.pose[2] - fov_h, s.pose[2] + fov_h, 16)
        wedge_x = np.concatenate([[s.pose[0]], s.pose[0] + fov_r * np.cos(angles)])
        wedge_y = np.concatenate([[s.pose[1]], s.pose[1] + fov_r * np.sin(angles)])
        ax.fill(wedge_y, wedge_x, color="tab:green", alpha=0.08)
    ax.set_xlabel("y [m]")
    ax.set_ylabel("x [m]")
    ax.legend(loc="upper right", fontsize=8)
    paths["trajectory"] = out / "trajectory.png"
    fig.savefig(paths["trajectory"], dpi=120)
    plt.close(fig)

    for key in ("rmse", "entropy", "nll"):
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.plot(series["t"], series[key], lw=1.0)
        ax.set_xlabel("step")
        ax.set_ylabel(key)
        fig.tight_layout()
        paths[key] = out / f"{key}.png"
        fig.savefig(paths[key], dpi=120)
        plt.close(fig)
    return ReplayOutputs(paths, series)
