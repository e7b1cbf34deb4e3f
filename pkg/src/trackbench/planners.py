"""Expert planners: frontier exploration, RRT* with rewiring, path smoothing,
lookahead control, and the uncertainty/time hybrid switching strategies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from .estimation import FilterBank, uncertainty
from .geometry import cell_center, cell_of, segment_blocked, wrap_angle
from .world import AgentCommand, AgentPose, OccupancyGrid


class UnreachableFrontier(Exception):
    """No free-space path from the agent to the frontier cell."""


class NoReachableGoal(Exception):
    """No reachable free cell to plan toward."""


class NoPath(Exception):
    """RRT* exhausted its iteration budget without reaching the goal region."""


class InvalidEndpoint(Exception):
    """Start or goal lies inside the margin-inflated obstacle region."""


@dataclass(frozen=True)
class PlannerMode:
    kind: str
    target_id: int | None = None

    @classmethod
    def explore(cls) -> "PlannerMode":
        return cls("explore")

    @classmethod
    def track(cls, target_id: int) -> "PlannerMode":
        return cls("track", target_id)


@dataclass
class Path:
    waypoints: np.ndarray
    cost: float

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)

    @classmethod
    def from_waypoints(cls, waypoints) -> "Path":
        wps = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        return cls(wps, path_cost(wps))

    def end(self) -> np.ndarray:
        return self.waypoints[-1]


def path_cost(waypoints: np.ndarray) -> float:
    wps = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if wps.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(wps, axis=0), axis=1).sum())


@dataclass(frozen=True)
class FrontierWeights:
    """Weights of the frontier score: distance, visitation penalty, coverage gain."""

    w_dist: float = 1.0
    w_visit: float = 0.2
    w_gain: float = 0.01

    def __post_init__(self):
        if min(self.w_dist, self.w_visit, self.w_gain) < 0:
            raise ValueError("frontier weights must be non-negative")
        if max(self.w_dist, self.w_visit, self.w_gain) <= 0:
            raise ValueError("at least one frontier weight must be positive")

    @classmethod
    def from_resolution(cls, resolution: float) -> "FrontierWeights":
        return cls(w_dist=1.0, w_visit=2.0 * resolution, w_gain=0.1 * resolution)


@dataclass(frozen=True)
class RrtParams:
    max_iterations: int = 4000
    step_size: float = 0.5
    rewire_radius: float = 1.0
    goal_bias: float = 0.1
    safety_margin: int = 2
    goal_tolerance: float = 0.2

    def __post_init__(self):
        if min(self.max_iterations, self.step_size, self.rewire_radius,
               self.goal_tolerance) <= 0 or self.safety_margin <= 0:
            raise ValueError("RRT parameters must be positive")
        if not (0.0 <= self.goal_bias <= 1.0):
            raise ValueError("goal_bias must lie in [0, 1]")

    @classmethod
    def from_resolution(cls, resolution: float, max_iterations: int = 4000) -> "RrtParams":
        return cls(max_iterations=max_iterations, step_size=5.0 * resolution,
                   rewire_radius=10.0 * resolution, goal_bias=0.1,
                   safety_margin=2, goal_tolerance=2.0 * resolution)


def inflated_occupancy(grid: OccupancyGrid, margin_cells: int) -> np.ndarray:
    """Occupancy dilated by a Euclidean disk of margin_cells (cached per grid)."""
    cached = grid._inflation_cache.get(margin_cells)
    if cached is not None:
        return cached
    if not grid.occupied.any():
        blocked = np.zeros_like(grid.occupied)
    else:
        blocked = distance_transform_edt(~grid.occupied) <= margin_cells
    grid._inflation_cache[margin_cells] = blocked
    return blocked


def extract_frontiers(grid: OccupancyGrid) -> set[tuple[int, int]]:
    """Explored free cells adjacent (4-connected) to unexplored free space."""
    free = ~grid.occupied
    unexplored_free = free & ~grid.explored
    near = np.zeros_like(free)
    near[1:, :] |= unexplored_free[:-1, :]
    near[:-1, :] |= unexplored_free[1:, :]
    near[:, 1:] |= unexplored_free[:, :-1]
    near[:, :-1] |= unexplored_free[:, 1:]
    mask = free & grid.explored & near
    return {(int(r), int(c)) for r, c in zip(*np.nonzero(mask))}


def grid_bfs_distances(grid: OccupancyGrid, start_cell: tuple[int, int]) -> np.ndarray:
    """4-connected BFS distance in meters over free cells; inf where unreachable."""
    free = ~grid.occupied
    dist = np.full(free.shape, np.inf)
    r0, c0 = start_cell
    if not grid.in_bounds_cell(r0, c0) or not free[r0, c0]:
        return dist
    dist[r0, c0] = 0.0
    frontier = np.zeros_like(free)
    frontier[r0, c0] = True
    step = 0
    while frontier.any():
        step += 1
        nxt = np.zeros_like(frontier)
        nxt[1:, :] |= frontier[:-1, :]
        nxt[:-1, :] |= frontier[1:, :]
        nxt[:, 1:] |= frontier[:, :-1]
        nxt[:, :-1] |= frontier[:, 1:]
        nxt &= free & np.isinf(dist)
        dist[nxt] = step * grid.resolution
        frontier = nxt
    return dist


def _coverage_gain(grid: OccupancyGrid, cell: tuple[int, int], gain_radius: float) -> int:
    """Count of unexplored free cells within gain_radius of the cell center."""
    res = grid.resolution
    reach = int(math.ceil(gain_radius / res)) + 1
    r, c = cell
    r0, r1 = max(r - reach, 0), min(r + reach + 1, grid.height)
    c0, c1 = max(c - reach, 0), min(c + reach + 1, grid.width)
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    within = (np.hypot(rr - r, cc - c) * res) <= gain_radius
    window = ~grid.occupied[r0:r1, c0:c1] & ~grid.explored[r0:r1, c0:c1]
    return int((window & within).sum())


def score_frontier(cell: tuple[int, int], pose: AgentPose, visit_counts: np.ndarray,
                   grid: OccupancyGrid, weights: FrontierWeights,
                   gain_radius: float = 5.0, _dists: np.ndarray | None = None) -> float:
    """Weighted frontier score (lower is better); raises if the cell is unreachable."""
    if _dists is None:
        _dists = grid_bfs_distances(grid, cell_of(pose.x, pose.y, grid.resolution))
    d = _dists[cell[0], cell[1]]
    if not np.isfinite(d):
        raise UnreachableFrontier(f"no free path to frontier {cell}")
    return (weights.w_dist * float(d)
            + weights.w_visit * float(visit_counts[cell[0], cell[1]])
            - weights.w_gain * _coverage_gain(grid, cell, gain_radius))


def select_frontier(frontiers: set[tuple[int, int]], pose: AgentPose,
                    visit_counts: np.ndarray, grid: OccupancyGrid,
                    weights: FrontierWeights, gain_radius: float = 5.0) -> tuple[int, int]:
    """Best-scoring reachable frontier; least-visited reachable free cell as fallback.

    Ties break on the smallest row-major cell index.  Unreachable frontiers are
    skipped; with no frontier left the fallback keeps the agent moving over
    already-explored space.
    """
    dists = grid_bfs_distances(grid, cell_of(pose.x, pose.y, grid.resolution))
    best = None
    best_key = None
    for cell in sorted(frontiers, key=lambda rc: rc[0] * grid.width + rc[1]):
        if not np.isfinite(dists[cell[0], cell[1]]):
            continue
        score = score_frontier(cell, pose, visit_counts, grid, weights,
                               gain_radius, _dists=dists)
        if best_key is None or score < best_key:
            best, best_key = cell, score
    if best is not None:
        return best
    reachable = np.isfinite(dists)
    if not reachable.any():
        raise NoReachableGoal("no reachable free cell")
    counts = np.where(reachable, visit_counts, np.iinfo(np.int64).max)
    idx = int(np.argmin(counts.reshape(-1), axis=0))  # row-major tie-break
    return (idx // grid.width, idx % grid.width)


def nearest_unblocked_cell(grid: OccupancyGrid, blocked: np.ndarray,
                           point: np.ndarray, max_radius_cells: int) -> np.ndarray | None:
    """Snap a point to the nearest inflation-free cell center (deterministic order)."""
    r0, c0 = cell_of(point[0], point[1], grid.resolution)
    if grid.in_bounds_cell(r0, c0) and not blocked[r0, c0]:
        return np.asarray(point, dtype=float)
    best = None
    best_key = None
    for dr in range(-max_radius_cells, max_radius_cells + 1):
        for dc in range(-max_radius_cells, max_radius_cells + 1):
            r, c = r0 + dr, c0 + dc
            if not grid.in_bounds_cell(r, c) or blocked[r, c]:
                continue
            key = (dr * dr + dc * dc, r * grid.width + c)
            if best_key is None or key < best_key:
                best, best_key = (r, c), key
    if best is None:
        return None
    return np.array(cell_center(best[0], best[1], grid.resolution))


def rrt_star(grid: OccupancyGrid, start: np.ndarray, goal: np.ndarray,
             params: RrtParams, rng: np.random.Generator) -> Path:
    """RRT* (sample, steer, choose parent, rewire) on the margin-inflated grid.

    Runs the full iteration budget, then returns the cheapest path to a node
    within goal_tolerance of the goal.  Deterministic for a fixed generator.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    blocked = inflated_occupancy(grid, params.safety_margin)
    res = grid.resolution

    def point_blocked(p: np.ndarray) -> bool:
        r, c = cell_of(p[0], p[1], res)
        return not grid.in_bounds_cell(r, c) or bool(blocked[r, c])

    if point_blocked(start) or point_blocked(goal):
        raise InvalidEndpoint("start or goal inside inflated obstacles")
    if np.array_equal(start, goal):
        return Path(start[None, :], 0.0)

    cap = params.max_iterations + 1
    pts = np.empty((cap, 2))
    costs = np.empty(cap)
    parents = np.full(cap, -1, dtype=np.int64)
    children: list[list[int]] = [[] for _ in range(cap)]
    pts[0] = start
    costs[0] = 0.0
    n = 1

    def edge_free(p: np.ndarray, q: np.ndarray) -> bool:
        return not segment_blocked(blocked, res, p, q)

    for _ in range(params.max_iterations):
        if rng.random() < params.goal_bias:
            sample = goal
        else:
            sample = rng.uniform((0.0, 0.0), (grid.x_extent, grid.y_extent))
        d2 = ((pts[:n] - sample) ** 2).sum(axis=1)
        j = int(np.argmin(d2))
        dist = math.sqrt(d2[j])
        if dist < 1e-12:
            continue
        if dist <= params.step_size:
            new = sample.copy()
        else:
            new = pts[j] + (sample - pts[j]) * (params.step_size / dist)
        if point_blocked(new) or not edge_free(pts[j], new):
            continue

        d2new = ((pts[:n] - new) ** 2).sum(axis=1)
        near = np.nonzero(d2new <= params.rewire_radius ** 2)[0]
        if near.size == 0:
            near = np.array([j])
        dnew = np.sqrt(d2new[near])
        order = np.argsort(costs[near] + dnew, kind="stable")
        parent = -1
        for o in order:
            i = int(near[o])
            if i == j or edge_free(pts[i], new):
                parent = i
                break
        if parent < 0:
            continue
        idx = n
        pts[idx] = new
        parents[idx] = parent
        costs[idx] = costs[parent] + math.hypot(*(new - pts[parent]))
        children[parent].append(idx)
        n += 1

        # Rewire neighbors through the new node, propagating cost improvements.
        for o in np.argsort(near, kind="stable"):
            i = int(near[o])
            if i == parent:
                continue
            alt = costs[idx] + dnew[o]
            if alt < costs[i] - 1e-12 and edge_free(new, pts[i]):
                children[parents[i]].remove(i)
                parents[i] = idx
                children[idx].append(i)
                delta = alt - costs[i]
                stack = [i]
                while stack:
                    k = stack.pop()
                    costs[k] += delta
                    stack.extend(children[k])

    goal_d = np.linalg.norm(pts[:n] - goal, axis=1)
    in_goal = np.nonzero(goal_d <= params.goal_tolerance)[0]
    if in_goal.size == 0:
        raise NoPath(f"goal not reached after {params.max_iterations} iterations")
    best = int(in_goal[np.argmin(costs[in_goal], axis=0)])
    waypoints = []
    node = best
    while node >= 0:
        waypoints.append(pts[node])
        node = int(parents[node])
    waypoints.reverse()
    return Path.from_waypoints(np.array(waypoints))


def smooth_path(path: Path, grid: OccupancyGrid, margin: int) -> Path:
    """Greedy shortcutting: replace waypoint runs by straight collision-free segments."""
    blocked = inflated_occupancy(grid, margin)
    wps = path.waypoints
    if wps.shape[0] <= 2:
        return Path.from_waypoints(wps.copy())
    out = [wps[0]]
    i = 0
    last = wps.shape[0] - 1
    while i < last:
        j = last
        while j > i + 1:
            if not segment_blocked(blocked, grid.resolution, wps[i], wps[j]):
                break
            j -= 1
        out.append(wps[j])
        i = j
    return Path.from_waypoints(np.array(out))


def lookahead_control(pose: AgentPose, path: Path, lookahead_distance: float,
                      v_max: float, omega_max: float,
                      goal_tolerance: float = 0.2) -> AgentCommand:
    """Pure-pursuit command toward the first path point one lookahead away.

    Speed scales down with bearing error; the command is zero once the agent
    is within goal_tolerance of the final waypoint.
    """
    wps = path.waypoints
    pos = pose.position()
    if np.linalg.norm(pos - wps[-1]) <= goal_tolerance:
        return AgentCommand(0.0, 0.0)
    i = int(np.argmin(np.linalg.norm(wps - pos, axis=1)))
    s = float(np.linalg.norm(wps[i] - pos))
    while i + 1 < wps.shape[0] and s < lookahead_distance:
        s += float(np.linalg.norm(wps[i + 1] - wps[i]))
        i += 1
    target = wps[i]
    alpha = wrap_angle(math.atan2(target[1] - pose.y, target[0] - pose.x) - pose.theta)
    v = v_max * (1.0 - abs(alpha) / math.pi)
    omega = 2.0 * v * math.sin(alpha) / lookahead_distance
    omega = max(-omega_max, min(omega_max, omega))
    return AgentCommand(v, omega)


def plan_frontier(pose: AgentPose, grid: OccupancyGrid, visit_counts: np.ndarray,
                  weights: FrontierWeights, rrt_params: RrtParams,
                  rng: np.random.Generator, gain_radius: float = 5.0) -> Path:
    """Select a frontier goal, plan with RRT*, smooth, and bump its visit count."""
    frontiers = extract_frontiers(grid)
    goal_cell = select_frontier(frontiers, pose, visit_counts, grid, weights, gain_radius)
    visit_counts[goal_cell[0], goal_cell[1]] += 1
    blocked = inflated_occupancy(grid, rrt_params.safety_margin)
    start = nearest_unblocked_cell(grid, blocked, pose.position(), 12)
    goal = nearest_unblocked_cell(
        grid, blocked, np.array(cell_center(*goal_cell, grid.resolution)), 12)
    if start is None or goal is None:
        raise NoReachableGoal("no inflation-free cell near start or goal")
    path = rrt_star(grid, start, goal, rrt_params, rng)
    return smooth_path(path, grid, rrt_params.safety_margin)


def choose_tracking_target(bank: FilterBank, sigma_threshold: float) -> int | None:
    """Most uncertain detected target if any exceeds the threshold (ties: lowest id)."""
    if not bank.detected:
        return None
    best_id = None
    best_val = -math.inf
    for j in sorted(bank.detected):
        val = uncertainty(bank.beliefs[j])
        if val > best_val:
            best_id, best_val = j, val
    if best_val <= sigma_threshold:
        return None
    return best_id


def plan_uncertainty_hybrid(bank: FilterBank, sigma_threshold: float, pose: AgentPose,
                            grid: OccupancyGrid, visit_counts: np.ndarray,
                            weights: FrontierWeights, rrt_params: RrtParams,
                            rng: np.random.Generator,
                            gain_radius: float = 5.0) -> tuple[PlannerMode, Path]:
    """Explore until some detected target grows too uncertain, then chase it.

    Falls back to exploration for the step when the tracking goal cannot be
    placed in inflation-free space.
    """
    target = choose_tracking_target(bank, sigma_threshold)
    if target is not None:
        blocked = inflated_occupancy(grid, rrt_params.safety_margin)
        goal = nearest_unblocked_cell(grid, blocked,
                                      bank.beliefs[target].position(), 4)
        start = nearest_unblocked_cell(grid, blocked, pose.position(), 12)
        if goal is not None and start is not None:
            path = rrt_star(grid, start, goal, rrt_params, rng)
            return PlannerMode.track(target), smooth_path(path, grid, rrt_params.safety_margin)
    path = plan_frontier(pose, grid, visit_counts, weights, rrt_params, rng, gain_radius)
    return PlannerMode.explore(), path


@dataclass(frozen=True)
class TimeHybridState:
    """Countdown state of the time-based hybrid planner."""

    tracking_id: int | None = None
    remaining: int = 0
    prev_detected: frozenset[int] = frozenset()

    @classmethod
    def initial(cls) -> "TimeHybridState":
        return cls()


def step_time_hybrid(state: TimeHybridState, detected: set[int],
                     track_duration: int) -> tuple[TimeHybridState, PlannerMode]:
    """Advance the tracking countdown for one decision step.

    A fresh detection (an id newly joining the detected set) starts a bout of
    exactly track_duration Track steps; losing the tracked target or expiry
    reverts to exploration until the next fresh detection.
    """
    fresh = detected - state.prev_detected
    snapshot = frozenset(detected)
    if (state.tracking_id is not None and state.tracking_id in detected
            and state.remaining > 0):
        return (TimeHybridState(state.tracking_id, state.remaining - 1, snapshot),
                PlannerMode.track(state.tracking_id))
    if fresh:
        target = min(fresh)
        return (TimeHybridState(target, track_duration - 1, snapshot),
                PlannerMode.track(target))
    return TimeHybridState(None, 0, snapshot), PlannerMode.explore()


def plan_time_hybrid(bank: FilterBank, state: TimeHybridState, track_duration: int,
                     pose: AgentPose, grid: OccupancyGrid, visit_counts: np.ndarray,
                     weights: FrontierWeights, rrt_params: RrtParams,
                     rng: np.random.Generator, gain_radius: float = 5.0,
                     ) -> tuple[PlannerMode, Path, TimeHybridState]:
    """Track a freshly detected target for a fixed number of steps, then explore."""
    new_state, mode = step_time_hybrid(state, set(bank.detected), track_duration)
    if mode.kind == "track":
        blocked = inflated_occupancy(grid, rrt_params.safety_margin)
        goal = nearest_unblocked_cell(grid, blocked,
                                      bank.beliefs[mode.target_id].position(), 4)
        start = nearest_unblocked_cell(grid, blocked, pose.position(), 12)
        if goal is not None and start is not None:
            path = rrt_star(grid, start, goal, rrt_params, rng)
            return mode, smooth_path(path, grid, rrt_params.safety_margin), new_state
        # Goal unreachable this step: keep the bout but fall back to an
        # exploration path so the agent does not stall.
    path = plan_frontier(pose, grid, visit_counts, weights, rrt_params, rng, gain_radius)
    return mode, path, new_state
