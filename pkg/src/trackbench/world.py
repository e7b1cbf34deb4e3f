"""Ground-truth grid world: map loading, agent/target dynamics, sensing, exploration.

World frame: x in meters along grid rows (row 0 = top of the PGM), y along
columns.  All stochastic operations draw from an explicitly passed generator
in a documented fixed order so episodes replay bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    cell_of,
    sector_visible,
    to_world_frame,
    wrap_angle,
)

# Cell encodings used by egocentric crops and dataset records.
CROP_FREE = 0
CROP_OCCUPIED = 1
CROP_UNKNOWN = 2

TARGET_RESAMPLE_ATTEMPTS = 8


class MalformedMap(Exception):
    """Map file does not parse as binary PGM with the expected header."""


class EmptyFreeSpace(Exception):
    """Loaded map contains no free cell."""


@dataclass
class OccupancyGrid:
    """Binary occupancy grid plus the monotonically growing explored mask."""

    resolution: float
    occupied: np.ndarray
    explored: np.ndarray
    _inflation_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.occupied = np.asarray(self.occupied, dtype=bool)
        self.explored = np.asarray(self.explored, dtype=bool)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.occupied.ndim != 2 or self.occupied.size == 0:
            raise ValueError("occupancy array must be a non-empty 2-D grid")
        if self.explored.shape != self.occupied.shape:
            raise ValueError("explored mask shape must match the occupancy grid")

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def x_extent(self) -> float:
        return self.height * self.resolution

    @property
    def y_extent(self) -> float:
        return self.width * self.resolution

    @property
    def diagonal(self) -> float:
        return math.hypot(self.x_extent, self.y_extent)

    def in_bounds_cell(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def in_bounds_point(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.x_extent and 0.0 <= y < self.y_extent

    def is_free_point(self, x: float, y: float) -> bool:
        if not self.in_bounds_point(x, y):
            return False
        r, c = cell_of(x, y, self.resolution)
        return not self.occupied[r, c]

    def clone(self) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.occupied.copy(), self.explored.copy())


@dataclass(frozen=True)
class AgentPose:
    """SE(2) pose; theta is always stored wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass(frozen=True)
class AgentCommand:
    v: float
    omega: float


@dataclass
class TargetState:
    id: int
    state: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)

    def position(self) -> np.ndarray:
        return self.state[:2]


@dataclass(frozen=True)
class FieldOfView:
    """Sensing sector: max range plus half opening angle, with occlusion."""

    radius: float = 5.0
    half_angle: float = math.pi / 3.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("FoV radius must be positive")
        if not (0.0 < self.half_angle <= math.pi):
            raise ValueError("FoV half angle must lie in (0, pi]")


def _check_psd(name: str, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(m, m.T, atol=1e-9):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() < -1e-9:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass
class SimConfig:
    """Episode-level simulation parameters.

    w is the true target process noise covariance; if None the harness samples
    per-episode scales from target_noise_range (uniform, squared on the
    diagonal).  r_true is the true sensor noise; the filter bank usually runs
    with a more conservative value.
    """

    dt: float = 0.5
    v_max: float = 1.0
    omega_max: float = math.pi / 2.0
    fov: FieldOfView = field(default_factory=FieldOfView)
    a: np.ndarray = field(default_factory=lambda: np.eye(2))
    w: np.ndarray | None = None
    target_noise_range: tuple[float, float] = (0.8, 1.2)
    h: np.ndarray = field(default_factory=lambda: np.eye(2))
    r_true: np.ndarray = field(default_factory=lambda: np.diag([0.05 ** 2, 0.05 ** 2]))
    episode_length: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.episode_length <= 0:
            raise ValueError("episode_length must be positive")
        self.a = np.asarray(self.a, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        self.r_true = np.asarray(self.r_true, dtype=float)
        _check_psd("R", self.r_true)
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
            _check_psd("W", self.w)


def load_map(path, threshold: int = 128, resolution: float = 0.1) -> OccupancyGrid:
    """Load a binary (P5) grayscale PGM; gray < threshold marks a cell occupied."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise MalformedMap(f"cannot read map file: {e}") from e

    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if len(tokens) < 4:
        raise MalformedMap("truncated PGM header")
    if tokens[0] != b"P5":
        raise MalformedMap(f"expected magic P5, got {tokens[0]!r}")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise MalformedMap("non-numeric PGM dimensions") from e
    if width <= 0 or height <= 0:
        raise MalformedMap(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise MalformedMap(f"expected maxval 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    pixels = data[pos:pos + width * height]
    if len(pixels) < width * height:
        raise MalformedMap("truncated PGM pixel data")
    gray = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
    occupied = gray < threshold
    if occupied.all():
        raise EmptyFreeSpace("map has no free cell")
    return OccupancyGrid(resolution, occupied, np.zeros_like(occupied, dtype=bool))


def step_agent(pose: AgentPose, cmd: AgentCommand, dt: float, grid: OccupancyGrid) -> AgentPose:
    """Euler SE(2) update; a blocked or out-of-map endpoint freezes the position."""
    nx = pose.x + cmd.v * math.cos(pose.theta) * dt
    ny = pose.y + cmd.v * math.sin(pose.theta) * dt
    nth = wrap_angle(pose.theta + cmd.omega * dt)
    if grid.is_free_point(nx, ny):
        return AgentPose(nx, ny, nth)
    return AgentPose(pose.x, pose.y, nth)


def _noise_transform(cov: np.ndarray) -> np.ndarray:
    """Matrix L with L L^T = cov, tolerating semidefinite and zero covariances."""
    cov = np.asarray(cov, dtype=float)
    if not cov.any():
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


def step_targets(targets: list[TargetState], model: tuple[np.ndarray, np.ndarray],
                 dt: float, grid: OccupancyGrid, rng: np.random.Generator) -> list[TargetState]:
    """Propagate each target by y' = A y + w, w ~ N(0, W dt).

    Draw order is fixed (ascending target id); each attempt consumes one
    standard-normal vector from the stream.  A draw whose position lands in an
    occupied or out-of-map cell is rejected; after TARGET_RESAMPLE_ATTEMPTS
    failures the target keeps its previous state.
    """
    a, w = model
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    lw = _noise_transform(np.asarray(w, dtype=float) * dt)
    out = []
    for tgt in sorted(targets, key=lambda t: t.id):
        new_state = tgt.state
        for _ in range(TARGET_RESAMPLE_ATTEMPTS):
            eps = rng.standard_normal(n)
            cand = a @ tgt.state + lw @ eps
            if grid.is_free_point(cand[0], cand[1]):
                new_state = cand
                break
        out.append(TargetState(tgt.id, new_state))
    return out


def in_fov(pose: AgentPose, point: np.ndarray, grid: OccupancyGrid, fov: FieldOfView) -> bool:
    """True iff the point is in range, inside the sector, and not occluded."""
    vis = sector_visible(grid.occupied, grid.resolution, pose.as_tuple(),
                         fov.radius, fov.half_angle,
                         np.asarray(point, dtype=float)[None, :])
    return bool(vis[0])


def sense(pose: AgentPose, targets: list[TargetState], h: np.ndarray, r: np.ndarray,
          grid: OccupancyGrid, fov: FieldOfView,
          rng: np.random.Generator) -> list[tuple[int, np.ndarray]]:
    """One noisy measurement z = H y + eta per target whose true position is visible.

    Noise is drawn per detected target in ascending-id order; invisible targets
    consume nothing from the stream.
    """
    h = np.asarray(h, dtype=float)
    lr = _noise_transform(np.asarray(r, dtype=float))
    measurements = []
    for tgt in sorted(targets, key=lambda t: t.id):
        if in_fov(pose, tgt.position(), grid, fov):
            eta = lr @ rng.standard_normal(h.shape[0])
            measurements.append((tgt.id, h @ tgt.state + eta))
    return measurements


def update_explored(grid: OccupancyGrid, pose: AgentPose, fov: FieldOfView) -> OccupancyGrid:
    """Mark every cell whose center is currently visible as explored (in place)."""
    res = grid.resolution
    reach = int(math.ceil(fov.radius / res)) + 1
    ar, ac = cell_of(pose.x, pose.y, res)
    r0, r1 = max(ar - reach, 0), min(ar + reach + 1, grid.height)
    c0, c1 = max(ac - reach, 0), min(ac + reach + 1, grid.width)
    if r0 >= r1 or c0 >= c1:
        return grid
    sub = ~grid.explored[r0:r1, c0:c1]
    rows, cols = np.nonzero(sub)
    if rows.size == 0:
        return grid
    rows = rows + r0
    cols = cols + c0
    centers = np.stack([(rows + 0.5) * res, (cols + 0.5) * res], axis=1)
    vis = sector_visible(grid.occupied, res, pose.as_tuple(),
                         fov.radius, fov.half_angle, centers)
    grid.explored[rows[vis], cols[vis]] = True
    return grid


def egocentric_crop(grid: OccupancyGrid, pose: AgentPose, size: int) -> np.ndarray:
    """Local occupancy window centered on the agent, facing the +row axis.

    Each crop cell nearest-neighbor samples the global cell under the inverse
    rigid transform.  Out-of-map samples read occupied, unexplored in-map
    samples read unknown.
    """
    if size <= 0 or size % 2 != 0:
        raise ValueError("crop size must be a positive even number of cells")
    res = grid.resolution
    half = size // 2
    offs = (np.arange(size) - half) * res
    fwd, lat = np.meshgrid(offs, offs, indexing="ij")
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    px = pose.x + c * fwd - s * lat
    py = pose.y + s * fwd + c * lat
    rows = np.floor(px / res).astype(np.int64)
    cols = np.floor(py / res).astype(np.int64)
    inside = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)
    rr = np.clip(rows, 0, grid.height - 1)
    cc = np.clip(cols, 0, grid.width - 1)
    crop = np.where(grid.occupied[rr, cc], CROP_OCCUPIED, CROP_FREE)
    crop = np.where(grid.explored[rr, cc], crop, CROP_UNKNOWN)
    crop = np.where(inside, crop, CROP_OCCUPIED)
    return crop.astype(np.uint8)
