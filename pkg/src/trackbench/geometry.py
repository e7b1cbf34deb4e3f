"""Shared planar geometry: angle wrapping, frame transforms, and exact grid raycasts.

Grid convention used across the package: world x runs along array rows
(row 0 at the top of the map file), world y along columns.  A point (x, y)
in meters lives in cell (floor(x / res), floor(y / res)); cells are
half-open squares, so every point belongs to exactly one cell.
"""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def cell_of(x: float, y: float, resolution: float) -> tuple[int, int]:
    """Cell (row, col) containing the point (x, y)."""
    return int(math.floor(x / resolution)), int(math.floor(y / resolution))


def cell_center(row: int, col: int, resolution: float) -> tuple[float, float]:
    return (row + 0.5) * resolution, (col + 0.5) * resolution


def to_agent_frame(pose_xy_theta: tuple[float, float, float], p: np.ndarray) -> np.ndarray:
    """Rigid transform of a world point into the agent frame (forward = +x)."""
    x, y, th = pose_xy_theta
    c, s = math.cos(th), math.sin(th)
    dx, dy = p[0] - x, p[1] - y
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def to_world_frame(pose_xy_theta: tuple[float, float, float], p_local: np.ndarray) -> np.ndarray:
    x, y, th = pose_xy_theta
    c, s = math.cos(th), math.sin(th)
    return np.array([x + c * p_local[0] - s * p_local[1],
                     y + s * p_local[0] + c * p_local[1]])


def _crossing_params(a0: float, a1: np.ndarray, resolution: float) -> np.ndarray:
    """Parameters t in [0, 1] where rays a0 -> a1[i] cross gridlines of one axis.

    Returns a padded (N, K) matrix; unused entries hold 1.0, which is harmless
    because a duplicated boundary produces a zero-length interval whose midpoint
    falls in the endpoint cell anyway.
    """
    a1 = np.asarray(a1, dtype=float)
    lo = np.minimum(a0, a1)
    hi = np.maximum(a0, a1)
    first = np.floor(lo / resolution).astype(np.int64) + 1
    last = np.floor(hi / resolution).astype(np.int64)
    counts = np.maximum(last - first + 1, 0)
    kmax = int(counts.max()) if counts.size else 0
    if kmax == 0:
        return np.ones((a1.shape[0], 0))
    j = np.arange(kmax)[None, :]
    lines = (first[:, None] + j) * resolution
    d = a1 - a0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (lines - a0) / d[:, None]
    t = np.where((j < counts[:, None]) & (d[:, None] != 0.0), t, 1.0)
    return np.clip(t, 0.0, 1.0)


def segment_cell_points(p0: np.ndarray, ends: np.ndarray, resolution: float):
    """Sample one interior point per cell visited by each segment p0 -> ends[i].

    The segment is cut at every gridline crossing; the midpoints of the resulting
    pieces identify exactly the cells that contain at least one segment point
    (half-open cell semantics, ties at corners included).  Returns (rows, cols)
    int arrays of shape (N, K+1); duplicate cells may appear and are harmless
    for occupancy tests.
    """
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    tx = _crossing_params(p0[0], ends[:, 0], resolution)
    ty = _crossing_params(p0[1], ends[:, 1], resolution)
    n = ends.shape[0]
    bounds = np.concatenate([np.zeros((n, 1)), tx, ty, np.ones((n, 1))], axis=1)
    bounds.sort(axis=1)
    mids = 0.5 * (bounds[:, :-1] + bounds[:, 1:])
    pts = p0[None, None, :] + mids[:, :, None] * (ends - p0)[:, None, :]
    rows = np.floor(pts[:, :, 0] / resolution).astype(np.int64)
    cols = np.floor(pts[:, :, 1] / resolution).astype(np.int64)
    return rows, cols


def segment_blocked(occupied: np.ndarray, resolution: float,
                    p0: np.ndarray, p1: np.ndarray,
                    skip_end_cell: bool = False) -> bool:
    """True if the segment passes through an occupied or out-of-map cell.

    With skip_end_cell the destination cell itself does not block; this is the
    convention for visibility queries (a wall face is visible even though the
    ray terminates inside the wall cell).
    """
    blocked = segments_blocked(occupied, resolution, np.asarray(p0, dtype=float),
                               np.asarray(p1, dtype=float)[None, :], skip_end_cell)
    return bool(blocked[0])


def segments_blocked(occupied: np.ndarray, resolution: float,
                     p0: np.ndarray, ends: np.ndarray,
                     skip_end_cell: bool = False) -> np.ndarray:
    """Vectorized segment_blocked for many endpoints sharing one origin."""
    h, w = occupied.shape
    rows, cols = segment_cell_points(p0, ends, resolution)
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    hit = np.where(inside, occupied[np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)], True)
    if skip_end_cell:
        end_r = np.floor(ends[:, 0] / resolution).astype(np.int64)
        end_c = np.floor(ends[:, 1] / resolution).astype(np.int64)
        hit &= ~((rows == end_r[:, None]) & (cols == end_c[:, None]))
    return hit.any(axis=1)


def sector_visible(occupied: np.ndarray, resolution: float,
                   pose_xy_theta: tuple[float, float, float],
                   radius: float, half_angle: float,
                   ends: np.ndarray) -> np.ndarray:
    """Range, bearing, and line-of-sight test for many points at once.

    A point at (numerically) zero range passes the bearing test by convention.
    """
    x, y, th = pose_xy_theta
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    dx = ends[:, 0] - x
    dy = ends[:, 1] - y
    rng = np.hypot(dx, dy)
    in_range = rng <= radius
    bearing = np.arctan2(dy, dx)
    diff = np.abs(np.arctan2(np.sin(bearing - th), np.cos(bearing - th)))
    in_sector = (diff <= half_angle) | (rng < 1e-12)
    ok = in_range & in_sector
    visible = np.zeros(ends.shape[0], dtype=bool)
    if ok.any():
        blocked = segments_blocked(occupied, resolution, np.array([x, y]),
                                   ends[ok], skip_end_cell=True)
        visible[ok] = ~blocked
    return visible
