import numpy as np
import pytest

from trackbench.world import OccupancyGrid


def make_grid(occupied, resolution=0.1, explored=None) -> OccupancyGrid:
    occupied = np.asarray(occupied, dtype=bool)
    if explored is None:
        explored = np.zeros_like(occupied)
    return OccupancyGrid(resolution, occupied, np.asarray(explored, dtype=bool))


def empty_grid(shape=(40, 40), resolution=0.1, explored=False) -> OccupancyGrid:
    occ = np.zeros(shape, dtype=bool)
    exp = np.full(shape, explored, dtype=bool)
    return OccupancyGrid(resolution, occ, exp)


def write_pgm(path, gray, comment=None) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    header = f"P5\n{w} {h}\n" if comment is None else f"P5\n# {comment}\n{w} {h}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(b"255\n")
        f.write(gray.tobytes())


def random_room_map(rng, shape=(48, 48), n_blocks=6, block_size=6) -> np.ndarray:
    """Random obstacle blocks inside border walls; returns an occupancy array."""
    occ = np.zeros(shape, dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    for _ in range(n_blocks):
        r = int(rng.integers(2, shape[0] - block_size - 2))
        c = int(rng.integers(2, shape[1] - block_size - 2))
        hh = int(rng.integers(2, block_size))
        ww = int(rng.integers(2, block_size))
        occ[r:r + hh, c:c + ww] = True
    return occ


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
