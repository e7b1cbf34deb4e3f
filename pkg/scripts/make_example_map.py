#!/usr/bin/env python3
"""Generate the example office-style map shipped with the repository.

Layout: outer walls, two partition walls with wide doorways, and a few
free-standing blocks.  Doorways are kept wider than twice the planner safety
margin so inflation never seals a room.
"""

import argparse

import numpy as np


CLEARANCE = 9  # min free cells between separate obstacles; keeps inflated
               # corridors wide enough for continuous sampling-based planning


def _place_block(gray: np.ndarray, r: int, c: int, h: int, w: int) -> None:
    """Add a free-standing block only if it keeps CLEARANCE to existing walls."""
    occ = gray < 128
    r0, r1 = max(r - CLEARANCE, 0), min(r + h + CLEARANCE, gray.shape[0])
    c0, c1 = max(c - CLEARANCE, 0), min(c + w + CLEARANCE, gray.shape[1])
    if occ[r0:r1, c0:c1].any():
        return
    gray[r:r + h, c:c + w] = 0


def office_map(size: int = 96) -> np.ndarray:
    gray = np.full((size, size), 255, dtype=np.uint8)
    wall = 0
    t = 2  # wall thickness
    gray[:t, :] = wall
    gray[-t:, :] = wall
    gray[:, :t] = wall
    gray[:, -t:] = wall

    third = size // 3
    # Horizontal partition with two doorways.
    gray[third:third + t, :] = wall
    gray[third:third + t, size // 6: size // 6 + 12] = 255
    gray[third:third + t, 4 * size // 6: 4 * size // 6 + 12] = 255
    # Vertical partition below it with one doorway.
    gray[third:, 2 * third:2 * third + t] = wall
    gray[2 * third: 2 * third + 12, 2 * third:2 * third + t] = 255

    # Free-standing obstacles, skipped where they would pinch a corridor.
    _place_block(gray, int(0.12 * size), int(0.55 * size), 6, 6)
    _place_block(gray, int(0.55 * size), int(0.15 * size), 8, 5)
    _place_block(gray, int(0.75 * size), int(0.40 * size), 5, 8)
    return gray


def write_pgm(path: str, gray: np.ndarray) -> None:
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=96)
    parser.add_argument("--out", default="maps/office_96.pgm")
    args = parser.parse_args()
    write_pgm(args.out, office_map(args.size))
    print(f"wrote {args.out} ({args.size}x{args.size})")


if __name__ == "__main__":
    main()
