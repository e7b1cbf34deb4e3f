"""Reading demonstration datasets written by the workbench (JSONL episodes).

Only the documented on-disk format is consumed here; the simulator package is
never imported.  Each episode file carries a one-line header followed by one
JSON object per step with a base64 ego map, fixed-size target feature slots,
and the expert action.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Episode:
    ego: np.ndarray       # (L, S, S) uint8, values 0 free / 1 occupied / 2 unknown
    features: np.ndarray  # (L, N_max, 6): mu(2), sigma upper-tri(3), mask(1)
    actions: np.ndarray   # (L, 2) float
    meta: dict


@dataclass
class Window:
    ego: np.ndarray       # (T_o, S, S)
    features: np.ndarray  # (T_o, N_max, 6)
    actions: np.ndarray   # (T_a, 2)


def parse_episode(path) -> Episode:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty episode file")
    header = json.loads(lines[0])
    if header.get("version") != 1:
        raise ValueError(f"{path}: unsupported episode version {header.get('version')!r}")
    size = int(header["ego_size"])
    n_max = int(header["N_max"])
    egos, feats, actions = [], [], []
    for line in lines[1:]:
        if not line:
            continue
        obj = json.loads(line)
        raw = base64.b64decode(obj["ego_map"])
        egos.append(np.frombuffer(raw, dtype=np.uint8).reshape(size, size))
        slots = np.zeros((n_max, 6), dtype=np.float64)
        for i, f in enumerate(obj["features"]):
            slots[i, :2] = f["mu"]
            slots[i, 2:5] = f["sigma"]
            slots[i, 5] = f["mask"]
        feats.append(slots)
        actions.append(obj["action"])
    return Episode(np.stack(egos), np.stack(feats),
                   np.asarray(actions, dtype=np.float64), header)


def load_dataset(dataset_dir) -> list[Episode]:
    root = Path(dataset_dir)
    manifest = root / "manifest.json"
    if manifest.exists():
        files = json.loads(manifest.read_text(encoding="utf-8"))["files"]
        paths = [root / f for f in files]
    else:
        paths = sorted(root.glob("episode_*.jsonl"))
    if not paths:
        raise ValueError(f"no episode files under {root}")
    return [parse_episode(p) for p in paths]


def build_windows(episode: Episode, t_o: int, t_a: int) -> list[Window]:
    """One window per decision step with a full context and a full future."""
    if t_o < 1 or t_a < 1:
        raise ValueError("T_o and T_a must be at least 1")
    length = episode.ego.shape[0]
    out = []
    for t in range(t_o - 1, length - t_a + 1):
        out.append(Window(episode.ego[t - t_o + 1:t + 1],
                          episode.features[t - t_o + 1:t + 1],
                          episode.actions[t:t + t_a]))
    return out


def windows_from_dataset(dataset_dir, t_o: int, t_a: int) -> list[Window]:
    windows: list[Window] = []
    for episode in load_dataset(dataset_dir):
        windows.extend(build_windows(episode, t_o, t_a))
    return windows


@dataclass
class ActionNormalizer:
    """Per-dimension min/max mapping of actions onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, windows: list[Window]) -> "ActionNormalizer":
        stacked = np.concatenate([w.actions for w in windows], axis=0)
        return cls(stacked.min(axis=0), stacked.max(axis=0))

    def encode(self, actions: np.ndarray) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        scaled = 2.0 * (actions - self.lo) / span - 1.0
        return np.where(self.hi > self.lo, scaled, 0.0)

    def decode(self, normed: np.ndarray) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 0.0)
        return self.lo + (normed + 1.0) * 0.5 * span

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionNormalizer":
        return cls(np.asarray(d["lo"], dtype=np.float64),
                   np.asarray(d["hi"], dtype=np.float64))


def normalize_ego(ego: np.ndarray) -> np.ndarray:
    """Map {0 free, 1 occupied, 2 unknown} bytes to {0, 0.5, 1} floats."""
    return ego.astype(np.float32) * 0.5
