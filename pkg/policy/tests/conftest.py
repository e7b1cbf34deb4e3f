import base64
import json

import numpy as np
import pytest
import torch

from trackpolicy.data import Window
from trackpolicy.networks import NetworkConfig

torch.set_num_threads(1)


def tiny_config(**kw) -> NetworkConfig:
    defaults = dict(ego_size=16, patch=4, n_max=4, d_model=32, ctx_dim=32,
                    t_o=2, t_a=8, unet_channels=(16, 32), step_embed_dim=32,
                    map_layers=1, target_layers=1)
    defaults.update(kw)
    return NetworkConfig(**defaults)


def constant_window(omega=0.2, v=0.4, t_o=2, t_a=8, size=16, n_max=4,
                    masked=True) -> Window:
    ego = np.zeros((t_o, size, size), dtype=np.uint8)
    feats = np.zeros((t_o, n_max, 6))
    if masked:
        feats[..., 5] = 1.0
    actions = np.tile([v, omega], (t_a, 1))
    return Window(ego, feats, actions)


def write_episode_jsonl(path, n_steps, ego_size=16, n_max=4, seed=0,
                        expert_id="frontier"):
    """Write a synthetic episode in the documented JSONL format."""
    rng = np.random.default_rng(seed)
    header = {"version": 1, "map_path": "none.pgm", "resolution": 0.1,
              "N_max": n_max, "ego_size": ego_size,
              "fov": {"radius": 2.0, "half_angle": 1.0472}, "seed": seed,
              "expert_id": expert_id, "N_y": 3}
    lines = [json.dumps(header)]
    for t in range(n_steps):
        ego = rng.integers(0, 3, size=(ego_size, ego_size), dtype=np.uint8)
        features = []
        for i in range(n_max):
            features.append({"mu": [float(rng.normal()), float(rng.normal())],
                             "sigma": [1.0, 0.0, 1.0],
                             "mask": int(i >= 2)})
        lines.append(json.dumps({
            "t": t, "pose": [0.0, 0.0, 0.0],
            "ego_map": base64.b64encode(ego.tobytes()).decode("ascii"),
            "features": features,
            "action": [float(rng.uniform(0, 1)), float(rng.uniform(-1, 1))],
            "mode": "explore", "expert_id": expert_id}))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture
def rng():
    return np.random.default_rng(7)
