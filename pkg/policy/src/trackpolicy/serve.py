"""Bridge server: answers workbench observation messages with action sequences.

Speaks protocol v1 over stdin/stdout: sends hello, then replies to each obs
message with T_a (v, omega) pairs from the loaded checkpoint (reverse
diffusion or a BC forward pass, repeated over the horizon).
"""

from __future__ import annotations

import base64
import json
import sys

import numpy as np
import torch

from .data import normalize_ego
from .sampling import ddpm_sample

PROTOCOL_VERSION = 1


def _emit(obj: dict, stream) -> None:
    stream.write(json.dumps(obj, separators=(",", ":")) + "\n")
    stream.flush()


def observations_to_tensors(observations: list[dict], ego_size: int, n_max: int):
    egos, slots, masks = [], [], []
    for obs in observations:
        raw = base64.b64decode(obs["ego_map"])
        ego = np.frombuffer(raw, dtype=np.uint8).reshape(ego_size, ego_size)
        egos.append(normalize_ego(ego))
        slot = np.zeros((n_max, 5), dtype=np.float32)
        mask = np.ones(n_max, dtype=bool)
        for i, f in enumerate(obs["features"][:n_max]):
            slot[i, :2] = f["mu"]
            slot[i, 2:5] = f["sigma"]
            mask[i] = bool(f["mask"])
        slots.append(slot)
        masks.append(mask)
    return (torch.from_numpy(np.stack(egos)),
            torch.from_numpy(np.stack(slots)),
            torch.from_numpy(np.stack(masks)))


def serve(network, normalizer, schedule, kind: str, seed: int = 0,
          reply_log=None, stdin=None, stdout=None, name: str = "trackpolicy",
          threads: int = 1) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    torch.set_num_threads(threads)
    cfg = network.cfg
    network.eval()
    replies = []
    _emit({"kind": "hello", "version": PROTOCOL_VERSION, "name": name}, stdout)
    exit_code = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            _emit({"kind": "error", "message": f"undecodable message: {e}"}, stdout)
            exit_code = 1
            break
        kind_in = msg.get("kind")
        if kind_in == "bye":
            break
        if kind_in != "obs":
            _emit({"kind": "error", "message": f"unexpected kind {kind_in!r}"}, stdout)
            exit_code = 1
            break
        observations = msg.get("observations")
        if not isinstance(observations, list) or len(observations) != cfg.t_o:
            got = len(observations) if isinstance(observations, list) else "none"
            _emit({"kind": "error",
                   "message": f"expected {cfg.t_o} observations, got {got}"}, stdout)
            exit_code = 1
            break
        try:
            ego, slots, mask = observations_to_tensors(
                observations, cfg.ego_size, cfg.n_max)
        except (KeyError, ValueError) as e:
            _emit({"kind": "error", "message": f"bad observation payload: {e}"}, stdout)
            exit_code = 1
            break
        t = int(msg.get("t", 0))
        # Re-seeded per request so identical observations yield identical replies.
        gen = torch.Generator().manual_seed(seed * 1000003 + t)
        if kind == "diffusion":
            actions = ddpm_sample(ego, slots, mask, network, schedule, gen, normalizer)
        else:
            with torch.no_grad():
                one = network(ego.unsqueeze(0), slots.unsqueeze(0), mask.unsqueeze(0))
            act = normalizer.decode(one[0].numpy().astype(np.float64))
            actions = np.tile(act, (cfg.t_a, 1))
        payload = [[float(v), float(w)] for v, w in actions]
        replies.append({"t": t, "actions": payload})
        _emit({"kind": "action", "t": t, "actions": payload}, stdout)
    if reply_log:
        with open(reply_log, "w", encoding="utf-8") as f:
            json.dump(replies, f)
    return exit_code


def serve_checkpoint(checkpoint_path, mode: str | None = None, seed: int = 0,
                     reply_log=None, name: str = "trackpolicy") -> int:
    from .training import load_checkpoint

    network, normalizer, schedule, kind = load_checkpoint(checkpoint_path)
    if mode is not None and mode != kind:
        print(f"checkpoint holds a {kind} model, cannot serve as {mode}",
              file=sys.stderr)
        return 2
    return serve(network, normalizer, schedule, kind, seed=seed,
                 reply_log=reply_log, name=name)
