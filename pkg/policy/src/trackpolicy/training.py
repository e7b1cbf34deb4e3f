"""Training loops for the diffusion policy and the behavior-cloning baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .data import ActionNormalizer, Window, normalize_ego
from .networks import BCPolicy, DiffusionPolicy, NetworkConfig
from .schedule import NoiseSchedule


class NonFiniteLoss(Exception):
    """Training loss became NaN/inf; aborted with diagnostics."""


@dataclass
class Batch:
    ego: torch.Tensor      # (B, T_o, S, S) float
    slots: torch.Tensor    # (B, T_o, N_max, 5) float
    mask: torch.Tensor     # (B, T_o, N_max) bool
    actions: torch.Tensor  # (B, T_a, 2) float, normalized


def windows_to_tensors(windows: list[Window], normalizer: ActionNormalizer,
                       device="cpu") -> Batch:
    ego = torch.from_numpy(np.stack([normalize_ego(w.ego) for w in windows]))
    feats = np.stack([w.features for w in windows])
    slots = torch.from_numpy(feats[..., :5].astype(np.float32))
    mask = torch.from_numpy(feats[..., 5] >= 0.5)
    actions = torch.from_numpy(np.stack(
        [normalizer.encode(w.actions) for w in windows]).astype(np.float32))
    return Batch(ego.to(device), slots.to(device), mask.to(device),
                 actions.to(device))


def sample_batch(windows: list[Window], normalizer: ActionNormalizer,
                 batch_size: int, rng: np.random.Generator, device="cpu") -> Batch:
    idx = rng.integers(len(windows), size=batch_size)
    return windows_to_tensors([windows[i] for i in idx], normalizer, device)


def ddpm_train_step(batch: Batch, network: DiffusionPolicy, schedule: NoiseSchedule,
                    optimizer: torch.optim.Optimizer,
                    generator: torch.Generator | None = None,
                    noise: torch.Tensor | None = None,
                    k: torch.Tensor | None = None) -> float:
    """One noise-prediction step: sample k and eps, minimize ||eps - eps_hat||^2.

    noise / k overrides exist for deterministic tests (e.g. a predictor stub
    that returns the exact injected noise).
    """
    b = batch.actions.shape[0]
    if k is None:
        k = torch.randint(1, schedule.steps + 1, (b,), generator=generator)
    if noise is None:
        noise = torch.randn(batch.actions.shape, generator=generator)
    signal = torch.as_tensor(schedule.signal_factor, dtype=torch.float32)[k]
    scale = torch.as_tensor(schedule.noise_factor, dtype=torch.float32)[k]
    noisy = signal[:, None, None] * batch.actions + scale[:, None, None] * noise

    optimizer.zero_grad(set_to_none=True)
    pred = network(batch.ego, batch.slots, batch.mask, noisy, k)
    loss = torch.mean((noise - pred) ** 2)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"diffusion loss is {loss.item()!r}")
    loss.backward()
    optimizer.step()
    return float(loss.item())


def bc_train_step(batch: Batch, network: BCPolicy,
                  optimizer: torch.optim.Optimizer) -> float:
    """One regression step onto the expert's first action of the window."""
    optimizer.zero_grad(set_to_none=True)
    pred = network(batch.ego, batch.slots, batch.mask)
    loss = torch.mean((batch.actions[:, 0, :] - pred) ** 2)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"bc loss is {loss.item()!r}")
    loss.backward()
    optimizer.step()
    return float(loss.item())


def train_policy(windows: list[Window], kind: str, config: NetworkConfig,
                 steps: int = 2000, batch_size: int = 32, lr: float = 1e-3,
                 seed: int = 0, schedule_steps: int = 50,
                 log_every: int = 0, threads: int = 1) -> dict:
    """Train either policy on pre-sliced windows; returns a checkpoint dict.

    Runs single-threaded by default: at these tensor sizes OpenMP
    oversubscription slows CPU training by an order of magnitude.
    """
    if kind not in ("diffusion", "bc"):
        raise ValueError(f"unknown model kind {kind!r}")
    torch.set_num_threads(threads)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    normalizer = ActionNormalizer.fit(windows)
    schedule = NoiseSchedule(schedule_steps)
    network = DiffusionPolicy(config) if kind == "diffusion" else BCPolicy(config)
    optimizer = torch.optim.Adam(network.parameters(), lr=lr)
    losses = []
    for step in range(steps):
        batch = sample_batch(windows, normalizer, batch_size, rng)
        if kind == "diffusion":
            loss = ddpm_train_step(batch, network, schedule, optimizer, gen)
        else:
            loss = bc_train_step(batch, network, optimizer)
        losses.append(loss)
        if log_every and (step + 1) % log_every == 0:
            recent = float(np.mean(losses[-log_every:]))
            print(f"step {step + 1}/{steps} loss {recent:.5f}")
    return {
        "kind": kind,
        "config": config.to_dict(),
        "schedule_steps": schedule_steps,
        "normalizer": normalizer.to_dict(),
        "state_dict": network.state_dict(),
        "losses": losses,
    }


def save_checkpoint(path, checkpoint: dict) -> None:
    torch.save(checkpoint, path)


def load_checkpoint(path):
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    config = NetworkConfig.from_dict(ckpt["config"])
    network = DiffusionPolicy(config) if ckpt["kind"] == "diffusion" else BCPolicy(config)
    network.load_state_dict(ckpt["state_dict"])
    network.eval()
    normalizer = ActionNormalizer.from_dict(ckpt["normalizer"])
    schedule = NoiseSchedule(ckpt["schedule_steps"])
    return network, normalizer, schedule, ckpt["kind"]
