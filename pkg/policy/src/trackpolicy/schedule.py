"""Cosine DDPM noise schedule and the forward noising process."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NoiseSchedule:
    """Denoising schedule over K steps.

    signal_factor[k] and noise_factor[k] (k = 0..K) scale the clean signal and
    the injected unit noise in the forward process; alpha/gamma/sigma (indexed
    by k-1 for step k = 1..K) drive the reverse iteration
    a^{k-1} = alpha_k (a^k - gamma_k eps_hat) + sigma_k z.
    """

    steps: int
    alpha: np.ndarray = field(init=False)
    gamma: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)
    signal_factor: np.ndarray = field(init=False)
    noise_factor: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("schedule needs at least one step")
        k = np.arange(self.steps + 1, dtype=np.float64)
        s = 0.008
        f = np.cos((k / self.steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        abar = f / f[0]                       # abar[0] = 1, abar[K] ~ 0
        beta = 1.0 - abar[1:] / abar[:-1]
        beta = np.clip(beta, 1e-8, 0.999)
        alpha_step = 1.0 - beta
        abar = np.concatenate([[1.0], np.cumprod(alpha_step)])

        self.signal_factor = np.sqrt(abar)
        self.noise_factor = np.sqrt(1.0 - abar)
        self.alpha = 1.0 / np.sqrt(alpha_step)
        self.gamma = beta / np.sqrt(1.0 - abar[1:])
        abar_prev = abar[:-1]
        post_var = beta * (1.0 - abar_prev) / (1.0 - abar[1:])
        self.sigma = np.sqrt(np.clip(post_var, 0.0, None))


def forward_noise(actions: np.ndarray, k: int, schedule: NoiseSchedule,
                  noise: np.ndarray) -> np.ndarray:
    """Noisy actions at diffusion step k: signal_k * a + noise_k * eps."""
    if not (1 <= k <= schedule.steps):
        raise ValueError(f"step {k} outside 1..{schedule.steps}")
    return (schedule.signal_factor[k] * np.asarray(actions, dtype=np.float64)
            + schedule.noise_factor[k] * np.asarray(noise, dtype=np.float64))
