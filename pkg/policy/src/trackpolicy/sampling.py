"""Reverse-diffusion action sampling."""

from __future__ import annotations

import numpy as np
import torch

from .data import ActionNormalizer
from .networks import DiffusionPolicy
from .schedule import NoiseSchedule


@torch.no_grad()
def ddpm_sample(ego: torch.Tensor, slots: torch.Tensor, mask: torch.Tensor,
                network: DiffusionPolicy, schedule: NoiseSchedule,
                generator: torch.Generator,
                normalizer: ActionNormalizer | None = None) -> np.ndarray:
    """Denoise pure noise into a (T_a, 2) action sequence for one observation.

    Iterates a^{k-1} = alpha_k (a^k - gamma_k eps_hat) + sigma_k z from k = K
    down to 1, omitting the noise term at k = 1; the result is mapped back to
    (v, omega) units when a normalizer is given.
    """
    cfg = network.cfg
    context = network.encode(ego.unsqueeze(0), slots.unsqueeze(0), mask.unsqueeze(0))
    a = torch.randn((1, cfg.t_a, cfg.action_dim), generator=generator)
    for k in range(schedule.steps, 0, -1):
        eps = network.predict_noise(context, a, torch.tensor([k]))
        a = schedule.alpha[k - 1] * (a - schedule.gamma[k - 1] * eps)
        if k > 1:
            a = a + schedule.sigma[k - 1] * torch.randn(a.shape, generator=generator)
    out = a[0].numpy().astype(np.float64)
    if normalizer is not None:
        out = normalizer.decode(out)
    return out
