"""Policy networks: map encoder (CNN patches + transformer), masked target
encoder, fused observation context, conditional 1-D U-Net noise predictor,
and the behavior-cloning head."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn


class ShapeError(Exception):
    """Input tensor does not match the configured geometry."""


@dataclass
class NetworkConfig:
    ego_size: int = 64
    patch: int = 8
    n_max: int = 8
    d_model: int = 64
    map_layers: int = 2
    target_layers: int = 2
    heads: int = 4
    ctx_dim: int = 128
    t_o: int = 2
    t_a: int = 16
    action_dim: int = 2
    unet_channels: tuple = (64, 128)
    step_embed_dim: int = 64

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unet_channels"] = list(self.unet_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["unet_channels"] = tuple(d["unet_channels"])
        return cls(**d)


class MapEncoder(nn.Module):
    """CNN features cut into non-overlapping patches, then a transformer."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        if cfg.ego_size % cfg.patch != 0:
            raise ValueError("ego_size must be a multiple of the patch size")
        self.cfg = cfg
        self.cnn = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1), nn.GELU(),
            nn.Conv2d(16, 32, 3, padding=1), nn.GELU(),
        )
        n_tokens = (cfg.ego_size // cfg.patch) ** 2
        self.embed = nn.Linear(32 * cfg.patch * cfg.patch, cfg.d_model)
        self.pos = nn.Parameter(torch.zeros(1, n_tokens, cfg.d_model))
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.d_model, nhead=cfg.heads, dim_feedforward=2 * cfg.d_model,
            batch_first=True, dropout=0.0)
        self.transformer = nn.TransformerEncoder(layer, cfg.map_layers)

    def forward(self, ego: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, S, S) normalized map -> (tokens (B, N, d), pooled (B, d))."""
        if ego.dim() != 3 or ego.shape[-1] != self.cfg.ego_size \
                or ego.shape[-2] != self.cfg.ego_size:
            raise ShapeError(f"expected (B, {self.cfg.ego_size}, {self.cfg.ego_size}) map")
        feats = self.cnn(ego.unsqueeze(1))  # (B, 32, S, S)
        p = self.cfg.patch
        b, c, s, _ = feats.shape
        g = s // p
        patches = feats.reshape(b, c, g, p, g, p).permute(0, 2, 4, 1, 3, 5)
        patches = patches.reshape(b, g * g, c * p * p)
        tokens = self.transformer(self.embed(patches) + self.pos)
        return tokens, tokens.mean(dim=1)


class TargetEncoder(nn.Module):
    """Slot MLP + masked self-attention + masked mean pooling.

    Masked slots are excluded from attention keys and from the pool, so they
    cannot influence the context; an all-masked input returns a learned null
    vector.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.mlp = nn.Sequential(
            nn.Linear(5, cfg.d_model), nn.GELU(),
            nn.Linear(cfg.d_model, cfg.d_model),
        )
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.d_model, nhead=cfg.heads, dim_feedforward=2 * cfg.d_model,
            batch_first=True, dropout=0.0)
        self.transformer = nn.TransformerEncoder(layer, cfg.target_layers,
                                                 enable_nested_tensor=False)
        self.null_context = nn.Parameter(torch.zeros(cfg.d_model))

    def forward(self, slots: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, N_max, 5) slot features + (B, N_max) bool mask -> (B, d)."""
        if slots.dim() != 3 or slots.shape[1] != self.cfg.n_max or slots.shape[2] != 5:
            raise ShapeError(f"expected (B, {self.cfg.n_max}, 5) slot features")
        mask = mask.bool()
        all_masked = mask.all(dim=1)
        # Fully masked rows would NaN the attention softmax; give them one
        # dummy key and overwrite the pooled result with the null vector.
        safe_mask = mask.clone()
        safe_mask[all_masked, 0] = False
        emb = self.mlp(slots)
        out = self.transformer(emb, src_key_padding_mask=safe_mask)
        keep = (~mask).float().unsqueeze(-1)
        pooled = (out * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        return torch.where(all_masked.unsqueeze(-1), self.null_context, pooled)


class ObservationEncoder(nn.Module):
    """Fuses per-frame map and target embeddings into one context vector."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.map_encoder = MapEncoder(cfg)
        self.target_encoder = TargetEncoder(cfg)
        self.fuse = nn.Sequential(
            nn.Linear(2 * cfg.d_model, cfg.ctx_dim), nn.GELU(),
            nn.Linear(cfg.ctx_dim, cfg.ctx_dim),
        )

    def forward(self, ego: torch.Tensor, slots: torch.Tensor,
                mask: torch.Tensor) -> torch.Tensor:
        """(B, T_o, S, S), (B, T_o, N, 5), (B, T_o, N) -> (B, T_o * ctx_dim)."""
        if ego.dim() != 4 or ego.shape[1] != self.cfg.t_o:
            raise ShapeError(f"expected (B, {self.cfg.t_o}, S, S) observation maps")
        b, t_o = ego.shape[:2]
        flat_ego = ego.reshape(b * t_o, *ego.shape[2:])
        flat_slots = slots.reshape(b * t_o, *slots.shape[2:])
        flat_mask = mask.reshape(b * t_o, mask.shape[2])
        _, map_pooled = self.map_encoder(flat_ego)
        target_ctx = self.target_encoder(flat_slots, flat_mask)
        fused = self.fuse(torch.cat([map_pooled, target_ctx], dim=-1))
        return fused.reshape(b, t_o * self.cfg.ctx_dim)


def sinusoidal_embedding(k: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32,
                                                        device=k.device) / half)
    ang = k.float().unsqueeze(-1) * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class FiLMResBlock(nn.Module):
    def __init__(self, channels: int, cond_dim: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 5, padding=2)
        self.norm1 = nn.GroupNorm(8, channels)
        self.conv2 = nn.Conv1d(channels, channels, 5, padding=2)
        self.norm2 = nn.GroupNorm(8, channels)
        self.film = nn.Linear(cond_dim, 2 * channels)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        scale, shift = self.film(cond).chunk(2, dim=-1)
        h = self.norm1(self.conv1(x))
        h = h * (1.0 + scale.unsqueeze(-1)) + shift.unsqueeze(-1)
        h = self.act(h)
        h = self.norm2(self.conv2(h))
        return self.act(h + x)


class ConditionalUNet1d(nn.Module):
    """Small 1-D U-Net over the action sequence, FiLM-conditioned on the
    observation context and the diffusion-step embedding."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1 = cfg.unet_channels
        cond_dim = cfg.t_o * cfg.ctx_dim + cfg.step_embed_dim
        self.step_mlp = nn.Sequential(
            nn.Linear(cfg.step_embed_dim, cfg.step_embed_dim), nn.GELU(),
            nn.Linear(cfg.step_embed_dim, cfg.step_embed_dim),
        )
        self.inp = nn.Conv1d(cfg.action_dim, c0, 5, padding=2)
        self.down_block = FiLMResBlock(c0, cond_dim)
        self.down = nn.Conv1d(c0, c1, 4, stride=2, padding=1)
        self.mid_block = FiLMResBlock(c1, cond_dim)
        self.up = nn.ConvTranspose1d(c1, c0, 4, stride=2, padding=1)
        self.up_block = FiLMResBlock(c0, cond_dim)
        self.out = nn.Conv1d(c0, cfg.action_dim, 5, padding=2)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, noisy_actions: torch.Tensor, k: torch.Tensor,
                context: torch.Tensor) -> torch.Tensor:
        """(B, T_a, 2) noisy actions, (B,) steps, (B, ctx) -> predicted noise."""
        if noisy_actions.dim() != 3 or noisy_actions.shape[1] != self.cfg.t_a \
                or noisy_actions.shape[2] != self.cfg.action_dim:
            raise ShapeError(
                f"expected (B, {self.cfg.t_a}, {self.cfg.action_dim}) actions")
        cond = torch.cat([context,
                          self.step_mlp(sinusoidal_embedding(k, self.cfg.step_embed_dim))],
                         dim=-1)
        x = noisy_actions.permute(0, 2, 1)
        h0 = self.down_block(self.inp(x), cond)
        h1 = self.mid_block(self.down(h0), cond)
        h2 = self.up_block(self.up(h1) + h0, cond)
        return self.out(h2).permute(0, 2, 1)


class DiffusionPolicy(nn.Module):
    """Observation encoders plus the conditional noise predictor."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.obs_encoder = ObservationEncoder(cfg)
        self.unet = ConditionalUNet1d(cfg)

    def encode(self, ego, slots, mask) -> torch.Tensor:
        return self.obs_encoder(ego, slots, mask)

    def predict_noise(self, context, noisy_actions, k) -> torch.Tensor:
        return self.unet(noisy_actions, k, context)

    def forward(self, ego, slots, mask, noisy_actions, k) -> torch.Tensor:
        return self.predict_noise(self.encode(ego, slots, mask), noisy_actions, k)


class BCPolicy(nn.Module):
    """Deterministic regression from the observation context to one action."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.obs_encoder = ObservationEncoder(cfg)
        self.head = nn.Sequential(
            nn.Linear(cfg.t_o * cfg.ctx_dim, cfg.ctx_dim), nn.GELU(),
            nn.Linear(cfg.ctx_dim, cfg.action_dim),
        )

    def forward(self, ego, slots, mask) -> torch.Tensor:
        return self.head(self.obs_encoder(ego, slots, mask))
