"""Diffusion transformer backbone over motion latent tokens.

Each block runs FiLM-modulated self-attention over the motion tokens,
cross-attention to the conditioning sequence, and a FiLM-modulated
feed-forward layer (pre-norm residual layout throughout).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, OutOfRange
from .layers import FeedForward, MultiHeadAttention, sinusoidal_positions


@dataclass
class DiTConfig:
    blocks: int = 4
    heads: int = 4
    hidden: int = 512
    head_width: int = 128
    ffn_width: int = 2048
    latent_io: int = 64
    time_embed_dim: int = 512

    def validate(self):
        if min(self.blocks, self.heads, self.hidden, self.head_width, self.ffn_width,
               self.latent_io, self.time_embed_dim) < 1:
            raise ConfigError("all DiT sizes must be positive")
        if self.heads * self.head_width != self.hidden:
            raise ConfigError(f"heads x head_width = {self.heads * self.head_width} != hidden {self.hidden}")
        return self

    def to_dict(self):
        return asdict(self)


def time_embedding(t, dim: int, num_steps: int | None = None) -> torch.Tensor:
    """Sinusoidal step embedding; step 0 maps to (0, 1, 0, 1, ...)."""
    t = torch.as_tensor(t)
    if num_steps is not None and (int(t.min()) < 0 or int(t.max()) >= num_steps):
        raise OutOfRange(f"timestep outside [0, {num_steps})")
    return sinusoidal_positions(t, dim).float()


class FiLM(nn.Module):
    """``x * (1 + gamma) + beta`` with (gamma, beta) from a zero-initialized linear map."""

    def __init__(self, cond_dim: int, dim: int):
        super().__init__()
        self.proj = nn.Linear(cond_dim, 2 * dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x, cond):
        gamma, beta = self.proj(cond).chunk(2, dim=-1)
        return x * (1 + gamma.unsqueeze(-2)) + beta.unsqueeze(-2)


class DiTBlock(nn.Module):
    def __init__(self, hidden: int, heads: int, ffn: int, cond_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden)
        self.film1 = FiLM(cond_dim, hidden)
        self.self_attn = MultiHeadAttention(hidden, heads)
        self.norm2 = nn.LayerNorm(hidden)
        self.cross_attn = MultiHeadAttention(hidden, heads)
        self.norm3 = nn.LayerNorm(hidden)
        self.film3 = FiLM(cond_dim, hidden)
        self.ffn = FeedForward(hidden, ffn)

    def forward(self, x, context, cond):
        x = x + self.self_attn(self.film1(self.norm1(x), cond))
        x = x + self.cross_attn(self.norm2(x), context)
        return x + self.ffn(self.film3(self.norm3(x), cond))


class DiT(nn.Module):
    def __init__(self, config: DiTConfig):
        super().__init__()
        self.config = config.validate()
        h = config.hidden
        self.time_mlp = nn.Sequential(
            nn.Linear(config.time_embed_dim, h), nn.SiLU(), nn.Linear(h, h)
        )
        self.inp = nn.Linear(config.latent_io, h)
        self.blocks = nn.ModuleList(
            DiTBlock(h, config.heads, config.ffn_width, h) for _ in range(config.blocks)
        )
        self.norm_out = nn.LayerNorm(h)
        self.out = nn.Linear(h, config.latent_io)

    def forward(self, x_t, t, context, social):
        """Predict the noise.

        x_t: (B, L, latent_io); t: (B,) integer steps; context: (B, N, hidden)
        conditioning tokens; social: (B, hidden) vector summed with the time
        embedding before FiLM.
        """
        b, n, _ = x_t.shape
        pos = sinusoidal_positions(torch.arange(n), self.config.hidden).to(x_t.dtype)
        x = self.inp(x_t) + pos
        temb = time_embedding(t, self.config.time_embed_dim).to(x_t.dtype)
        cond = self.time_mlp(temb) + social
        for block in self.blocks:
            x = block(x, context, cond)
        return self.out(self.norm_out(x))
