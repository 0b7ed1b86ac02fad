import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with separate query and key/value inputs."""

    def __init__(self, dim: int, heads: int, kv_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        kv_dim = kv_dim or dim
        self.heads = heads
        self.head_dim = dim // heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(kv_dim, dim)
        self.to_v = nn.Linear(kv_dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def attention_weights(self, query, keyvalue):
        q = self._split(self.to_q(query))
        k = self._split(self.to_k(keyvalue))
        return torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)

    def forward(self, query, keyvalue=None):
        """``query``: (B, Tq, dim); ``keyvalue``: (B, Tkv, kv_dim), defaults to ``query``."""
        keyvalue = query if keyvalue is None else keyvalue
        b, tq, _ = query.shape
        q = self._split(self.to_q(query))
        k = self._split(self.to_k(keyvalue))
        v = self._split(self.to_v(keyvalue))
        out = F.scaled_dot_product_attention(q, k, v)
        return self.to_out(out.transpose(1, 2).reshape(b, tq, -1))


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        return self.net(x)


def sinusoidal_positions(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Interleaved (sin, cos) features for real-valued positions; output (..., dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    ).to(positions.device)
    angles = positions.to(torch.float64)[..., None] * freqs
    emb = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1).flatten(-2)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb
