"""Learnable bank of motion-style bases that modulates the partner audio stream."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .errors import ShapeMismatch
from .layers import MultiHeadAttention


def init_orthonormal(n: int, dim: int, seed: int) -> np.ndarray:
    """``n x dim`` unit rows; orthonormal within each block of ``dim`` rows.

    For ``n <= dim`` the whole set is orthonormal. Larger banks cannot be, so
    they are built from independent orthonormal blocks.
    """
    rng = np.random.default_rng(seed)
    blocks = []
    remaining = n
    while remaining > 0:
        rows = min(remaining, dim)
        q, r = np.linalg.qr(rng.standard_normal((dim, rows)))
        q = q * np.sign(np.diag(r))  # unique QR, independent of LAPACK sign choices
        blocks.append(q.T)
        remaining -= rows
    return np.concatenate(blocks, axis=0)


class StyleEncoder(nn.Module):
    """Temporal mean pooling, a two-layer perceptron, then similarity to each basis."""

    def __init__(self, in_dim: int, dim: int, hidden: int = 256, temperature: float = 1.0):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        self.temperature = temperature

    def logits(self, reference: torch.Tensor, bases: torch.Tensor) -> torch.Tensor:
        pooled = reference.mean(dim=-2)
        return self.net(pooled) @ bases.T / self.temperature

    def forward(self, reference, bases):
        """``reference`` (B, T, in_dim) -> style weights (B, n) on the simplex."""
        return torch.softmax(self.logits(reference, bases), dim=-1)


class MotionDictionary(nn.Module):
    def __init__(self, n: int = 1000, dim: int = 512, heads: int = 4, seed: int = 0):
        super().__init__()
        self.n = n
        self.bases = nn.Parameter(torch.from_numpy(np.ascontiguousarray(init_orthonormal(n, dim, seed))).float())
        self.attn = MultiHeadAttention(dim, heads)

    def aggregate(self, weights: torch.Tensor) -> torch.Tensor:
        """Weighted sum of bases, (B, n) -> (B, dim)."""
        if weights.shape[-1] != self.n:
            raise ShapeMismatch(f"expected {self.n} style weights, got {weights.shape[-1]}")
        return weights @ self.bases

    def modulate(self, a_other: torch.Tensor, weights: torch.Tensor | None) -> torch.Tensor:
        """Residual cross-attention read of the aggregated basis; ``None`` skips it."""
        if weights is None:
            return a_other
        agg = self.aggregate(weights)
        if agg.shape[-1] != a_other.shape[-1]:
            raise ShapeMismatch(f"basis width {agg.shape[-1]} != audio width {a_other.shape[-1]}")
        return self.attn(a_other, agg[:, None, :]) + a_other
