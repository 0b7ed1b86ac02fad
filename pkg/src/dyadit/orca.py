"""Orthogonalization cross attention (ORCA) for two-speaker audio fusion.

Both speakers' feature tracks are projected to the model width and layer
normalized. The self stream then has its component along the other stream
removed, two cross-attentions exchange information in both directions, and a
per-channel sigmoid gate mixes the two results.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ShapeMismatch
from .layers import MultiHeadAttention

ORTHO_EPS = 1e-8


def orthogonalize(a_self: torch.Tensor, a_other: torch.Tensor, eps: float = ORTHO_EPS) -> torch.Tensor:
    """Remove from each ``a_self[t]`` its projection onto the span of ``a_other[t]``.

    Timesteps where ``a_other[t]`` has norm ``<= eps`` are returned unchanged.
    """
    if a_self.shape != a_other.shape:
        raise ShapeMismatch(f"{tuple(a_self.shape)} vs {tuple(a_other.shape)}")
    dot = (a_self * a_other).sum(-1, keepdim=True)
    sq = (a_other * a_other).sum(-1, keepdim=True)
    valid = sq > eps * eps
    coef = torch.where(valid, dot / torch.where(valid, sq, torch.ones_like(sq)), torch.zeros_like(dot))
    return a_self - coef * a_other


class LearnedProjection(nn.Module):
    """Two-layer perceptron estimating the redundant part of ``a_self``.

    Input is the concatenated pair ``[a_self; a_other]``.
    """

    def __init__(self, dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.fc1 = nn.Linear(2 * dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, a_self, a_other):
        if a_self.shape != a_other.shape:
            raise ShapeMismatch(f"{tuple(a_self.shape)} vs {tuple(a_other.shape)}")
        return self.fc2(torch.sigmoid(self.fc1(torch.cat([a_self, a_other], dim=-1))))


def gated_fuse(h_self_to_other, h_other_to_self, gate_logit) -> torch.Tensor:
    if h_self_to_other.shape != h_other_to_self.shape:
        raise ShapeMismatch(f"{tuple(h_self_to_other.shape)} vs {tuple(h_other_to_self.shape)}")
    g = torch.sigmoid(gate_logit)
    return g * h_self_to_other + (1.0 - g) * h_other_to_self


class ORCA(nn.Module):
    def __init__(self, audio_dim: int = 768, dim: int = 512, heads: int = 4, mode: str = "analytic"):
        super().__init__()
        if mode not in ("analytic", "learned"):
            raise ValueError(f"unknown orthogonalization mode {mode!r}")
        self.mode = mode
        self.proj_self = nn.Linear(audio_dim, dim)
        self.proj_other = nn.Linear(audio_dim, dim)
        self.norm_self = nn.LayerNorm(dim)
        self.norm_other = nn.LayerNorm(dim)
        self.phi = LearnedProjection(dim) if mode == "learned" else None
        # query = a_other, keys/values = a_self^perp
        self.attn_self_to_other = MultiHeadAttention(dim, heads)
        # query = a_self^perp, keys/values = a_other
        self.attn_other_to_self = MultiHeadAttention(dim, heads)
        self.gate = nn.Parameter(torch.zeros(dim))

    def project(self, a_self, a_other):
        if a_self.shape != a_other.shape:
            raise ShapeMismatch(f"{tuple(a_self.shape)} vs {tuple(a_other.shape)}")
        return self.norm_self(self.proj_self(a_self)), self.norm_other(self.proj_other(a_other))

    def orthogonal_residual(self, a_self, a_other):
        if self.mode == "analytic":
            return orthogonalize(a_self, a_other)
        return a_self - self.phi(a_self, a_other)

    def fuse(self, s, o):
        """Fusion on already-projected streams of width ``dim``."""
        s_perp = self.orthogonal_residual(s, o)
        h_self_to_other = self.attn_self_to_other(o, s_perp)
        h_other_to_self = self.attn_other_to_self(s_perp, o)
        return gated_fuse(h_self_to_other, h_other_to_self, self.gate)

    def forward(self, a_self, a_other, other_modulation=None):
        """Raw feature tracks (B, T, audio_dim) -> fused tokens (B, T, dim).

        ``other_modulation`` optionally rewrites the projected partner stream
        before fusion (used by the motion dictionary).
        """
        s, o = self.project(a_self, a_other)
        if other_modulation is not None:
            o = other_modulation(o)
        return self.fuse(s, o)
