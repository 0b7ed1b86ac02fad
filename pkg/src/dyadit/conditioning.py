"""Batched conditioning inputs with per-signal drop flags for classifier-free guidance."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch

from .errors import ShapeError

SIGNALS = ("audio", "relationship", "personality", "partner", "style")
DEFAULT_DROP = {"audio": 0.1, "relationship": 0.1, "personality": 0.1, "partner": 0.5, "style": 0.5}
NUM_RELATIONSHIPS = 4
NUM_TRAITS = 5


@dataclass
class ConditioningBundle:
    audio_self: torch.Tensor  # (B, T, A)
    audio_other: torch.Tensor  # (B, T, A)
    relationship: torch.Tensor  # (B, 4) one-hot
    personality: torch.Tensor  # (B, 5)
    partner: torch.Tensor | None = None  # (B, L, latent) partner motion latents
    style_ref: torch.Tensor | None = None  # (B, L, latent) style reference latents
    drops: dict = field(default_factory=dict)

    def __post_init__(self):
        b = self.audio_self.shape[0]
        if self.audio_other.shape != self.audio_self.shape:
            raise ShapeError("audio tracks must share a shape")
        if self.relationship.shape != (b, NUM_RELATIONSHIPS):
            raise ShapeError(f"relationship must be (B, {NUM_RELATIONSHIPS})")
        if self.personality.shape != (b, NUM_TRAITS):
            raise ShapeError(f"personality must be (B, {NUM_TRAITS})")
        rel = self.relationship
        ok = ((rel == 0) | (rel == 1)).all(-1) & (rel.sum(-1) <= 1)
        if not bool(ok.all()):
            raise ShapeError("relationship rows must be one-hot or all zero")
        if not bool(torch.isfinite(self.personality).all()):
            raise ShapeError("personality must be finite")
        drops = {}
        for name in SIGNALS:
            flag = self.drops.get(name)
            drops[name] = torch.zeros(b, dtype=torch.bool) if flag is None else flag.to(torch.bool).reshape(b)
        if self.partner is None:
            drops["partner"] = torch.ones(b, dtype=torch.bool)
        if self.style_ref is None:
            drops["style"] = torch.ones(b, dtype=torch.bool)
        self.drops = drops

    @property
    def batch_size(self) -> int:
        return self.audio_self.shape[0]

    def with_drops(self, **flags) -> "ConditioningBundle":
        drops = dict(self.drops)
        for name, value in flags.items():
            if name not in SIGNALS:
                raise KeyError(name)
            if isinstance(value, bool):
                value = torch.full((self.batch_size,), value, dtype=torch.bool)
            drops[name] = value
        return replace(self, drops=drops)

    def fully_dropped(self) -> "ConditioningBundle":
        return self.with_drops(**{name: True for name in SIGNALS})

    def select(self, index) -> "ConditioningBundle":
        pick = lambda x: None if x is None else x[index]  # noqa: E731
        return ConditioningBundle(
            audio_self=self.audio_self[index], audio_other=self.audio_other[index],
            relationship=self.relationship[index], personality=self.personality[index],
            partner=pick(self.partner), style_ref=pick(self.style_ref),
            drops={k: v[index] for k, v in self.drops.items()},
        )

    @staticmethod
    def cat(bundles: list["ConditioningBundle"]) -> "ConditioningBundle":
        def join(name):
            vals = [getattr(b, name) for b in bundles]
            if any(v is None for v in vals):
                if all(v is None for v in vals):
                    return None
                ref = next(v for v in vals if v is not None)
                vals = [torch.zeros_like(ref) if v is None else v for v in vals]
            return torch.cat(vals)

        return ConditioningBundle(
            audio_self=join("audio_self"), audio_other=join("audio_other"),
            relationship=join("relationship"), personality=join("personality"),
            partner=join("partner"), style_ref=join("style_ref"),
            drops={k: torch.cat([b.drops[k] for b in bundles]) for k in SIGNALS},
        )
