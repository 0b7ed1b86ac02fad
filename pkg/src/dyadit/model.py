"""The full conditional noise predictor and its training loop.

The model assembles the conditioning sequence from ORCA-fused audio tokens
(with the partner stream optionally modulated by the motion dictionary),
projected partner-motion latents and one token each for relationship and
personality. Relationship and personality embeddings are also summed with the
time embedding and drive FiLM in every block. Any dropped signal is replaced
by a learned null embedding of the same shape.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .conditioning import DEFAULT_DROP, NUM_RELATIONSHIPS, NUM_TRAITS, ConditioningBundle
from .diffusion import NoiseSchedule, SamplerConfig, condition_dropout, ddim_sample, training_loss
from .dit import DiT, DiTConfig
from .errors import ConfigError, Divergence
from .layers import sinusoidal_positions
from .motion_dictionary import MotionDictionary, StyleEncoder
from .orca import ORCA
from .synthetic_data import AUDIO_DIM
from .tokenizer import MotionTokenizer


@dataclass
class ModelConfig:
    blocks: int = 4
    heads: int = 4
    hidden: int = 512
    head_width: int = 128
    ffn_width: int = 2048
    latent_io: int = 64
    time_embed_dim: int = 512
    audio_dim: int = AUDIO_DIM
    orca_mode: str = "analytic"
    dictionary_size: int = 1000
    style_hidden: int = 256
    schedule_steps: int = 1000
    temporal_factor: int = 4
    audio_pool: int = 1

    def dit_config(self) -> DiTConfig:
        return DiTConfig(self.blocks, self.heads, self.hidden, self.head_width, self.ffn_width,
                         self.latent_io, self.time_embed_dim).validate()

    def validate(self):
        self.dit_config()
        if self.orca_mode not in ("analytic", "learned"):
            raise ConfigError(f"orca_mode must be 'analytic' or 'learned', got {self.orca_mode!r}")
        if self.audio_pool < 1:
            raise ConfigError("audio_pool must be >= 1")
        if self.dictionary_size < 1 or self.schedule_steps < 2:
            raise ConfigError("dictionary_size must be >= 1 and schedule_steps >= 2")
        return self


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 5e-4
    grad_clip: float = 1.0
    log_every: int = 100
    p_drop: dict = field(default_factory=lambda: dict(DEFAULT_DROP))

    def validate(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or self.log_every < 1:
            raise ConfigError("steps >= 0, batch_size >= 1, lr > 0 and log_every >= 1 required")
        return self


class DyaDiT(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config.validate()
        h, d = config.hidden, config.latent_io
        self.dit = DiT(config.dit_config())
        self.orca = ORCA(config.audio_dim, h, config.heads, config.orca_mode)
        self.dictionary = MotionDictionary(config.dictionary_size, h, config.heads, seed=seed)
        self.style_encoder = StyleEncoder(d, h, config.style_hidden)
        self.partner_proj = nn.Linear(d, h)
        self.relationship_proj = nn.Linear(NUM_RELATIONSHIPS, h)
        self.personality_proj = nn.Linear(NUM_TRAITS, h)
        self.null_audio = nn.Parameter(torch.randn(h) * 0.02)
        self.null_partner = nn.Parameter(torch.randn(h) * 0.02)
        self.null_relationship = nn.Parameter(torch.randn(h) * 0.02)
        self.null_personality = nn.Parameter(torch.randn(h) * 0.02)
        self.register_buffer("latent_mean", torch.zeros(d))
        self.register_buffer("latent_std", torch.ones(d))
        self.schedule = NoiseSchedule.linear(config.schedule_steps)

    def normalize(self, z):
        return (z - self.latent_mean) / self.latent_std

    def denormalize(self, z):
        return z * self.latent_std + self.latent_mean

    @staticmethod
    def _pick(drop, null, value):
        mask = drop.view(-1, *([1] * (value.dim() - 1)))
        return torch.where(mask, null.expand_as(value), value)

    def pool_audio(self, a):
        k = self.config.audio_pool
        if k == 1:
            return a
        b, t, c = a.shape
        if t % k:
            raise ConfigError(f"audio length {t} not divisible by audio_pool {k}")
        return a.reshape(b, t // k, k, c).mean(2)

    def audio_tokens(self, bundle: ConditioningBundle):
        s, o = self.orca.project(self.pool_audio(bundle.audio_self), self.pool_audio(bundle.audio_other))
        if bundle.style_ref is not None and not bool(bundle.drops["style"].all()):
            weights = self.style_encoder(bundle.style_ref, self.dictionary.bases)
            o = self._pick(bundle.drops["style"], o, self.dictionary.modulate(o, weights))
        fused = self.orca.fuse(s, o)
        return self._pick(bundle.drops["audio"], self.null_audio, fused)

    def context(self, bundle: ConditioningBundle, n_latent: int):
        b, h = bundle.batch_size, self.config.hidden
        audio = self.audio_tokens(bundle)
        t_audio = audio.shape[1]
        audio = audio + sinusoidal_positions(
            torch.arange(t_audio, dtype=torch.float64) * self.config.audio_pool / self.config.temporal_factor,
            h).to(audio.dtype)
        if bundle.partner is not None:
            partner = self._pick(bundle.drops["partner"], self.null_partner, self.partner_proj(bundle.partner))
        else:
            partner = self.null_partner.expand(b, n_latent, h)
        partner = partner + sinusoidal_positions(torch.arange(partner.shape[1]), h).to(audio.dtype)
        rel = self._pick(bundle.drops["relationship"], self.null_relationship,
                         self.relationship_proj(bundle.relationship))
        pers = self._pick(bundle.drops["personality"], self.null_personality,
                          self.personality_proj(bundle.personality))
        tokens = torch.cat([audio, partner, rel[:, None], pers[:, None]], dim=1)
        return tokens, rel + pers

    def forward(self, x_t, t, bundle: ConditioningBundle):
        """Noise prediction for normalized latents ``x_t`` (B, L, latent_io)."""
        tokens, social = self.context(bundle, x_t.shape[1])
        return self.dit(x_t, t, tokens, social)


# --- data plumbing ------------------------------------------------------------


@torch.no_grad()
def encode_gestures(tokenizer: MotionTokenizer, gestures: np.ndarray, batch_size: int = 32) -> torch.Tensor:
    tokenizer.eval()
    data = torch.from_numpy(np.asarray(gestures, dtype=np.float32))
    return torch.cat([tokenizer.encode(data[i:i + batch_size]) for i in range(0, len(data), batch_size)])


@dataclass
class EncodedSet:
    """Dataset tensors with motion already in (unnormalized) latent space."""

    audio_self: torch.Tensor
    audio_other: torch.Tensor
    relationship: torch.Tensor
    personality: torch.Tensor
    target: torch.Tensor
    partner: torch.Tensor

    def __len__(self):
        return self.target.shape[0]


def encode_dataset(samples, tokenizer: MotionTokenizer) -> EncodedSet:
    stack = lambda name: torch.from_numpy(np.stack([getattr(s, name) for s in samples]).astype(np.float32))  # noqa: E731
    return EncodedSet(
        audio_self=stack("audio_self"),
        audio_other=stack("audio_other"),
        relationship=stack("relationship"),
        personality=stack("personality"),
        target=encode_gestures(tokenizer, np.stack([s.gesture_other for s in samples])),
        partner=encode_gestures(tokenizer, np.stack([s.gesture_self for s in samples])),
    )


def make_bundle(model: DyaDiT, data: EncodedSet, index=None, partner: bool = True, style: bool = True,
                relationship=None, personality=None) -> ConditioningBundle:
    index = slice(None) if index is None else index
    rel = data.relationship[index]
    pers = data.personality[index]
    if relationship is not None:
        rel = torch.as_tensor(np.asarray(relationship, dtype=np.float32)).expand_as(rel).clone()
    if personality is not None:
        pers = torch.as_tensor(np.asarray(personality, dtype=np.float32)).expand_as(pers).clone()
    return ConditioningBundle(
        audio_self=data.audio_self[index],
        audio_other=data.audio_other[index],
        relationship=rel,
        personality=pers,
        partner=model.normalize(data.partner[index]) if partner else None,
        style_ref=model.normalize(data.target[index]) if style else None,
    )


def init_dyadit(data: EncodedSet, config: ModelConfig, seed: int = 0) -> DyaDiT:
    torch.manual_seed(seed)
    model = DyaDiT(config, seed=seed)
    flat = data.target.reshape(-1, data.target.shape[-1])
    model.latent_mean.copy_(flat.mean(0))
    model.latent_std.copy_(flat.std(0).clamp_min(1e-4))
    return model


def train_dit(data: EncodedSet, config: ModelConfig, train: TrainConfig, seed: int = 0, log=None):
    """Optimize the noise-prediction loss; returns ``(model, history)``.

    Raises :class:`Divergence` with the step index if the loss turns non-finite.
    """
    train.validate()
    if len(data) == 0:
        raise ConfigError("DiT training needs a nonempty dataset")
    if data.target.shape[-1] != config.latent_io:
        raise ConfigError(f"latent width {data.target.shape[-1]} != model latent_io {config.latent_io}")
    model = init_dyadit(data, config, seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=train.lr, weight_decay=0.0)
    warmup = min(100, max(train.steps // 10, 1))
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: min(1.0, (s + 1) / warmup) * 0.5 * (1 + math.cos(math.pi * min(s / max(train.steps, 1), 1.0)))
    )
    history = []
    order = np.zeros(0, dtype=np.int64)
    running = []
    model.train()
    for step in range(1, train.steps + 1):
        if len(order) < train.batch_size:
            order = np.concatenate([order, rng.permutation(len(data))])
        idx, order = torch.from_numpy(order[:train.batch_size]), order[train.batch_size:]
        bundle = condition_dropout(make_bundle(model, data, idx), train.p_drop, gen)
        loss = training_loss(model, model.normalize(data.target[idx]), bundle, model.schedule, gen)
        if not torch.isfinite(loss):
            raise Divergence(step, loss.item())
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(model.parameters(), train.grad_clip)
        opt.step()
        sched.step()
        running.append(loss.item())
        if step % train.log_every == 0 or step == train.steps:
            entry = {"step": step, "loss": float(np.mean(running))}
            running = []
            history.append(entry)
            if log:
                log(entry)
    model.eval()
    return model, history


@torch.no_grad()
def sample_latents(model: DyaDiT, bundle: ConditioningBundle, sampler: SamplerConfig,
                   init_noise: torch.Tensor) -> torch.Tensor:
    """Run DDIM and return unnormalized latents (B, L, latent_io)."""
    model.eval()
    z = ddim_sample(model, bundle, sampler, model.schedule, init_noise)
    return model.denormalize(z)


@torch.no_grad()
def decode_latents(tokenizer: MotionTokenizer, z: torch.Tensor, quantize: bool = True) -> np.ndarray:
    tokenizer.eval()
    if quantize:
        _, z = tokenizer.quantizer.quantize(z)
    return tokenizer.decode(z).numpy()


def noise_for_seeds(seeds, n_latent: int, dim: int) -> torch.Tensor:
    """One standard-normal latent sequence per seed, independent of batch composition."""
    return torch.stack([
        torch.randn(n_latent, dim, generator=torch.Generator().manual_seed(int(s))) for s in seeds
    ])


def generate(model: DyaDiT, tokenizer: MotionTokenizer, bundle: ConditioningBundle, sampler: SamplerConfig,
             noise_seeds, quantize: bool = True, batch_size: int = 32) -> np.ndarray:
    """Gestures (B, T, J, 6) for a bundle; sample ``i`` uses noise seed ``noise_seeds[i]``."""
    n_latent = bundle.audio_self.shape[1] // model.config.temporal_factor
    noise = noise_for_seeds(noise_seeds, n_latent, model.config.latent_io)
    out = []
    for i in range(0, bundle.batch_size, batch_size):
        sl = slice(i, i + batch_size)
        z = sample_latents(model, bundle.select(sl), sampler, noise[sl])
        out.append(decode_latents(tokenizer, z, quantize))
    return np.concatenate(out)


def config_dicts(config: ModelConfig, train: TrainConfig | None = None) -> dict:
    out = {"model": asdict(config)}
    if train is not None:
        out["train"] = asdict(train)
    return out
