"""Residual VQ-VAE motion tokenizer.

The encoder maps ``T x J x 6`` gestures to ``T/4 x latent_dim`` continuous
latents; a residual quantizer with ``residual_depth`` codebooks turns each
latent into a stack of code indices; the decoder maps latents back to
``T`` frames.

Entry 0 of every codebook is pinned to the zero vector and never updated, so
each stage can always choose "no correction" and residual norms never grow
with depth.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, Divergence, IndexOutOfRange, ShapeError
from .motion_repr import JOINT_COUNT


@dataclass
class TokenizerConfig:
    latent_dim: int = 64
    residual_depth: int = 4
    codebook_size: int = 512
    temporal_factor: int = 4
    commitment_weight: float = 0.25
    ema_decay: float = 0.99
    dead_after: int = 100
    channels: list = field(default_factory=lambda: [256, 256])
    joint_count: int = JOINT_COUNT
    epochs: int = 30
    batch_size: int = 8
    lr: float = 2e-3

    def validate(self):
        if self.residual_depth < 1:
            raise ConfigError("residual_depth must be >= 1")
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be >= 2")
        if self.temporal_factor != 4:
            raise ConfigError("only temporal_factor = 4 is supported")
        if self.latent_dim < 1 or self.joint_count < 1:
            raise ConfigError("latent_dim and joint_count must be positive")
        if len(self.channels) != 2 or min(self.channels) < 1:
            raise ConfigError("channels must list two positive widths")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError("ema_decay must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs, batch_size and lr must be positive")
        return self


class ResidualVQ(nn.Module):
    def __init__(self, depth: int, size: int, dim: int, decay: float = 0.99, dead_after: int = 100):
        super().__init__()
        self.depth, self.size, self.dim = depth, size, dim
        self.decay = decay
        self.dead_after = dead_after
        books = torch.randn(depth, size, dim) * 0.1
        books[:, 0] = 0.0
        self.register_buffer("codebooks", books)
        self.register_buffer("cluster_size", torch.ones(depth, size))
        self.register_buffer("embed_sum", books.clone())
        self.register_buffer("unused_batches", torch.zeros(depth, size))
        self.register_buffer("initialized", torch.zeros(()))

    def _nearest(self, r: torch.Tensor, book: torch.Tensor) -> torch.Tensor:
        dist = (r * r).sum(-1, keepdim=True) - 2 * r @ book.T + (book * book).sum(-1)
        idx = dist.argmin(-1)
        # the expanded distance can misorder near-ties with the pinned zero entry
        chosen = book[idx]
        worse = ((r - chosen) ** 2).sum(-1) > (r * r).sum(-1)
        return torch.where(worse, torch.zeros_like(idx), idx)

    def quantize(self, z: torch.Tensor):
        """``z`` (..., dim) -> (indices (..., depth), quantized (..., dim))."""
        if z.shape[-1] != self.dim:
            raise ShapeError(f"latent width {z.shape[-1]} != {self.dim}")
        flat = z.reshape(-1, self.dim)
        books = self.codebooks.to(flat.dtype)
        residual = flat
        quantized = torch.zeros_like(flat)
        indices = []
        for k in range(self.depth):
            idx = self._nearest(residual, books[k])
            entry = books[k][idx]
            quantized = quantized + entry
            residual = residual - entry
            indices.append(idx)
        idx = torch.stack(indices, -1)
        return idx.reshape(*z.shape[:-1], self.depth), quantized.reshape(z.shape)

    def dequantize(self, indices: torch.Tensor, dtype=torch.float32) -> torch.Tensor:
        if indices.shape[-1] != self.depth:
            raise ShapeError(f"expected depth {self.depth}, got {indices.shape[-1]}")
        if indices.numel() and (int(indices.min()) < 0 or int(indices.max()) >= self.size):
            raise IndexOutOfRange(f"code indices must lie in [0, {self.size})")
        books = self.codebooks.to(dtype)
        out = torch.zeros(*indices.shape[:-1], self.dim, dtype=dtype)
        for k in range(self.depth):
            out = out + books[k][indices[..., k]]
        return out

    @torch.no_grad()
    def _init_from_data(self, flat: torch.Tensor, gen: torch.Generator):
        residual = flat
        for k in range(self.depth):
            pick = torch.randint(0, flat.shape[0], (self.size - 1,), generator=gen)
            self.codebooks[k, 1:] = residual[pick]
            self.embed_sum[k] = self.codebooks[k]
            self.cluster_size[k] = 1.0
            residual = residual - self.codebooks[k][self._nearest(residual, self.codebooks[k])]
        self.initialized.fill_(1.0)

    @torch.no_grad()
    def ema_update(self, z: torch.Tensor, gen: torch.Generator):
        flat = z.detach().reshape(-1, self.dim).float()
        if not bool(self.initialized):
            self._init_from_data(flat, gen)
        residual = flat
        for k in range(self.depth):
            book = self.codebooks[k]
            idx = self._nearest(residual, book)
            onehot = F.one_hot(idx, self.size).float()
            counts = onehot.sum(0)
            sums = onehot.T @ residual
            self.cluster_size[k].mul_(self.decay).add_(counts, alpha=1 - self.decay)
            self.embed_sum[k].mul_(self.decay).add_(sums, alpha=1 - self.decay)
            total = self.cluster_size[k].sum()
            smoothed = (self.cluster_size[k] + 1e-5) / (total + self.size * 1e-5) * total
            book_new = self.embed_sum[k] / smoothed[:, None]
            self.unused_batches[k] = torch.where(counts > 0, torch.zeros_like(counts), self.unused_batches[k] + 1)
            dead = self.unused_batches[k] >= self.dead_after
            dead[0] = False
            n_dead = int(dead.sum())
            if n_dead:
                pick = torch.randint(0, residual.shape[0], (n_dead,), generator=gen)
                book_new[dead] = residual[pick]
                self.embed_sum[k][dead] = residual[pick]
                self.cluster_size[k][dead] = 1.0
                self.unused_batches[k][dead] = 0.0
            book_new[0] = 0.0
            self.embed_sum[k][0] = 0.0
            self.codebooks[k] = book_new
            residual = residual - book_new[idx]

    def usage_fraction(self, indices: torch.Tensor) -> float:
        """Mean over stages of the fraction of non-pinned entries hit at least once."""
        flat = indices.reshape(-1, self.depth)
        fracs = []
        for k in range(self.depth):
            used = torch.unique(flat[:, k])
            fracs.append(float((used > 0).sum()) / (self.size - 1))
        return float(np.mean(fracs))


class MotionTokenizer(nn.Module):
    def __init__(self, config: TokenizerConfig):
        super().__init__()
        self.config = config.validate()
        c1, c2 = config.channels
        d_in = config.joint_count * 6
        act = lambda: nn.LeakyReLU(0.2)  # noqa: E731
        self.encoder = nn.Sequential(
            nn.Conv1d(d_in, c1, 4, stride=2, padding=1), act(),
            nn.Conv1d(c1, c2, 4, stride=2, padding=1), act(),
            nn.Conv1d(c2, config.latent_dim, 3, padding=1),
        )
        up = lambda: nn.Upsample(scale_factor=2, mode="linear", align_corners=False)  # noqa: E731
        self.decoder = nn.Sequential(
            nn.Conv1d(config.latent_dim, c2, 3, padding=1), act(),
            up(), nn.Conv1d(c2, c2, 3, padding=1), act(),
            nn.Conv1d(c2, c2, 3, padding=1), act(),
            up(), nn.Conv1d(c2, c1, 3, padding=1), act(),
            nn.Conv1d(c1, c1, 3, padding=1), act(),
            nn.Conv1d(c1, d_in, 3, padding=1),
        )
        self.quantizer = ResidualVQ(
            config.residual_depth, config.codebook_size, config.latent_dim,
            config.ema_decay, config.dead_after,
        )
        # per-channel standardization of the flattened J*6 frame vector
        self.register_buffer("frame_mean", torch.zeros(d_in))
        self.register_buffer("frame_std", torch.ones(d_in))

    @torch.no_grad()
    def set_normalization(self, frames: torch.Tensor, min_std: float = 1e-2):
        flat = frames.reshape(-1, self.frame_mean.numel()).double()
        self.frame_mean.copy_(flat.mean(0))
        self.frame_std.copy_(flat.std(0).clamp_min(min_std))

    def standardized_error(self, recon: torch.Tensor, frames: torch.Tensor) -> torch.Tensor:
        scale = self.frame_std.view(self.config.joint_count, 6)
        return (((recon - frames) / scale) ** 2).mean()

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, T, J, 6) -> (B, T/4, latent_dim)."""
        if frames.dim() != 4 or frames.shape[-1] != 6:
            raise ShapeError(f"expected (B, T, J, 6), got {tuple(frames.shape)}")
        b, t, j, _ = frames.shape
        if t % self.config.temporal_factor:
            raise ShapeError(f"sequence length {t} not divisible by {self.config.temporal_factor}")
        x = (frames.reshape(b, t, j * 6) - self.frame_mean) / self.frame_std
        return self.encoder(x.transpose(1, 2)).transpose(1, 2)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        """(B, L, latent_dim) -> (B, 4L, J, 6)."""
        b, n, _ = latent.shape
        x = self.decoder(latent.transpose(1, 2)).transpose(1, 2) * self.frame_std + self.frame_mean
        return x.reshape(b, n * self.config.temporal_factor, self.config.joint_count, 6)

    def quantize_st(self, z: torch.Tensor):
        """Quantize with a straight-through gradient path back to ``z``."""
        indices, q = self.quantizer.quantize(z)
        return z + (q - z).detach(), q, indices

    def forward(self, frames):
        z = self.encode(frames)
        z_q, q, indices = self.quantize_st(z)
        return self.decode(z_q), z, q, indices

    def losses(self, frames):
        recon, z, q, indices = self(frames)
        recon_loss = self.standardized_error(recon, frames)
        commit = F.mse_loss(z, q.detach())
        return recon_loss, commit, indices


# --- numpy-facing helpers -----------------------------------------------------


def _frames_tensor(seq) -> torch.Tensor:
    arr = getattr(seq, "frames", seq)
    t = torch.as_tensor(np.asarray(arr, dtype=np.float32))
    return t[None] if t.dim() == 3 else t


@torch.no_grad()
def encode(seq, model: MotionTokenizer) -> np.ndarray:
    model.eval()
    out = model.encode(_frames_tensor(seq))
    return out[0].numpy() if getattr(seq, "frames", seq).ndim == 3 else out.numpy()


@torch.no_grad()
def quantize(latent: np.ndarray, model: MotionTokenizer):
    idx, q = model.quantizer.quantize(torch.as_tensor(latent))
    return idx.numpy(), q.numpy()


@torch.no_grad()
def dequantize(indices: np.ndarray, model: MotionTokenizer, dtype=torch.float32) -> np.ndarray:
    return model.quantizer.dequantize(torch.as_tensor(indices, dtype=torch.long), dtype).numpy()


@torch.no_grad()
def decode(latent: np.ndarray, model: MotionTokenizer) -> np.ndarray:
    model.eval()
    lat = torch.as_tensor(np.asarray(latent, dtype=np.float32))
    single = lat.dim() == 2
    out = model.decode(lat[None] if single else lat)
    return out[0].numpy() if single else out.numpy()


def gesture_arrays(dataset) -> np.ndarray:
    arrs = []
    for item in dataset:
        arrs.append(np.asarray(getattr(item, "gesture_other", getattr(item, "frames", item)), dtype=np.float32))
    return np.stack(arrs)


@torch.no_grad()
def reconstruction_mse(model: MotionTokenizer, data: torch.Tensor, batch_size: int = 16,
                       standardized: bool = False) -> float:
    """Quantized round-trip error; ``standardized`` divides by the per-channel data scale."""
    model.eval()
    total = 0.0
    for i in range(0, len(data), batch_size):
        chunk = data[i:i + batch_size]
        recon, *_ = model(chunk)
        err = model.standardized_error(recon, chunk) if standardized else ((recon - chunk) ** 2).mean()
        total += err.item() * chunk.numel()
    return total / data.numel()


def train_tokenizer(dataset, config: TokenizerConfig, seed: int = 0, log=None):
    """Fit a tokenizer on the ``gesture_other`` tracks (or raw gesture arrays) of ``dataset``.

    Returns ``(model, history)``; ``history`` holds one dict per epoch plus the
    pre-training reconstruction error under ``history[0]`` with epoch 0.
    Reconstruction errors are measured on per-channel standardized frames.
    """
    config.validate()
    if len(dataset) == 0:
        raise ConfigError("tokenizer training needs a nonempty dataset")
    data = torch.from_numpy(gesture_arrays(dataset))
    if data.shape[1] % config.temporal_factor:
        raise ConfigError(f"clip length {data.shape[1]} not divisible by {config.temporal_factor}")
    if data.shape[2] != config.joint_count:
        raise ConfigError(f"dataset has {data.shape[2]} joints, config expects {config.joint_count}")

    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = MotionTokenizer(config)
    model.set_normalization(data)
    opt = torch.optim.Adam(list(model.encoder.parameters()) + list(model.decoder.parameters()), lr=config.lr)

    history = [{"epoch": 0, "recon": reconstruction_mse(model, data, standardized=True)}]
    if log:
        log(history[-1])
    steps_per_epoch = math.ceil(len(data) / config.batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.epochs * steps_per_epoch)
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(len(data))
        recon_sum = commit_sum = 0.0
        for i in range(0, len(order), config.batch_size):
            batch = data[torch.from_numpy(order[i:i + config.batch_size])]
            z = model.encode(batch)
            model.quantizer.ema_update(z, gen)
            z_q, q, _ = model.quantize_st(z)
            recon = model.decode(z_q)
            recon_loss = model.standardized_error(recon, batch)
            commit = F.mse_loss(z, q.detach())
            loss = recon_loss + config.commitment_weight * commit
            if not torch.isfinite(loss):
                raise Divergence(step, loss.item())
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            recon_sum += recon_loss.item() * len(batch)
            commit_sum += commit.item() * len(batch)
        with torch.no_grad():
            indices, _ = model.quantizer.quantize(model.encode(data))
        entry = {
            "epoch": epoch,
            "recon": recon_sum / len(data),
            "commit": commit_sum / len(data),
            "usage": model.quantizer.usage_fraction(indices),
        }
        history.append(entry)
        if log:
            log(entry)
    model.eval()
    return model, history


def config_dict(config: TokenizerConfig) -> dict:
    return asdict(config)
