"""DDPM forward process, noise-prediction loss, condition dropout and DDIM sampling."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .conditioning import DEFAULT_DROP, SIGNALS, ConditioningBundle
from .errors import ConfigError, OutOfRange, ShapeMismatch


class NoiseSchedule:
    """Variance schedule; ``alphas_bar[t]`` is the cumulative product of ``1 - betas``."""

    def __init__(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ConfigError("betas must be a nonempty 1-D array")
        if np.any(betas < 0) or np.any(betas >= 1) or np.any(betas[1:] <= 0):
            raise ConfigError("betas must lie in (0, 1); only betas[0] may be 0")
        self.betas = betas
        self.alphas_bar = np.cumprod(1.0 - betas)

    @classmethod
    def linear(cls, num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2):
        return cls(np.linspace(beta_start, beta_end, num_steps))

    @classmethod
    def from_alphas_bar(cls, alphas_bar):
        """Build from cumulative products; ``alphas_bar[0] = 1`` gives a clamped head."""
        ab = np.asarray(alphas_bar, dtype=np.float64)
        prev = np.concatenate([[1.0], ab[:-1]])
        return cls(1.0 - ab / prev)

    def __len__(self):
        return len(self.betas)

    def _check(self, t):
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t >= len(self)):
            raise OutOfRange(f"timestep outside [0, {len(self)})")


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``; ``t`` is a scalar or one step per batch row."""
    t_arr = np.asarray(t.cpu() if torch.is_tensor(t) else t)
    schedule._check(t_arr)
    ab = schedule.alphas_bar[t_arr]
    shape = (-1,) + (1,) * (x0.dim() - 1) if ab.ndim else ()
    a = torch.as_tensor(np.sqrt(ab), dtype=x0.dtype).reshape(shape)
    s = torch.as_tensor(np.sqrt(1.0 - ab), dtype=x0.dtype).reshape(shape)
    return a * x0 + s * eps


def noise_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """Squared error summed over the latent channel, averaged over batch and tokens."""
    return ((eps - eps_hat) ** 2).sum(-1).mean()


def training_loss(model, x0, bundle, schedule: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """Sample ``t`` uniformly and ``eps ~ N(0, I)``, return the noise-prediction loss.

    ``model(x_t, t, bundle)`` must return a tensor shaped like ``x_t``.
    """
    b = x0.shape[0]
    t = torch.randint(0, len(schedule), (b,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, schedule)
    return noise_loss(eps, model(x_t, t, bundle))


def condition_dropout(bundle: ConditioningBundle, p_drop=None, generator: torch.Generator | None = None):
    """Independently drop each signal of each sample with its own probability."""
    if p_drop is None:
        p_drop = DEFAULT_DROP
    if not isinstance(p_drop, dict):
        p_drop = {name: float(p_drop) for name in SIGNALS}
    flags = {}
    for name in SIGNALS:
        p = float(p_drop.get(name, 0.0))
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"drop probability for {name} must be in [0, 1], got {p}")
        draw = torch.rand(bundle.batch_size, generator=generator) < p
        flags[name] = bundle.drops[name] | draw
    return bundle.with_drops(**flags)


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, w: float) -> torch.Tensor:
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeMismatch(f"{tuple(eps_cond.shape)} vs {tuple(eps_uncond.shape)}")
    if w == 1:
        return eps_cond
    if w == 0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


@dataclass
class SamplerConfig:
    steps: int = 50
    cfg_scale: float = 2.0
    eta: float = 0.0

    def validate(self, schedule: NoiseSchedule | None = None):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if schedule is not None and self.steps > len(schedule):
            raise ConfigError(f"steps {self.steps} exceeds schedule length {len(schedule)}")
        if self.cfg_scale < 0:
            raise ConfigError("cfg_scale must be >= 0")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")
        return self

    def to_dict(self):
        return asdict(self)


def ddim_timesteps(steps: int, num_steps: int) -> np.ndarray:
    """Evenly spaced steps from ``num_steps - 1`` down to 0, both ends included."""
    if steps == 1:
        return np.array([num_steps - 1])
    return np.round(np.linspace(num_steps - 1, 0, steps)).astype(np.int64)


def guided_eps(model, x, t, bundle: ConditioningBundle, cfg_scale: float):
    if cfg_scale == 1:
        return model(x, t, bundle)
    both = ConditioningBundle.cat([bundle, bundle.fully_dropped()])
    eps = model(torch.cat([x, x]), torch.cat([t, t]), both)
    eps_c, eps_u = eps.chunk(2)
    return cfg_combine(eps_c, eps_u, cfg_scale)


@torch.no_grad()
def ddim_sample(model, bundle, config: SamplerConfig, schedule: NoiseSchedule, init_noise: torch.Tensor,
                generator: torch.Generator | None = None) -> torch.Tensor:
    """Deterministic (``eta = 0``) DDIM reverse process from ``init_noise``."""
    config.validate(schedule)
    ts = ddim_timesteps(config.steps, len(schedule))
    x = init_noise
    b = x.shape[0]
    for i, t in enumerate(ts):
        ab = float(schedule.alphas_bar[t])
        ab_prev = float(schedule.alphas_bar[ts[i + 1]]) if i + 1 < len(ts) else 1.0
        eps = guided_eps(model, x, torch.full((b,), int(t), dtype=torch.long), bundle, config.cfg_scale)
        x0_hat = (x - (1.0 - ab) ** 0.5 * eps) / ab**0.5
        sigma = 0.0
        if config.eta > 0 and i + 1 < len(ts):
            sigma = config.eta * float(np.sqrt((1 - ab_prev) / (1 - ab) * (1 - ab / ab_prev)))
        x = ab_prev**0.5 * x0_hat + max(1.0 - ab_prev - sigma**2, 0.0) ** 0.5 * eps
        if sigma > 0:
            x = x + sigma * torch.randn(x.shape, generator=generator, dtype=x.dtype)
    return x
