"""Synthetic dyadic conversations with a known audio -> gesture -> social law.

Construction law for clip ``i`` (``rng = default_rng(seed + i)``), with
``P = tempo_map[relationship]`` frames per speaking turn:

* draws, in order: relationship ~ U{0..3}; personality ~ U[0, 1]^5; turn phase
  ~ U{0 .. 2 max(tempo_map) - 1}; envelope phases (self, other) ~ U[0, 2pi); gesture phases
  (target, partner) ~ U[0, 2pi); unit Gaussian noise ``T x J x 3`` for the
  target, then the partner. Fixed relationship/personality overrides replace
  the drawn values without changing the draw sequence.
* turn mask: self speaks when ``floor((t + phase) / P)`` is even, other speaks
  otherwise.
* envelope: ``e(t) = speaking(t) * (0.5 + 0.5 sin(2pi f t / fps + phi))`` with
  ``f = syllable_hz``.
* target gesture (the *other* speaker), per joint axis-angle vector::

      a(p) * (U_j e_other(t) + V_j e_self(t) + W_j sin(2pi t / P + psi + chi_j))
      + noise_level * n[t, j]

  where ``a(p) = amplitude_base + amplitude_map . p``. ``U, V, W`` (``J x 3``,
  uniform in [-0.3, 0.3]) and ``chi`` (uniform in [0, 2pi)) are fixed
  constants drawn from ``default_rng(LAW_SEED)``.
* partner gesture (*self*): the same law with the envelopes swapped, amplitude
  ``partner_amplitude`` and its own phase and noise.
* audio features come from the synthetic provider applied to each envelope.

Gestures are stored as 6D rotations (first two rotation-matrix columns).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, FormatError, UnknownProvider
from .motion_repr import FPS, JOINT_COUNT, axis_angle_to_rot6d
from .tensor_io import read_tensor_set, write_tensor_set

AUDIO_DIM = 768
LAW_SEED = 20240611
TRAITS = ("extraversion", "agreeableness", "conscientiousness", "neuroticism", "openness")
FIELDS = ("audio_self", "audio_other", "gesture_other", "gesture_self", "relationship", "personality", "turn_mask")


@dataclass
class SynthConfig:
    clip_length_frames: int = 300
    clips: int = 64
    seed: int = 0
    noise_level: float = 0.02
    amplitude_base: float = 0.25
    amplitude_map: list = field(default_factory=lambda: [0.5, 0.1, 0.0, 0.1, 0.05])
    tempo_map: list = field(default_factory=lambda: [30, 45, 60, 90])
    syllable_hz: float = 1.5
    partner_amplitude: float = 0.5
    joint_count: int = JOINT_COUNT
    provider_seed: int = 0
    fixed_relationship: int | None = None
    fixed_personality: list | None = None

    def validate(self):
        if self.clip_length_frames < 1 or self.clips < 1:
            raise ConfigError("clip_length_frames and clips must be positive")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if len(self.amplitude_map) != 5:
            raise ConfigError("amplitude_map needs one coefficient per trait (5)")
        if len(self.tempo_map) != 4 or min(self.tempo_map) < 1:
            raise ConfigError("tempo_map needs four positive turn lengths")
        if self.joint_count < 1:
            raise ConfigError("joint_count must be positive")
        if self.fixed_relationship is not None and self.fixed_relationship not in range(4):
            raise ConfigError("fixed_relationship must be in 0..3")
        if self.fixed_personality is not None:
            p = np.asarray(self.fixed_personality, dtype=float)
            if p.shape != (5,) or np.any(p < 0) or np.any(p > 1):
                raise ConfigError("fixed_personality must be 5 values in [0, 1]")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class DyadSample:
    audio_self: np.ndarray
    audio_other: np.ndarray
    gesture_other: np.ndarray
    gesture_self: np.ndarray
    relationship: np.ndarray
    personality: np.ndarray
    turn_mask: np.ndarray

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in FIELDS}


@dataclass
class Dataset:
    samples: list
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)


# --- audio providers ----------------------------------------------------------


class SyntheticAudioProvider:
    """Envelope-gated mixture of band-limited sinusoids, one feature row per motion frame.

    ``features[t] = silence + e(t) * M @ sin(2pi f_k t / fps + theta_k)`` with
    ``bands`` frequencies in [0.5, 6] Hz. A silent frame (``e = 0``) equals the
    constant ``silence`` embedding.
    """

    def __init__(self, seed: int = 0, bands: int = 8, fps: int = FPS):
        rng = np.random.default_rng(seed)
        self.mix = rng.standard_normal((AUDIO_DIM, bands)) / np.sqrt(bands)
        self.freqs = rng.uniform(0.5, 6.0, bands)
        self.phases = rng.uniform(0, 2 * np.pi, bands)
        self.silence = 0.1 * rng.standard_normal(AUDIO_DIM)
        self.fps = fps

    def __call__(self, envelope) -> np.ndarray:
        env = np.asarray(envelope, dtype=np.float64)
        t = np.arange(len(env))[:, None]
        carriers = np.sin(2 * np.pi * self.freqs * t / self.fps + self.phases)
        return (self.silence + env[:, None] * (carriers @ self.mix.T)).astype(np.float32)

    def envelope(self, features) -> np.ndarray:
        """Energy above silence per frame; tracks the gating envelope's onsets."""
        return np.linalg.norm(np.asarray(features, dtype=np.float64) - self.silence, axis=-1)


_PROVIDERS: dict[str, Callable] = {}


def register_provider(name: str, factory: Callable) -> None:
    _PROVIDERS[name] = factory


def get_provider(provider_id: str, **kwargs):
    try:
        return _PROVIDERS[provider_id](**kwargs)
    except KeyError:
        raise UnknownProvider(f"no audio feature provider named {provider_id!r}") from None


def audio_features(provider_id: str, raw_or_synth_input, **kwargs) -> np.ndarray:
    out = get_provider(provider_id, **kwargs)(raw_or_synth_input)
    if out.shape[-1] != AUDIO_DIM:
        raise FormatError(f"provider {provider_id} returned width {out.shape[-1]}, expected {AUDIO_DIM}")
    return out


register_provider("synthetic", SyntheticAudioProvider)


# --- generator ----------------------------------------------------------------


def law_constants(joint_count: int = JOINT_COUNT):
    rng = np.random.default_rng(LAW_SEED)
    u = rng.uniform(-0.3, 0.3, (joint_count, 3))
    v = rng.uniform(-0.3, 0.3, (joint_count, 3))
    w = rng.uniform(-0.3, 0.3, (joint_count, 3))
    chi = rng.uniform(0, 2 * np.pi, joint_count)
    return u, v, w, chi


def amplitude(config: SynthConfig, personality) -> float:
    return float(config.amplitude_base + np.dot(config.amplitude_map, personality))


def _gesture_axis_angle(amp, e_own, e_partner, period, phase, consts, noise, noise_level):
    u, v, w, chi = consts
    t = np.arange(len(e_own))[:, None]
    wave = np.sin(2 * np.pi * t / period + phase + chi[None, :])  # T x J
    pattern = (e_own[:, None, None] * u[None] + e_partner[:, None, None] * v[None]
               + wave[:, :, None] * w[None])
    return amp * pattern + noise_level * noise


def generate_clip(config: SynthConfig, index: int, provider=None, consts=None) -> DyadSample:
    provider = provider or get_provider("synthetic", seed=config.provider_seed)
    consts = consts or law_constants(config.joint_count)
    T, J = config.clip_length_frames, config.joint_count
    rng = np.random.default_rng(config.seed + index)
    rel = int(rng.integers(4))
    pers = rng.uniform(0.0, 1.0, 5)
    turn_phase = int(rng.integers(0, 2 * max(config.tempo_map)))
    env_phase = rng.uniform(0, 2 * np.pi, 2)
    gest_phase = rng.uniform(0, 2 * np.pi, 2)
    noise_other = rng.standard_normal((T, J, 3))
    noise_self = rng.standard_normal((T, J, 3))
    if config.fixed_relationship is not None:
        rel = config.fixed_relationship
    if config.fixed_personality is not None:
        pers = np.asarray(config.fixed_personality, dtype=np.float64)
    period = config.tempo_map[rel]

    t = np.arange(T)
    speak_self = ((t + turn_phase) // period) % 2 == 0
    mask = np.stack([speak_self, ~speak_self], axis=1).astype(np.float64)
    carrier = 2 * np.pi * config.syllable_hz * t / FPS
    e_self = mask[:, 0] * (0.5 + 0.5 * np.sin(carrier + env_phase[0]))
    e_other = mask[:, 1] * (0.5 + 0.5 * np.sin(carrier + env_phase[1]))

    aa_other = _gesture_axis_angle(amplitude(config, pers), e_other, e_self, period, gest_phase[0],
                                   consts, noise_other, config.noise_level)
    aa_self = _gesture_axis_angle(config.partner_amplitude, e_self, e_other, period, gest_phase[1],
                                  consts, noise_self, config.noise_level)
    return DyadSample(
        audio_self=provider(e_self),
        audio_other=provider(e_other),
        gesture_other=axis_angle_to_rot6d(aa_other).astype(np.float32),
        gesture_self=axis_angle_to_rot6d(aa_self).astype(np.float32),
        relationship=np.eye(4, dtype=np.float32)[rel],
        personality=pers.astype(np.float32),
        turn_mask=mask.astype(np.float32),
    )


def generate(config: SynthConfig) -> Dataset:
    config.validate()
    provider = get_provider("synthetic", seed=config.provider_seed)
    consts = law_constants(config.joint_count)
    samples = [generate_clip(config, i, provider, consts) for i in range(config.clips)]
    return Dataset(samples=samples, config=config.to_dict())


def save_dataset(dataset: Dataset, path):
    meta = {"seed": dataset.config.get("seed"), "config": dataset.config}
    return write_tensor_set(path, [s.as_dict() for s in dataset], meta, schema="dyad-dataset")


def load_dataset(path) -> Dataset:
    clips, manifest = read_tensor_set(path)
    samples = []
    for i, clip in enumerate(clips):
        missing = [f for f in FIELDS if f not in clip]
        if missing:
            raise FormatError(f"clip {i} is missing fields {missing}")
        samples.append(DyadSample(**{f: clip[f] for f in FIELDS}))
    return Dataset(samples=samples, config=manifest.get("config", {}))
