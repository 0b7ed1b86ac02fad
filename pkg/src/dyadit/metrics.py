"""Fréchet distance, diversity and beat consistency over gesture sets.

FD static fits a Gaussian to per-frame pose features (``3*J`` dims) pooled
over all clips; FD kinetic does the same on per-frame velocity vectors.
Diversity is the mean pairwise MSE over clips, reduced in lexicographic pair
order so reports are bit-stable.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimMismatch, InsufficientSamples, NumericalFailure, ShapeError
from .motion_repr import FPS, GestureSequence, to_pose_features, velocities

SHRINKAGE = 1e-3
SQRT_TOL = 1e-10
BC_SIGMA = 3.0
BC_SPEED_THRESHOLD = 0.2


@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @classmethod
    def fit(cls, samples: np.ndarray, shrinkage: float = SHRINKAGE) -> "GaussianSummary":
        """Mean and covariance of ``n x d`` samples.

        When ``n < 10 d`` the covariance is shrunk towards a scaled identity,
        ``(1 - λ) Σ + λ tr(Σ)/d I``, which keeps the square root well defined on
        small sets.
        """
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ShapeError(f"samples must be n x d, got {samples.shape}")
        n, d = samples.shape
        if n < 2:
            raise InsufficientSamples(f"need at least 2 samples, got {n}")
        mean = samples.mean(axis=0)
        centered = samples - mean
        cov = centered.T @ centered / (n - 1)
        cov = 0.5 * (cov + cov.T)
        if n < 10 * d:
            cov = (1.0 - shrinkage) * cov + shrinkage * np.trace(cov) / d * np.eye(d)
        return cls(mean=mean, cov=cov, n=n)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    clamped = max(0.0, -float(w.min(initial=0.0)))
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    scale = max(float(np.linalg.norm(M)), 1e-300)
    # clamping negative eigenvalues legitimately costs up to |λ_min| of residual
    allowed = SQRT_TOL * scale + clamped * np.sqrt(len(w))
    if not np.all(np.isfinite(root)) or np.linalg.norm(root @ root - M) > allowed:
        raise NumericalFailure("matrix square root residual above tolerance")
    return root


def sqrtm_product(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Principal square root of ``s1 @ s2`` for symmetric positive definite inputs.

    Uses ``s1^{1/2} (s1^{1/2} s2 s1^{1/2})^{1/2} s1^{-1/2}`` so every root is taken
    of a symmetric matrix.
    """
    r1 = _psd_sqrt(s1)
    w, V = np.linalg.eigh(0.5 * (s1 + s1.T))
    if w.min() <= 0:
        raise NumericalFailure("s1 must be positive definite to form s1^{-1/2}")
    r1_inv = (V / np.sqrt(w)) @ V.T
    return r1 @ _psd_sqrt(r1 @ s2 @ r1) @ r1_inv


def frechet(g1: GaussianSummary, g2: GaussianSummary) -> float:
    if g1.mean.shape != g2.mean.shape or g1.cov.shape != g2.cov.shape:
        raise DimMismatch(f"summary dims differ: {g1.mean.shape} vs {g2.mean.shape}")
    diff = g1.mean - g2.mean
    r1 = _psd_sqrt(g1.cov)
    cross = _psd_sqrt(r1 @ g2.cov @ r1)
    value = diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(cross)
    return float(value)


def _as_frames(seq) -> np.ndarray:
    return seq.frames if isinstance(seq, GestureSequence) else GestureSequence(seq).frames


def _pose_samples(clips) -> list[np.ndarray]:
    return [to_pose_features(_as_frames(c)) for c in clips]


def _flatten_frames(feats: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([f.reshape(f.shape[0], -1) for f in feats], axis=0)


def _fd(gen_feats: list[np.ndarray], ref_feats: list[np.ndarray]) -> float:
    if not gen_feats or not ref_feats:
        raise InsufficientSamples("both sets must be nonempty")
    g = GaussianSummary.fit(_flatten_frames(_sorted_by_content(gen_feats)))
    r = GaussianSummary.fit(_flatten_frames(_sorted_by_content(ref_feats)))
    return max(frechet(g, r), 0.0)


def fd_static(gen: Sequence, ref: Sequence) -> float:
    return _fd(_pose_samples(gen), _pose_samples(ref))


def fd_kinetic(gen: Sequence, ref: Sequence, fps: int = FPS) -> float:
    return _fd(
        [velocities(f, fps) for f in _pose_samples(gen)],
        [velocities(f, fps) for f in _pose_samples(ref)],
    )


def _pairwise_mse(feats: list[np.ndarray]) -> float:
    if len(feats) < 2:
        raise InsufficientSamples(f"diversity needs at least 2 clips, got {len(feats)}")
    shapes = {f.shape for f in feats}
    if len(shapes) != 1:
        raise ShapeError(f"clips must share a shape, got {sorted(shapes)}")
    total = 0.0
    count = 0
    for i, j in itertools.combinations(range(len(feats)), 2):
        total += float(np.mean((feats[i] - feats[j]) ** 2))
        count += 1
    return total / count


def _sorted_by_content(feats: list[np.ndarray]) -> list[np.ndarray]:
    # canonical order so the floating-point sum does not depend on clip order
    keys = [f.astype(np.float64).tobytes() for f in feats]
    order = sorted(range(len(feats)), key=lambda i: keys[i])
    return [feats[i] for i in order]


def diversity_static(clips: Sequence) -> float:
    return _pairwise_mse(_sorted_by_content(_pose_samples(clips)))


def diversity_kinetic(clips: Sequence, fps: int = FPS) -> float:
    return _pairwise_mse(_sorted_by_content([velocities(f, fps) for f in _pose_samples(clips)]))


# --- beat consistency -------------------------------------------------------


def joint_speed(features: np.ndarray, fps: int = FPS) -> np.ndarray:
    """Total joint speed per frame; entry ``t`` is the speed entering frame ``t``.

    Frame 0 has no incoming velocity and is set to NaN so it never registers
    as a beat.
    """
    vel = velocities(features, fps)  # (T-1) x 3 x J
    speed = np.linalg.norm(vel, axis=1).sum(axis=-1)
    return np.concatenate([[np.nan], speed])


def kinematic_beats(features: np.ndarray, threshold: float = BC_SPEED_THRESHOLD, fps: int = FPS) -> np.ndarray:
    s = joint_speed(features, fps)
    if len(s) < 4:
        return np.zeros(0, dtype=int)
    peak = np.nanmax(s)
    mid = s[2:-1]
    is_min = (mid < s[1:-2]) & (mid <= s[3:]) & (mid < threshold * peak)
    return np.flatnonzero(is_min) + 2


def onset_strength(envelope: np.ndarray) -> np.ndarray:
    env = np.asarray(envelope, dtype=np.float64)
    onset = np.zeros_like(env)
    onset[1:] = np.maximum(env[1:] - env[:-1], 0.0)
    return onset


def audio_beats(envelope: np.ndarray) -> np.ndarray:
    o = onset_strength(envelope)
    if len(o) < 3:
        return np.zeros(0, dtype=int)
    padded = np.concatenate([o, [0.0]])
    mid = padded[1:-1]
    is_max = (mid > padded[:-2]) & (mid >= padded[2:]) & (mid > 0)
    return np.flatnonzero(is_max) + 1


def beat_alignment(audio_idx: np.ndarray, motion_idx: np.ndarray, sigma: float = BC_SIGMA) -> float:
    audio_idx = np.asarray(audio_idx, dtype=np.float64)
    motion_idx = np.asarray(motion_idx, dtype=np.float64)
    if audio_idx.size == 0 or motion_idx.size == 0:
        return 0.0
    delta = np.min(np.abs(audio_idx[:, None] - motion_idx[None, :]), axis=1)
    return float(np.mean(np.exp(-(delta**2) / (2.0 * sigma**2))))


def beat_consistency(
    gesture,
    audio_envelope: np.ndarray,
    sigma: float = BC_SIGMA,
    threshold: float = BC_SPEED_THRESHOLD,
    fps: int = FPS,
) -> tuple[float, list[str]]:
    """Score in [0, 1] and a list of warnings (``"no_kinematic_beats"`` etc.)."""
    frames = _as_frames(gesture)
    env = np.asarray(audio_envelope)
    if env.shape[0] != frames.shape[0]:
        raise ShapeError(f"envelope length {env.shape[0]} != gesture length {frames.shape[0]}")
    feats = to_pose_features(frames)
    a = audio_beats(env)
    m = kinematic_beats(feats, threshold, fps)
    warnings = []
    if a.size == 0:
        warnings.append("no_audio_beats")
    if m.size == 0:
        warnings.append("no_kinematic_beats")
    if warnings:
        return 0.0, warnings
    return beat_alignment(a, m, sigma), warnings


# --- report -------------------------------------------------------------------


@dataclass
class MetricReport:
    fd_static: float
    fd_kinetic: float
    diversity_static: float
    diversity_kinetic: float
    beat_consistency: float
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def evaluate_sets(
    gen: Sequence,
    ref: Sequence,
    envelopes: Sequence[np.ndarray] | None = None,
    sigma: float = BC_SIGMA,
    threshold: float = BC_SPEED_THRESHOLD,
    fps: int = FPS,
) -> MetricReport:
    """Full metric suite. Beat consistency averages over generated clips with envelopes."""
    warnings: list[str] = []
    bc_scores = []
    if envelopes is not None:
        for i, (clip, env) in enumerate(zip(gen, envelopes)):
            score, w = beat_consistency(clip, env, sigma, threshold, fps)
            bc_scores.append(score)
            warnings.extend(f"clip {i}: {msg}" for msg in w)
    else:
        warnings.append("no audio envelopes supplied; beat_consistency set to 0")
    return MetricReport(
        fd_static=fd_static(gen, ref),
        fd_kinetic=fd_kinetic(gen, ref, fps),
        diversity_static=diversity_static(gen),
        diversity_kinetic=diversity_kinetic(gen, fps),
        beat_consistency=float(np.mean(bc_scores)) if bc_scores else 0.0,
        config={
            "bc_sigma_frames": sigma,
            "bc_speed_threshold": threshold,
            "fps": fps,
            "covariance_shrinkage": SHRINKAGE,
            "n_generated": len(gen),
            "n_reference": len(ref),
        },
        warnings=warnings,
    )
