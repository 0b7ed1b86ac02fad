import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyadit.errors import DimMismatch, InsufficientSamples
from dyadit.metrics import (
    GaussianSummary, beat_alignment, beat_consistency, diversity_kinetic, diversity_static, evaluate_sets,
    fd_kinetic, fd_static, frechet, sqrtm_product,
)
from dyadit.motion_repr import axis_angle_to_rot6d, to_pose_features
from dyadit.synthetic_data import SynthConfig, generate


def clip_from_features(aa):
    """``T x J x 3`` axis-angle array -> ``T x J x 6`` gesture."""
    return axis_angle_to_rot6d(aa)


def _gauss(mean, cov):
    return GaussianSummary(np.asarray(mean, float), np.asarray(cov, float), 100)


def test_frechet_closed_forms():
    assert abs(frechet(_gauss([0], [[1]]), _gauss([3], [[1]])) - 9.0) <= 1e-6
    assert abs(frechet(_gauss([0, 0], np.diag([1, 4])), _gauss([0, 0], np.diag([4, 1]))) - 2.0) <= 1e-6
    g = _gauss([1, 2, 3], np.diag([1, 2, 3]) + 0.1)
    assert abs(frechet(g, g)) <= 1e-8
    with pytest.raises(DimMismatch):
        frechet(_gauss([0], [[1]]), _gauss([0, 0], np.eye(2)))


def _spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_sqrt_and_symmetry_on_random_pairs(seed, d):
    rng = np.random.default_rng(seed)
    s1, s2 = _spd(rng, d), _spd(rng, d)
    root = sqrtm_product(s1, s2)
    target = s1 @ s2
    assert np.linalg.norm(root @ root - target) <= 1e-6 * np.linalg.norm(target)
    g1, g2 = _gauss(rng.standard_normal(d), s1), _gauss(rng.standard_normal(d), s2)
    a, b = frechet(g1, g2), frechet(g2, g1)
    assert abs(a - b) <= 1e-6 * max(1.0, abs(a))
    assert a >= -1e-8


def test_shrinkage_only_for_small_samples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 10))
    np.testing.assert_allclose(GaussianSummary.fit(x, shrinkage=0.0).cov, np.cov(x.T), atol=1e-12)
    big = rng.standard_normal((200, 10))
    np.testing.assert_allclose(GaussianSummary.fit(big).cov, np.cov(big.T), atol=1e-12)
    with pytest.raises(InsufficientSamples):
        GaussianSummary.fit(x[:1])


@pytest.fixture(scope="module")
def synth():
    return [s.gesture_other for s in generate(SynthConfig(clips=12, clip_length_frames=120, seed=7))]


def test_fd_static_properties(synth):
    assert fd_static(synth, synth) <= 1e-6
    assert fd_static(synth[::-1], synth) == fd_static(synth, synth)
    assert abs(fd_static(synth[:5], synth[5:]) - fd_static(synth[5:], synth[:5])) <= 1e-6
    a, b = synth[:6], synth[6:]
    shifted = []
    for clip in b:
        aa = np.swapaxes(to_pose_features(clip), 1, 2).copy()
        aa[..., 0] += 1.0
        shifted.append(clip_from_features(aa))
    assert fd_static(a, b) < fd_static(a, shifted)


def test_fd_kinetic_properties(synth):
    assert fd_kinetic(synth, synth) <= 1e-6
    symmetric = synth[:4] + [c[::-1].copy() for c in synth[:4]]
    reversed_set = [c[::-1].copy() for c in symmetric]
    assert fd_kinetic(symmetric, reversed_set) <= 1e-6
    frozen = [np.repeat(c[:1], len(c), axis=0) for c in synth]
    assert fd_kinetic(frozen, synth) > 0


def test_diversity(synth):
    assert diversity_static([synth[0]] * 3) == 0
    assert diversity_kinetic([synth[0]] * 3) == 0
    t = np.arange(60)[:, None, None]
    aa = 0.2 * np.sin(t / 5.0 + np.zeros((1, 43, 3)))
    c = 0.05
    assert abs(diversity_static([clip_from_features(aa), clip_from_features(aa + c)]) - c**2) < 1e-10
    shifted = 0.2 * np.sin(t / 5.0 + 1.0 + np.zeros((1, 43, 3)))
    assert diversity_kinetic([clip_from_features(aa), clip_from_features(shifted)]) > 0
    perm = [synth[i] for i in (3, 1, 0, 2, 5, 4)]
    assert diversity_static(perm) == diversity_static(synth[:6])
    assert diversity_kinetic(perm) == diversity_kinetic(synth[:6])
    with pytest.raises(InsufficientSamples):
        diversity_static(synth[:1])


def _single_joint_motion(speeds):
    """Rotation about z of one joint whose per-frame increments are ``speeds`` (radians/frame)."""
    angle = np.concatenate([[0.0], np.cumsum(speeds)])
    aa = np.zeros((len(angle), 43, 3))
    aa[:, 0, 2] = angle
    return clip_from_features(aa)


def test_beat_consistency_cases():
    assert abs(beat_alignment([10], [13], 3.0) - np.exp(-0.5)) <= 1e-9
    u = np.arange(1, 30)
    gesture = _single_joint_motion(0.001 + 0.0005 * (u - 13.0) ** 2)
    env = np.zeros(30)
    env[10:] = 1.0
    score, warnings = beat_consistency(gesture, env)
    assert warnings == []
    assert abs(score - np.exp(-0.5)) <= 1e-9
    env = np.zeros(30)
    env[13:] = 1.0
    assert abs(beat_consistency(gesture, env)[0] - 1.0) <= 1e-9
    steady = _single_joint_motion(np.full(29, 0.02))
    score, warnings = beat_consistency(steady, env)
    assert score == 0.0 and "no_kinematic_beats" in warnings


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_beat_consistency_bounded(seed):
    rng = np.random.default_rng(seed)
    gesture = clip_from_features(0.3 * rng.standard_normal((40, 43, 3)))
    score, _ = beat_consistency(gesture, rng.random(40))
    assert 0.0 <= score <= 1.0


def test_report_fields(synth):
    envs = [np.abs(np.sin(np.arange(120) / 7.0)) for _ in synth]
    report = evaluate_sets(synth, synth, envs)
    doc = json.loads(report.to_json())
    for key in ("fd_static", "fd_kinetic", "diversity_static", "diversity_kinetic", "beat_consistency"):
        assert np.isfinite(doc[key])
    assert doc["config"]["bc_sigma_frames"] == 3.0 and doc["config"]["bc_speed_threshold"] == 0.2
    assert doc["fd_static"] <= 1e-6
    assert 0 <= doc["beat_consistency"] <= 1
