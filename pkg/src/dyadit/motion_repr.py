"""Gesture representation: 6D rotations over upper-body joints.

Frames are stored as ``T x J x 6`` arrays where each 6-vector holds the first
two columns of the joint's rotation matrix. Metrics work in a skeleton-free
pose space: the axis-angle vector of every joint, giving ``T x 3 x J``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateInput, InvalidRotation, ShapeError, TooShort

FPS = 30
JOINT_COUNT = 43
DEGENERATE_EPS = 1e-8
ROTATION_TOL = 1e-5


@dataclass
class GestureSequence:
    frames: np.ndarray
    fps: int = FPS

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[-1] != 6:
            raise ShapeError(f"gesture frames must be T x J x 6, got {frames.shape}")
        if frames.shape[0] < 1:
            raise ShapeError("gesture sequence needs at least one frame")
        if not np.all(np.isfinite(frames)):
            raise ShapeError("gesture frames contain non-finite values")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1]


def rot6d_to_matrix(r6) -> np.ndarray:
    """Gram-Schmidt decode of ``(..., 6)`` into ``(..., 3, 3)`` rotation matrices.

    The first 3-vector becomes the first column after normalization, the
    second is orthogonalized against it, and the third column is their cross
    product.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ShapeError(f"expected trailing dimension 6, got {r6.shape}")
    a, b = r6[..., :3], r6[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na <= DEGENERATE_EPS):
        raise DegenerateInput("first 3-vector of a 6D rotation has (near) zero norm")
    x = a / na
    b = b - np.sum(x * b, axis=-1, keepdims=True) * x
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(nb <= DEGENERATE_EPS):
        raise DegenerateInput("6D rotation has parallel 3-vectors; second column collapses")
    y = b / nb
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def check_rotation(R, tol: float = ROTATION_TOL) -> None:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise ShapeError(f"expected (..., 3, 3), got {R.shape}")
    eye = np.eye(3)
    gram = np.swapaxes(R, -1, -2) @ R
    if not np.all(np.isfinite(R)) or np.max(np.abs(gram - eye), initial=0.0) > tol:
        raise InvalidRotation("matrix is not orthonormal")
    if np.max(np.abs(np.linalg.det(R) - 1.0), initial=0.0) > tol:
        raise InvalidRotation("matrix determinant is not +1")


def matrix_to_rot6d(R) -> np.ndarray:
    """First two columns of ``R``, concatenated column-wise."""
    R = np.asarray(R, dtype=np.float64)
    check_rotation(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def matrix_to_axis_angle(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    return Rotation.from_matrix(flat).as_rotvec().reshape(R.shape[:-2] + (3,))


def axis_angle_to_matrix(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    flat = v.reshape(-1, 3)
    return Rotation.from_rotvec(flat).as_matrix().reshape(v.shape[:-1] + (3, 3))


def axis_angle_to_rot6d(v) -> np.ndarray:
    R = axis_angle_to_matrix(v)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def to_pose_features(seq: GestureSequence | np.ndarray) -> np.ndarray:
    """Axis-angle vector per joint and frame, shape ``T x 3 x J``."""
    frames = seq.frames if isinstance(seq, GestureSequence) else GestureSequence(seq).frames
    rotvec = matrix_to_axis_angle(rot6d_to_matrix(frames))  # T x J x 3
    return np.ascontiguousarray(np.swapaxes(rotvec, 1, 2))


def velocities(features: np.ndarray, fps: int = FPS) -> np.ndarray:
    """Forward frame differences scaled to per-second units."""
    features = np.asarray(features)
    if features.shape[0] < 2:
        raise TooShort(f"velocities need at least 2 frames, got {features.shape[0]}")
    return np.diff(features, axis=0) * fps
