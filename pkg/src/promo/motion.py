"""Pose and motion feature encodings.

A pose is 132 floats: the root orientation (6D) followed by 21 body-joint
rotations (6D each), no global position. A motion frame prepends three
translation channels: planar root velocity (x, y, meters per frame) and the
absolute root height z, for 135 floats. Sequences are 64 frames; the first
frame's planar velocity is zero so the global trajectory is recoverable from
an initial planar position by a cumulative sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from promo.errors import NonFiniteError, ShapeError
from promo.rotation import rotmat_to_sixd_batch, sixd_to_rotmat_batch
from promo.skeleton import JOINT_COUNT

POSE_DIM = 132          # 22 joints x 6
FRAME_DIM = 135         # 3 translation channels + POSE_DIM
SEQ_LEN = 64
TRANS_SLICE = slice(0, 3)
ROOT_ORIENT_SLICE = slice(3, 9)
BODY_SLICE = slice(9, FRAME_DIM)
POSE_SLICE = slice(3, FRAME_DIM)


@dataclass
class MotionSequence:
    """Canonical 64 x 135 feature block plus playback rate metadata."""

    frames: np.ndarray
    fps: int = 20

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.shape != (SEQ_LEN, FRAME_DIM):
            raise ShapeError(f"expected ({SEQ_LEN}, {FRAME_DIM}) frames, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise NonFiniteError("motion sequence contains non-finite values")
        if not np.allclose(self.frames[0, 0:2], 0.0, atol=1e-6):
            raise ShapeError("frame 0 must have zero planar velocity")

    @property
    def poses(self) -> np.ndarray:
        """Local poses per frame: (64, 132)."""
        return self.frames[:, POSE_SLICE]


def pose_to_rotmats(pose: np.ndarray) -> np.ndarray:
    """(..., 132) -> (..., 22, 3, 3); joint 0 is the root orientation."""
    pose = np.asarray(pose)
    if pose.shape[-1] != POSE_DIM:
        raise ShapeError(f"pose must have {POSE_DIM} channels, got {pose.shape}")
    blocks = pose.reshape(pose.shape[:-1] + (JOINT_COUNT, 6))
    return sixd_to_rotmat_batch(blocks)


def rotmats_to_pose(rotations: np.ndarray) -> np.ndarray:
    """(..., 22, 3, 3) -> (..., 132)."""
    rotations = np.asarray(rotations)
    if rotations.shape[-3:] != (JOINT_COUNT, 3, 3):
        raise ShapeError(f"expected (..., {JOINT_COUNT}, 3, 3), got {rotations.shape}")
    sixd = rotmat_to_sixd_batch(rotations)
    return sixd.reshape(rotations.shape[:-3] + (POSE_DIM,)).astype(np.float32)


def encode_frames(root_positions: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Raw global trajectory -> feature frames.

    ``root_positions`` is (T, 3) world meters, ``rotations`` (T, 22, 3, 3)
    local joint rotations with the root orientation at joint 0. The planar
    velocity of frame t is the first difference of global x, y (zero for the
    first frame); z is kept absolute.
    """
    root_positions = np.asarray(root_positions, dtype=np.float64)
    if root_positions.ndim != 2 or root_positions.shape[1] != 3:
        raise ShapeError(f"root positions must be (T, 3), got {root_positions.shape}")
    t_len = root_positions.shape[0]
    if t_len < 2:
        raise ShapeError("need at least 2 frames to form velocities")
    frames = np.zeros((t_len, FRAME_DIM), dtype=np.float32)
    frames[1:, 0:2] = np.diff(root_positions[:, 0:2], axis=0)
    frames[:, 2] = root_positions[:, 2]
    frames[:, POSE_SLICE] = rotmats_to_pose(rotations)
    return frames


def decode_frames(frames: np.ndarray, initial_xy=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Feature frames -> (root positions (T, 3), rotations (T, 22, 3, 3)).

    Global x, y come from the initial position plus the cumulative sum of
    per-frame velocities; z is copied through.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != FRAME_DIM:
        raise ShapeError(f"frames must be (T, {FRAME_DIM}), got {frames.shape}")
    t_len = frames.shape[0]
    root = np.zeros((t_len, 3), dtype=np.float64)
    root[:, 0:2] = np.asarray(initial_xy, dtype=np.float64) + np.cumsum(
        frames[:, 0:2].astype(np.float64), axis=0
    )
    root[:, 2] = frames[:, 2]
    rotations = pose_to_rotmats(frames[:, POSE_SLICE])
    return root, rotations


def encode_motion(root_positions, rotations, fps: int = 20) -> MotionSequence:
    return MotionSequence(encode_frames(root_positions, rotations), fps=fps)


def decode_motion(seq: MotionSequence, initial_xy=(0.0, 0.0)):
    return decode_frames(seq.frames, initial_xy)
