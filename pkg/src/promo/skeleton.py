"""Fixed 22-joint skeleton and forward kinematics.

The skeleton is a hard-coded canonical tree: pelvis root, two legs with feet,
a three-segment spine, neck and head, and two arms hung off collars. Offsets
are meters; the rest pose is a T-pose facing +y with z up, about 1.7 m tall.
With identity rotations and the root at z = STANDING_ROOT_HEIGHT the foot
joints touch the ground plane z = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from promo import kernels
from promo.errors import ShapeError

JOINT_COUNT = 22
BODY_JOINT_COUNT = 21  # every joint except the pelvis root

_JOINT_DEFS = [
    # name, parent, offset (meters)
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("left_hip", 0, (0.10, 0.0, -0.07)),
    ("right_hip", 0, (-0.10, 0.0, -0.07)),
    ("spine1", 0, (0.0, 0.0, 0.12)),
    ("left_knee", 1, (0.0, 0.0, -0.42)),
    ("right_knee", 2, (0.0, 0.0, -0.42)),
    ("spine2", 3, (0.0, 0.0, 0.13)),
    ("left_ankle", 4, (0.0, 0.0, -0.44)),
    ("right_ankle", 5, (0.0, 0.0, -0.44)),
    ("spine3", 6, (0.0, 0.0, 0.13)),
    ("left_foot", 7, (0.0, 0.13, -0.05)),
    ("right_foot", 8, (0.0, 0.13, -0.05)),
    ("neck", 9, (0.0, 0.0, 0.14)),
    ("left_collar", 9, (0.08, 0.0, 0.06)),
    ("right_collar", 9, (-0.08, 0.0, 0.06)),
    ("head", 12, (0.0, 0.0, 0.15)),
    ("left_shoulder", 13, (0.10, 0.0, 0.02)),
    ("right_shoulder", 14, (-0.10, 0.0, 0.02)),
    ("left_elbow", 16, (0.26, 0.0, 0.0)),
    ("right_elbow", 17, (-0.26, 0.0, 0.0)),
    ("left_wrist", 18, (0.25, 0.0, 0.0)),
    ("right_wrist", 19, (-0.25, 0.0, 0.0)),
]

STANDING_ROOT_HEIGHT = 0.07 + 0.42 + 0.44 + 0.05  # pelvis height with feet on the ground


@dataclass(frozen=True)
class Skeleton:
    names: tuple = field(default=None)
    parents: np.ndarray = field(default=None)
    offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.parents[0] != -1:
            raise ShapeError("joint 0 must be the root")
        for j in range(1, len(self.parents)):
            if not 0 <= self.parents[j] < j:
                raise ShapeError("parents must form a tree in topological order")
            if np.linalg.norm(self.offsets[j]) == 0.0:
                raise ShapeError(f"non-root joint {self.names[j]!r} has a zero offset")

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=1)


def canonical_skeleton() -> Skeleton:
    names = tuple(d[0] for d in _JOINT_DEFS)
    parents = np.array([d[1] for d in _JOINT_DEFS], dtype=np.int64)
    offsets = np.array([d[2] for d in _JOINT_DEFS], dtype=np.float64)
    return Skeleton(names=names, parents=parents, offsets=offsets)


CANONICAL = canonical_skeleton()
JOINT = {name: i for i, name in enumerate(CANONICAL.names)}


def forward_kinematics_batch(rotations: np.ndarray, skeleton: Skeleton,
                             root_positions: np.ndarray) -> np.ndarray:
    """World joint positions for local rotations (N, J, 3, 3) and roots (N, 3).

    Joint 0's rotation is the global root orientation; every child position
    is parent position plus the parent's accumulated rotation applied to the
    child's rest offset.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    root_positions = np.asarray(root_positions, dtype=np.float64)
    if rotations.shape[1:] != (skeleton.joint_count, 3, 3):
        raise ShapeError(f"expected (N, {skeleton.joint_count}, 3, 3) rotations, got {rotations.shape}")
    return kernels.fk_positions_batch(rotations, skeleton.parents, skeleton.offsets, root_positions)


def forward_kinematics(rotations: np.ndarray, skeleton: Skeleton,
                       root_position=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Single-pose convenience wrapper; returns (J, 3) positions."""
    out = forward_kinematics_batch(
        np.asarray(rotations)[None], skeleton, np.asarray(root_position, dtype=np.float64)[None]
    )
    return out[0]
