"""Skeleton definition, default rigs and forward kinematics."""

from dataclasses import dataclass, field

import numpy as np

from .rotations import axis_angle_to_matrix

ROOT_PARENT = -1


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with fixed bone offsets.

    Joints are topologically ordered: every non-root joint has a parent with
    a lower index. Exactly one joint (the root) has parent ``ROOT_PARENT``.
    ``foot_joint_indices`` lists left heel, right heel, left toe, right toe.
    """

    parent_indices: tuple
    offsets: np.ndarray
    foot_joint_indices: tuple = field(default=())
    joint_names: tuple = field(default=())

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parent_indices)
        object.__setattr__(self, "parent_indices", parents)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if offsets.shape != (len(parents), 3):
            raise ValueError(f"offsets must be ({len(parents)}, 3), got {offsets.shape}")
        if not np.isfinite(offsets).all():
            raise ValueError("offsets must be finite")
        object.__setattr__(self, "offsets", offsets)
        roots = [i for i, p in enumerate(parents) if p == ROOT_PARENT]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root joint, found {len(roots)}")
        for i, p in enumerate(parents):
            if p != ROOT_PARENT and not 0 <= p < i:
                raise ValueError(f"joint {i} has parent {p}; parents must precede children")
        for f in self.foot_joint_indices:
            if not 0 <= f < len(parents):
                raise ValueError(f"foot joint index {f} out of range")

    @property
    def joint_count(self):
        return len(self.parent_indices)

    @property
    def root_index(self):
        return self.parent_indices.index(ROOT_PARENT)

    @property
    def feature_dim(self):
        """Width of the unified per-frame feature vector: 12J - 1."""
        return 12 * self.joint_count - 1


def forward_kinematics(skeleton, root_positions, joint_rotations):
    """Compute global joint positions from local axis-angle rotations.

    Args:
        skeleton: the rig.
        root_positions: (T, 3) root joint world positions.
        joint_rotations: (T, J, 3) per-joint local rotations, axis-angle.

    Returns:
        (positions, global_rotations): (T, J, 3) world positions and
        (T, J, 3, 3) world rotation matrices.
    """
    root_positions = np.asarray(root_positions, dtype=np.float64)
    joint_rotations = np.asarray(joint_rotations, dtype=np.float64)
    T = root_positions.shape[0]
    J = skeleton.joint_count
    if joint_rotations.shape != (T, J, 3):
        raise ValueError(f"joint_rotations must be ({T}, {J}, 3), got {joint_rotations.shape}")

    local = axis_angle_to_matrix(joint_rotations)
    positions = np.zeros((T, J, 3), dtype=np.float64)
    global_rot = np.zeros((T, J, 3, 3), dtype=np.float64)

    root = skeleton.root_index
    positions[:, root] = root_positions
    global_rot[:, root] = local[:, root]
    for j in range(J):
        if j == root:
            continue
        p = skeleton.parent_indices[j]
        global_rot[:, j] = global_rot[:, p] @ local[:, j]
        positions[:, j] = positions[:, p] + np.einsum(
            "tij,j->ti", global_rot[:, p], skeleton.offsets[j]
        )
    return positions, global_rot


# 55-joint gesture rig: 22 body joints (indices 0..21), jaw and eyes, then
# 15 finger joints per hand. The first 22 joints double as the captioning
# subset, so CAPTION_JOINT_MAP is simply range(22).

_BODY = [
    ("pelvis", ROOT_PARENT, (0.0, 0.0, 0.0)),
    ("left_hip", 0, (0.09, -0.06, 0.0)),
    ("right_hip", 0, (-0.09, -0.06, 0.0)),
    ("spine1", 0, (0.0, 0.11, 0.0)),
    ("left_knee", 1, (0.0, -0.40, 0.0)),
    ("right_knee", 2, (0.0, -0.40, 0.0)),
    ("spine2", 3, (0.0, 0.13, 0.0)),
    ("left_ankle", 4, (0.0, -0.42, 0.0)),
    ("right_ankle", 5, (0.0, -0.42, 0.0)),
    ("spine3", 6, (0.0, 0.13, 0.0)),
    ("left_foot", 7, (0.0, -0.06, 0.13)),
    ("right_foot", 8, (0.0, -0.06, 0.13)),
    ("neck", 9, (0.0, 0.14, 0.0)),
    ("left_collar", 9, (0.05, 0.10, 0.0)),
    ("right_collar", 9, (-0.05, 0.10, 0.0)),
    ("head", 12, (0.0, 0.12, 0.0)),
    ("left_shoulder", 13, (0.11, 0.0, 0.0)),
    ("right_shoulder", 14, (-0.11, 0.0, 0.0)),
    ("left_elbow", 16, (0.26, 0.0, 0.0)),
    ("right_elbow", 17, (-0.26, 0.0, 0.0)),
    ("left_wrist", 18, (0.25, 0.0, 0.0)),
    ("right_wrist", 19, (-0.25, 0.0, 0.0)),
]

_FACE = [
    ("jaw", 15, (0.0, 0.02, 0.05)),
    ("left_eye", 15, (0.03, 0.06, 0.08)),
    ("right_eye", 15, (-0.03, 0.06, 0.08)),
]

_FINGERS = ["index", "middle", "pinky", "ring", "thumb"]


def _hand(side, wrist, sign):
    joints = []
    base = {"index": 0.03, "middle": 0.01, "pinky": -0.03, "ring": -0.01, "thumb": 0.05}
    for finger in _FINGERS:
        for seg in range(3):
            parent = wrist if seg == 0 else -1  # placeholder, fixed below
            off = (sign * 0.08, 0.0, base[finger]) if seg == 0 else (sign * 0.03, 0.0, 0.0)
            joints.append((f"{side}_{finger}{seg + 1}", parent, off))
    return joints


def build_default_skeleton():
    """The 55-joint gesture rig used across the pipeline (feature dim 659)."""
    entries = list(_BODY) + list(_FACE)
    for side, wrist, sign in (("left", 20, 1.0), ("right", 21, -1.0)):
        hand = _hand(side, wrist, sign)
        start = len(entries)
        fixed = []
        for k, (name, parent, off) in enumerate(hand):
            if parent == -1:
                parent = start + k - 1
            fixed.append((name, parent, off))
        entries.extend(fixed)
    names = tuple(e[0] for e in entries)
    parents = tuple(e[1] for e in entries)
    offsets = np.array([e[2] for e in entries], dtype=np.float64)
    feet = (
        names.index("left_ankle"),
        names.index("right_ankle"),
        names.index("left_foot"),
        names.index("right_foot"),
    )
    return Skeleton(parents, offsets, feet, names)


def build_caption_skeleton():
    """The 22-joint body rig used for captioning (feature dim 263)."""
    names = tuple(e[0] for e in _BODY)
    parents = tuple(e[1] for e in _BODY)
    offsets = np.array([e[2] for e in _BODY], dtype=np.float64)
    feet = (
        names.index("left_ankle"),
        names.index("right_ankle"),
        names.index("left_foot"),
        names.index("right_foot"),
    )
    return Skeleton(parents, offsets, feet, names)


CAPTION_JOINT_MAP = tuple(range(22))

DEFAULT_ROOT_HEIGHT = 0.93
