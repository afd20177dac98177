"""Unified per-frame motion features and their inverse.

Each frame is packed as
``[root yaw rate (1) | root xz velocity (2) | root height (1) |
local joint positions ((J-1)*3) | joint velocities (J*3) |
local joint rotations in 6D ((J-1)*6) | foot contacts (4)]``
for a total width of ``12*J - 1`` (659 for the 55-joint rig, 263 for the
22-joint captioning rig). Horizontal quantities live in the root's
yaw-aligned frame; heights are absolute. Velocities are forward
differences scaled by fps, with the last frame repeating the previous one.
"""

from dataclasses import dataclass

import numpy as np

from .rotations import (
    axis_angle_to_matrix,
    extract_yaw,
    matrix_to_rot6d,
    rot6d_to_matrix,
    rotate_about_y,
)
from .skeleton import Skeleton, forward_kinematics

# contact = foot speed below this many m/s (0.02 m per frame at 20 fps)
CONTACT_SPEED_THRESHOLD = 0.4


@dataclass(frozen=True)
class FeatureLayout:
    """Index ranges of the per-frame feature blocks for a J-joint rig."""

    joint_count: int

    @property
    def width(self):
        return 12 * self.joint_count - 1

    @property
    def root(self):
        return slice(0, 4)

    @property
    def yaw_rate(self):
        return slice(0, 1)

    @property
    def root_velocity(self):
        return slice(1, 3)

    @property
    def root_height(self):
        return slice(3, 4)

    @property
    def joint_positions(self):
        return slice(4, 4 + (self.joint_count - 1) * 3)

    @property
    def joint_velocities(self):
        start = 4 + (self.joint_count - 1) * 3
        return slice(start, start + self.joint_count * 3)

    @property
    def joint_rotations(self):
        start = 4 + (self.joint_count - 1) * 3 + self.joint_count * 3
        return slice(start, start + (self.joint_count - 1) * 6)

    @property
    def foot_contacts(self):
        return slice(self.width - 4, self.width)


@dataclass(frozen=True)
class RawMotion:
    """Skeletal motion before feature extraction: root track plus local rotations."""

    fps: float
    root_positions: np.ndarray  # (T, 3) meters
    joint_rotations: np.ndarray  # (T, J, 3) axis-angle

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        rp = np.asarray(self.root_positions, dtype=np.float64)
        jr = np.asarray(self.joint_rotations, dtype=np.float64)
        if rp.ndim != 2 or rp.shape[1] != 3 or rp.shape[0] < 1:
            raise ValueError(f"root_positions must be (T, 3), got {rp.shape}")
        if jr.ndim != 3 or jr.shape[0] != rp.shape[0] or jr.shape[2] != 3:
            raise ValueError(f"joint_rotations must be (T, J, 3), got {jr.shape}")
        if not (np.isfinite(rp).all() and np.isfinite(jr).all()):
            raise ValueError("raw motion contains non-finite values")
        object.__setattr__(self, "root_positions", rp)
        object.__setattr__(self, "joint_rotations", jr)

    @property
    def frame_count(self):
        return self.root_positions.shape[0]


@dataclass
class MotionSequence:
    """A clip in the unified feature representation."""

    fps: float
    skeleton: Skeleton
    features: np.ndarray  # (T, 12J-1)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        layout = FeatureLayout(self.skeleton.joint_count)
        if feats.ndim != 2 or feats.shape[1] != layout.width:
            raise ValueError(
                f"features must be (T, {layout.width}) for J={self.skeleton.joint_count}, "
                f"got {feats.shape}"
            )
        if not np.isfinite(feats).all():
            raise ValueError("features contain non-finite values")
        contacts = feats[:, layout.foot_contacts]
        if not np.isin(contacts, (0.0, 1.0)).all():
            raise ValueError("foot contact block must be binary")
        self.features = feats

    @property
    def frame_count(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def layout(self):
        return FeatureLayout(self.skeleton.joint_count)


def _forward_diff(values, fps):
    """Forward differences scaled to per-second rates; last row repeated."""
    vel = np.empty_like(values)
    vel[:-1] = (values[1:] - values[:-1]) * fps
    vel[-1] = vel[-2]
    return vel


def _contacts_from_positions(positions, foot_indices, fps, threshold):
    speeds = np.linalg.norm(_forward_diff(positions[:, list(foot_indices)], fps), axis=-1)
    return (speeds < threshold).astype(np.float64)


def features_from_positions(positions, yaw, rot6d, fps, skeleton,
                            contact_threshold=CONTACT_SPEED_THRESHOLD):
    """Pack world-space positions plus yaw and local 6D rotations into features.

    ``positions`` is (T, J, 3), ``yaw`` (T,) unwrapped radians, ``rot6d``
    (T, J-1, 6) local rotations of the non-root joints.
    """
    T, J, _ = positions.shape
    root = skeleton.root_index
    layout = FeatureLayout(J)
    feats = np.zeros((T, layout.width), dtype=np.float64)

    feats[:, layout.yaw_rate] = _forward_diff(yaw[:, None], fps)
    root_xz = positions[:, root].copy()
    root_xz[:, 1] = 0.0
    root_disp = _forward_diff(root_xz, fps)
    local_disp = rotate_about_y(-yaw, root_disp)
    feats[:, layout.root_velocity] = local_disp[:, [0, 2]]
    feats[:, layout.root_height] = positions[:, root, 1:2]

    others = [j for j in range(J) if j != root]
    rel = positions[:, others] - root_xz[:, None, :]
    feats[:, layout.joint_positions] = rotate_about_y(-yaw[:, None], rel).reshape(T, -1)

    vel = _forward_diff(positions, fps)
    feats[:, layout.joint_velocities] = rotate_about_y(-yaw[:, None], vel).reshape(T, -1)

    feats[:, layout.joint_rotations] = rot6d.reshape(T, -1)
    feats[:, layout.foot_contacts] = _contacts_from_positions(
        positions, skeleton.foot_joint_indices, fps, contact_threshold
    )
    return feats


def to_unified_features(raw, skeleton, contact_threshold=CONTACT_SPEED_THRESHOLD):
    """Convert raw skeletal motion into a MotionSequence.

    Requires at least two frames (velocities are forward differences).
    """
    if raw.frame_count < 2:
        raise ValueError("need at least 2 frames to compute velocities")
    if raw.joint_rotations.shape[1] != skeleton.joint_count:
        raise ValueError(
            f"raw motion has {raw.joint_rotations.shape[1]} joints, "
            f"skeleton has {skeleton.joint_count}"
        )
    positions, _ = forward_kinematics(skeleton, raw.root_positions, raw.joint_rotations)
    root = skeleton.root_index
    root_mats = axis_angle_to_matrix(raw.joint_rotations[:, root])
    yaw = np.unwrap(extract_yaw(root_mats))

    others = [j for j in range(skeleton.joint_count) if j != root]
    rot6d = matrix_to_rot6d(axis_angle_to_matrix(raw.joint_rotations[:, others]))

    feats = features_from_positions(positions, yaw, rot6d, raw.fps, skeleton, contact_threshold)
    return MotionSequence(fps=raw.fps, skeleton=skeleton, features=feats)


def recover_trajectory(seq):
    """Integrate the root blocks back to world yaw and root xz positions.

    Returns (yaw, root_xz) with yaw (T,) and root_xz (T, 2); the gauge fixes
    frame 0 at the origin with zero yaw.
    """
    feats = seq.features
    T = seq.frame_count
    dt = 1.0 / seq.fps

    yaw = np.zeros(T, dtype=np.float64)
    yaw[1:] = np.cumsum(feats[:-1, 0]) * dt

    local_vel = np.zeros((T, 3), dtype=np.float64)
    local_vel[:, 0] = feats[:, 1]
    local_vel[:, 2] = feats[:, 2]
    world_step = rotate_about_y(yaw, local_vel) * dt
    root_xz = np.zeros((T, 2), dtype=np.float64)
    root_xz[1:] = np.cumsum(world_step[:-1, [0, 2]], axis=0)
    return yaw, root_xz


def recover_positions(seq):
    """Invert the representation to world joint positions (T, J, 3).

    The global trajectory is integrated from the root velocity blocks, so
    the output is defined up to the initial yaw/translation gauge.
    """
    layout = seq.layout
    J = seq.skeleton.joint_count
    root = seq.skeleton.root_index
    T = seq.frame_count
    feats = seq.features

    yaw, root_xz = recover_trajectory(seq)
    root_pos = np.zeros((T, 3), dtype=np.float64)
    root_pos[:, 0] = root_xz[:, 0]
    root_pos[:, 2] = root_xz[:, 1]

    local = feats[:, layout.joint_positions].reshape(T, J - 1, 3)
    world = rotate_about_y(yaw[:, None], local) + root_pos[:, None, :]

    positions = np.zeros((T, J, 3), dtype=np.float64)
    others = [j for j in range(J) if j != root]
    positions[:, others] = world
    positions[:, root, 0] = root_xz[:, 0]
    positions[:, root, 1] = feats[:, 3]
    positions[:, root, 2] = root_xz[:, 1]
    return positions


def align_to_reference(positions, reference):
    """Remove the frame-0 yaw/translation gauge between two position arrays.

    Rotates and translates ``positions`` so its first-frame root pose matches
    ``reference``; used to compare recovered positions with originals.
    """
    # least-squares yaw between frame-0 joint clouds, about the vertical axis
    a = positions[0] - positions[0].mean(axis=0, keepdims=True)
    b = reference[0] - reference[0].mean(axis=0, keepdims=True)
    num = np.sum(a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2])
    den = np.sum(a[:, 0] * b[:, 0] + a[:, 2] * b[:, 2])
    yaw = np.arctan2(num, den)
    rotated = rotate_about_y(yaw, positions.reshape(-1, 3)).reshape(positions.shape)
    shift = reference[0].mean(axis=0) - rotated[0].mean(axis=0)
    return rotated + shift


def project_to_caption_subset(seq, joint_map):
    """Restrict a sequence to a joint subset (typically 55 -> 22 joints).

    ``joint_map`` must be ascending, include the root, and (for meaningful
    contacts) should keep the foot joints. Root block and contacts are
    copied; per-joint blocks keep the selected rows.
    """
    joint_map = [int(j) for j in joint_map]
    J = seq.skeleton.joint_count
    root = seq.skeleton.root_index
    if any(not 0 <= j < J for j in joint_map):
        raise ValueError("joint_map index out of range")
    if root not in joint_map:
        raise ValueError("joint_map must include the root joint")
    if sorted(joint_map) != joint_map or len(set(joint_map)) != len(joint_map):
        raise ValueError("joint_map must be strictly ascending")

    kept = set(joint_map)
    new_parents = []
    offsets = []
    for j in joint_map:
        if j == root:
            new_parents.append(-1)
            offsets.append(seq.skeleton.offsets[j])
            continue
        p = seq.skeleton.parent_indices[j]
        off = seq.skeleton.offsets[j].copy()
        # pruned intermediate joints fold their offsets into the child bone
        while p not in kept:
            off = off + seq.skeleton.offsets[p]
            p = seq.skeleton.parent_indices[p]
        new_parents.append(joint_map.index(p))
        offsets.append(off)

    old_feet = seq.skeleton.foot_joint_indices
    new_feet = tuple(joint_map.index(f) for f in old_feet if f in kept)
    names = tuple(seq.skeleton.joint_names[j] for j in joint_map) if seq.skeleton.joint_names else ()
    new_skel = Skeleton(tuple(new_parents), np.array(offsets), new_feet, names)

    old_layout = seq.layout
    new_layout = FeatureLayout(len(joint_map))
    T = seq.frame_count
    feats = np.zeros((T, new_layout.width), dtype=np.float64)
    feats[:, new_layout.root] = seq.features[:, old_layout.root]

    old_others = [j for j in range(J) if j != root]
    new_others = [j for j in joint_map if j != root]
    pos = seq.features[:, old_layout.joint_positions].reshape(T, J - 1, 3)
    rows = [old_others.index(j) for j in new_others]
    feats[:, new_layout.joint_positions] = pos[:, rows].reshape(T, -1)

    vel = seq.features[:, old_layout.joint_velocities].reshape(T, J, 3)
    feats[:, new_layout.joint_velocities] = vel[:, joint_map].reshape(T, -1)

    rot = seq.features[:, old_layout.joint_rotations].reshape(T, J - 1, 6)
    feats[:, new_layout.joint_rotations] = rot[:, rows].reshape(T, -1)

    feats[:, new_layout.foot_contacts] = seq.features[:, old_layout.foot_contacts]
    return MotionSequence(fps=seq.fps, skeleton=new_skel, features=feats)


def resample_fps(seq, target_fps, contact_threshold=CONTACT_SPEED_THRESHOLD):
    """Resample a sequence to a new frame rate.

    Positions and yaw are recovered, linearly interpolated at the new frame
    times, and re-packed; 6D rotation blocks are interpolated then
    re-orthonormalized; velocities and contacts are recomputed at the new
    rate.
    """
    if target_fps <= 0:
        raise ValueError("target_fps must be positive")
    T = seq.frame_count
    J = seq.skeleton.joint_count
    duration = (T - 1) / seq.fps
    new_T = max(2, int(round(T * target_fps / seq.fps)))
    old_t = np.arange(T) / seq.fps
    new_t = np.minimum(np.arange(new_T) / target_fps, duration)

    positions = recover_positions(seq)
    yaw, _ = recover_trajectory(seq)

    flat = positions.reshape(T, -1)
    pos_i = np.empty((new_T, flat.shape[1]))
    for k in range(flat.shape[1]):
        pos_i[:, k] = np.interp(new_t, old_t, flat[:, k])
    pos_i = pos_i.reshape(new_T, J, 3)
    yaw_i = np.interp(new_t, old_t, yaw)

    rot = seq.features[:, seq.layout.joint_rotations].reshape(T, -1)
    rot_i = np.empty((new_T, rot.shape[1]))
    for k in range(rot.shape[1]):
        rot_i[:, k] = np.interp(new_t, old_t, rot[:, k])
    rot_i = rot_i.reshape(new_T, J - 1, 6)
    rot_i = matrix_to_rot6d(rot6d_to_matrix(rot_i))

    feats = features_from_positions(
        pos_i, yaw_i, rot_i, target_fps, seq.skeleton, contact_threshold
    )
    return MotionSequence(fps=target_fps, skeleton=seq.skeleton, features=feats)


def pad_or_truncate(seq, target_len=180):
    """Fix a sequence's length, returning (sequence, valid_mask).

    Long clips keep their first ``target_len`` frames. Short clips repeat
    the last frame with zeroed velocity blocks so padding stays motionless.
    """
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    layout = seq.layout
    T = seq.frame_count
    if T >= target_len:
        feats = seq.features[:target_len].copy()
        mask = np.ones(target_len, dtype=bool)
    else:
        pad = np.repeat(seq.features[-1:], target_len - T, axis=0)
        pad[:, layout.yaw_rate] = 0.0
        pad[:, layout.root_velocity] = 0.0
        pad[:, layout.joint_velocities] = 0.0
        feats = np.concatenate([seq.features, pad], axis=0)
        mask = np.zeros(target_len, dtype=bool)
        mask[:T] = True
    return MotionSequence(fps=seq.fps, skeleton=seq.skeleton, features=feats), mask
