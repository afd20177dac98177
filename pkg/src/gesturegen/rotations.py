"""Rotation conversions: axis-angle, rotation matrices and the 6D form.

The 6D form stores the first two columns of a rotation matrix; the full
matrix is recovered by Gram-Schmidt plus a cross product. All functions
broadcast over leading dimensions and work in float64.
"""

import numpy as np

_EPS = 1e-12


def axis_angle_to_matrix(aa):
    """Convert axis-angle vectors (..., 3) to rotation matrices (..., 3, 3)."""
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    axis = aa / np.maximum(angle, _EPS)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c = np.cos(angle[..., 0])
    s = np.sin(angle[..., 0])
    t = 1.0 - c

    mat = np.empty(aa.shape[:-1] + (3, 3), dtype=np.float64)
    mat[..., 0, 0] = t * x * x + c
    mat[..., 0, 1] = t * x * y - s * z
    mat[..., 0, 2] = t * x * z + s * y
    mat[..., 1, 0] = t * x * y + s * z
    mat[..., 1, 1] = t * y * y + c
    mat[..., 1, 2] = t * y * z - s * x
    mat[..., 2, 0] = t * x * z - s * y
    mat[..., 2, 1] = t * y * z + s * x
    mat[..., 2, 2] = t * z * z + c
    return mat


def matrix_to_axis_angle(mat):
    """Convert rotation matrices (..., 3, 3) to axis-angle vectors (..., 3)."""
    mat = np.asarray(mat, dtype=np.float64)
    trace = np.clip(mat[..., 0, 0] + mat[..., 1, 1] + mat[..., 2, 2], -1.0, 3.0)
    angle = np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))
    # skew-symmetric part carries axis * sin(angle)
    axis = np.stack(
        [
            mat[..., 2, 1] - mat[..., 1, 2],
            mat[..., 0, 2] - mat[..., 2, 0],
            mat[..., 1, 0] - mat[..., 0, 1],
        ],
        axis=-1,
    )
    sin = np.sin(angle)[..., None]
    small = sin[..., 0] < 1e-6
    axis = np.where(small[..., None], np.array([1.0, 0.0, 0.0]), axis / np.maximum(2.0 * sin, _EPS))
    return axis * angle[..., None]


def matrix_to_rot6d(mat):
    """Flatten the first two matrix columns into a 6-vector (..., 6)."""
    mat = np.asarray(mat, dtype=np.float64)
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def rot6d_to_matrix(r6):
    """Recover rotation matrices from the 6D form via Gram-Schmidt.

    Non-orthonormal inputs (e.g. interpolated 6D values) are projected back
    onto SO(3); degenerate all-zero inputs fall back to the identity axes.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    a = r6[..., :3]
    b = r6[..., 3:]
    x = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), _EPS)
    y = b - np.sum(x * b, axis=-1, keepdims=True) * x
    y = y / np.maximum(np.linalg.norm(y, axis=-1, keepdims=True), _EPS)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def yaw_matrix(yaw):
    """Rotation about the vertical (+y) axis; positive yaw turns x toward z."""
    yaw = np.asarray(yaw, dtype=np.float64)
    c = np.cos(yaw)
    s = np.sin(yaw)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    return np.stack(
        [
            np.stack([c, zero, s], axis=-1),
            np.stack([zero, one, zero], axis=-1),
            np.stack([-s, zero, c], axis=-1),
        ],
        axis=-2,
    )


def extract_yaw(mat):
    """Yaw angle of a rotation: heading of the rotated forward (+z) axis.

    Falls back to the rotated +x axis when the forward axis is near vertical.
    """
    mat = np.asarray(mat, dtype=np.float64)
    fwd = mat[..., :, 2]
    horiz = np.hypot(fwd[..., 0], fwd[..., 2])
    yaw = np.arctan2(fwd[..., 0], fwd[..., 2])
    side = mat[..., :, 0]
    # when forward points straight up/down, heading comes from the side axis
    yaw_side = np.arctan2(side[..., 2], side[..., 0])
    return np.where(horiz < 1e-6, -yaw_side, yaw)


def rotate_about_y(yaw, vec):
    """Apply a yaw rotation to vectors (..., 3) without building matrices."""
    yaw = np.asarray(yaw, dtype=np.float64)
    vec = np.asarray(vec, dtype=np.float64)
    c = np.cos(yaw)[..., None]
    s = np.sin(yaw)[..., None]
    x = vec[..., 0:1]
    y = vec[..., 1:2]
    z = vec[..., 2:3]
    return np.concatenate([c * x + s * z, y, -s * x + c * z], axis=-1)
