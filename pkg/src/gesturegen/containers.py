"""Motion container files and corpus manifests.

A container is a UTF-8 JSON header line followed by a single newline and
then raw little-endian float32 feature frames in row-major order. The
header records ``format_version, fps, joint_count, frame_count,
feature_dim, skeleton``. Readers reject any file whose feature_dim is not
``12 * joint_count - 1``.
"""

import json

import numpy as np

from .features import MotionSequence
from .skeleton import Skeleton

FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Raised for malformed or inconsistent motion container files."""


def _skeleton_to_dict(skel):
    return {
        "parent_indices": list(skel.parent_indices),
        "offsets": [[float(v) for v in row] for row in skel.offsets],
        "foot_joint_indices": list(skel.foot_joint_indices),
        "joint_names": list(skel.joint_names),
    }


def _skeleton_from_dict(d):
    return Skeleton(
        tuple(d["parent_indices"]),
        np.array(d["offsets"], dtype=np.float64),
        tuple(d.get("foot_joint_indices", ())),
        tuple(d.get("joint_names", ())),
    )


def write_motion(path, seq):
    """Write a MotionSequence to a container file (deterministic bytes)."""
    header = {
        "format_version": FORMAT_VERSION,
        "fps": float(seq.fps),
        "joint_count": seq.skeleton.joint_count,
        "frame_count": seq.frame_count,
        "feature_dim": seq.feature_dim,
        "skeleton": _skeleton_to_dict(seq.skeleton),
    }
    payload = np.ascontiguousarray(seq.features, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        f.write(payload)


def read_motion(path):
    """Read a container file back into a MotionSequence."""
    with open(path, "rb") as f:
        blob = f.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ContainerError(f"{path}: missing header/payload separator")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: bad JSON header: {exc}") from exc

    for key in ("format_version", "fps", "joint_count", "frame_count", "feature_dim", "skeleton"):
        if key not in header:
            raise ContainerError(f"{path}: header missing {key!r}")
    if header["format_version"] != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format_version {header['format_version']}")
    J = int(header["joint_count"])
    D = int(header["feature_dim"])
    T = int(header["frame_count"])
    if D != 12 * J - 1:
        raise ContainerError(f"{path}: feature_dim {D} != 12*{J}-1")

    payload = blob[nl + 1:]
    expected = T * D * 4
    if len(payload) != expected:
        raise ContainerError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    feats = np.frombuffer(payload, dtype="<f4").reshape(T, D).astype(np.float64)
    skel = _skeleton_from_dict(header["skeleton"])
    if skel.joint_count != J:
        raise ContainerError(f"{path}: skeleton has {skel.joint_count} joints, header says {J}")
    return MotionSequence(fps=float(header["fps"]), skeleton=skel, features=feats)


def write_manifest(path, entries):
    """Write a corpus manifest: JSON list of per-clip records."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(entries, f, sort_keys=True, indent=2)
        f.write("\n")


def read_manifest(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)
