"""Dataset plumbing: synthetic corpora, ingestion, splits, mixed sampling.

Two record kinds mirror the two training sources: ``gesture`` records are
speech-driven (beat-aligned audio, captions filled in later by the
captioning pipeline) and ``motion`` records are description-driven
(rule-generated caption, no audio). Missing modalities stay explicitly
missing on the record; zero-filling happens at conditioning time.
"""

import json
import os
import wave
from dataclasses import dataclass, field

import numpy as np

from .containers import ContainerError, read_manifest, read_motion, write_manifest, write_motion
from .features import MotionSequence, RawMotion, pad_or_truncate, resample_fps, to_unified_features
from .skeleton import DEFAULT_ROOT_HEIGHT, build_default_skeleton

GESTURE_TEMPOS = (0.8, 1.0, 1.25, 1.6, 2.0)  # beat rates in Hz


@dataclass
class SampleRecord:
    clip_id: str
    motion: MotionSequence
    dataset_tag: str  # "gesture" | "motion"
    valid_frames: int
    audio: np.ndarray = None  # mono waveform, gesture records only
    sample_rate: int = 16000
    local_captions: list = field(default_factory=list)
    global_caption: str = None
    caption_segments: list = None  # [(start, end)] aligned with local_captions
    beat_times: list = field(default_factory=list)  # generator ground truth, seconds

    def __post_init__(self):
        if self.dataset_tag not in ("gesture", "motion"):
            raise ValueError(f"unknown dataset_tag {self.dataset_tag!r}")
        if self.dataset_tag == "gesture" and self.audio is None:
            raise ValueError("gesture records must carry audio")
        if self.dataset_tag == "motion" and not (self.local_captions or self.global_caption):
            raise ValueError("motion records must carry captions")


def write_wav(path, waveform, sample_rate):
    pcm = np.clip(np.asarray(waveform) * 32767.0, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path):
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        sr = w.getframerate()
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return pcm.astype(np.float64) / 32767.0, sr


# ---------------------------------------------------------------------------
# synthetic corpus


def _click_train(beat_times, duration, sample_rate, rng):
    """Click bursts at the given times over a low noise floor."""
    n = int(round(duration * sample_rate))
    wav = rng.normal(0.0, 0.004, n)
    burst_len = int(0.02 * sample_rate)
    t = np.arange(burst_len) / sample_rate
    burst = 0.8 * np.sin(2 * np.pi * 1000.0 * t) * np.exp(-t / 0.004)
    for b in beat_times:
        start = int(round(b * sample_rate))
        stop = min(start + burst_len, n)
        if start < n:
            wav[start:stop] += burst[: stop - start]
    return np.clip(wav, -1.0, 1.0)


class _Pose:
    """Mutable axis-angle pose stack for the 55-joint rig."""

    def __init__(self, skeleton, frames):
        self.rot = np.zeros((frames, skeleton.joint_count, 3))
        self.skeleton = skeleton

    def set(self, name, axis, angles):
        j = self.skeleton.joint_names.index(name)
        self.rot[:, j, axis] = angles


def _rest_arms(pose, t):
    """Arms hanging at the sides instead of the T-pose."""
    pose.set("left_shoulder", 2, np.full_like(t, -1.2))
    pose.set("right_shoulder", 2, np.full_like(t, 1.2))


_MOTION_ACTIONS = ("wave", "raise", "bow", "walk", "turn", "squat")


def _synth_motion_clip(rng, skeleton, fps):
    """One description-driven clip: (raw_motion, caption)."""
    action = _MOTION_ACTIONS[int(rng.integers(0, len(_MOTION_ACTIONS)))]
    duration = float(rng.uniform(3.0, 6.0))
    T = int(round(duration * fps))
    t = np.arange(T) / fps
    pose = _Pose(skeleton, T)
    _rest_arms(pose, t)
    root = np.zeros((T, 3))
    root[:, 1] = DEFAULT_ROOT_HEIGHT

    speed_word = {0: "slowly", 1: "steadily", 2: "quickly"}
    if action == "wave":
        side = "left" if rng.random() < 0.5 else "right"
        f = float(rng.uniform(0.8, 1.6))
        amp = float(rng.uniform(0.5, 0.9))
        sgn = -1.0 if side == "left" else 1.0
        pose.set(f"{side}_shoulder", 2, sgn * (-1.9 + 0.0 * t))
        pose.set(f"{side}_elbow", 1, amp * np.sin(2 * np.pi * f * t))
        adv = speed_word[int(f > 1.0) + int(f > 1.3)]
        caption = f"a person waves the {side} hand {adv} in the air"
    elif action == "raise":
        rate = float(rng.uniform(0.6, 1.2))
        lift = np.clip(t * rate, 0.0, 1.8)
        pose.set("left_shoulder", 2, -1.2 + lift)
        pose.set("right_shoulder", 2, 1.2 - lift)
        adv = "slowly" if rate < 0.9 else "quickly"
        caption = f"a person raises both arms above the head {adv}"
    elif action == "bow":
        f = float(rng.uniform(0.2, 0.4))
        bend = 0.5 * (1 - np.cos(2 * np.pi * f * t))
        pose.set("spine1", 0, 0.45 * bend)
        pose.set("spine2", 0, 0.35 * bend)
        root[:, 1] -= 0.06 * bend
        caption = "a person bends forward at the waist in a deep bow"
    elif action == "walk":
        v = float(rng.uniform(0.5, 1.2))
        f = 0.75 + 0.5 * v
        root[:, 2] = v * t
        swing = 0.5 * np.sin(2 * np.pi * f * t)
        pose.set("left_hip", 0, swing)
        pose.set("right_hip", 0, -swing)
        pose.set("left_knee", 0, 0.35 * (1 + np.sin(2 * np.pi * f * t - 1.2)))
        pose.set("right_knee", 0, 0.35 * (1 + np.sin(2 * np.pi * f * t + 1.94)))
        pose.set("left_shoulder", 0, -0.25 * swing)
        pose.set("right_shoulder", 0, 0.25 * swing)
        pace = "slow" if v < 0.75 else ("steady" if v < 1.0 else "brisk")
        caption = f"a person walks straight forward at a {pace} pace"
    elif action == "turn":
        side = "left" if rng.random() < 0.5 else "right"
        total = float(rng.uniform(0.5 * np.pi, np.pi)) * (1 if side == "left" else -1)
        j = skeleton.joint_names.index("pelvis")
        pose.rot[:, j, 1] = total * t / duration
        pose.set("left_elbow", 1, 0.15 * np.sin(2 * np.pi * 0.8 * t))
        caption = f"a person turns around in place to the {side}"
    else:  # squat
        f = float(rng.uniform(0.25, 0.5))
        dip = 0.5 * (1 - np.cos(2 * np.pi * f * t))
        root[:, 1] -= 0.22 * dip
        pose.set("left_knee", 0, 1.0 * dip)
        pose.set("right_knee", 0, 1.0 * dip)
        pose.set("left_hip", 0, -0.5 * dip)
        pose.set("right_hip", 0, -0.5 * dip)
        caption = "a person bends the knees into a squat and stands back up"

    raw = RawMotion(fps=fps, root_positions=root, joint_rotations=pose.rot)
    return raw, caption


def _synth_gesture_clip(rng, skeleton, fps):
    """One speech-driven clip: (raw_motion, beat_times, duration)."""
    duration = float(rng.uniform(6.0, 9.0))
    T = int(round(duration * fps))
    t = np.arange(T) / fps
    pose = _Pose(skeleton, T)
    _rest_arms(pose, t)
    root = np.zeros((T, 3))
    root[:, 1] = DEFAULT_ROOT_HEIGHT

    if rng.random() < 0.1:
        # near-idle speaker: tiny sway, sparse slow beats
        tempo = 0.5
        pose.set("spine2", 2, 0.02 * np.sin(2 * np.pi * 0.3 * t))
        amp = 0.05
    else:
        tempo = float(GESTURE_TEMPOS[int(rng.integers(0, len(GESTURE_TEMPOS)))])
        amp = float(rng.uniform(0.5, 0.8))

    # forearm beats: speed minima at t = k / (2 * tempo)
    osc = np.cos(2 * np.pi * tempo * t)
    pose.set("left_shoulder", 2, np.full_like(t, -1.5))
    pose.set("right_shoulder", 2, np.full_like(t, 1.5))
    pose.set("left_elbow", 1, -0.9 + 0.5 * amp * osc)
    pose.set("right_elbow", 1, 0.9 - 0.5 * amp * osc)
    pose.set("head", 0, 0.08 * amp * osc)

    beat_period = 1.0 / (2.0 * tempo)
    beats = [k * beat_period for k in range(int(duration / beat_period) + 1)]
    beats = [b for b in beats if b < duration - 0.05]
    raw = RawMotion(fps=fps, root_positions=root, joint_rotations=pose.rot)
    return raw, beats, duration


def synth_corpus(seed, count, kind, fps=20.0, sample_rate=16000, skeleton=None):
    """Procedural desk-scale corpus of one kind, deterministic per seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if kind not in ("gesture", "motion"):
        raise ValueError(f"unknown corpus kind {kind!r}")
    skeleton = skeleton or build_default_skeleton()
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        clip_id = f"{kind}{i:04d}"
        if kind == "motion":
            raw, caption = _synth_motion_clip(rng, skeleton, fps)
            seq = to_unified_features(raw, skeleton)
            records.append(
                SampleRecord(
                    clip_id=clip_id, motion=seq, dataset_tag="motion",
                    valid_frames=seq.frame_count,
                    local_captions=[caption], global_caption=caption,
                )
            )
        else:
            raw, beats, duration = _synth_gesture_clip(rng, skeleton, fps)
            seq = to_unified_features(raw, skeleton)
            wav = _click_train(beats, duration, sample_rate, rng)
            records.append(
                SampleRecord(
                    clip_id=clip_id, motion=seq, dataset_tag="gesture",
                    valid_frames=seq.frame_count,
                    audio=wav, sample_rate=sample_rate, beat_times=beats,
                )
            )
    return records


def save_corpus(records, out_dir):
    """Write containers, wavs and captions plus the corpus manifest."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for rec in records:
        motion_path = os.path.join(out_dir, f"{rec.clip_id}.motion")
        write_motion(motion_path, rec.motion)
        entry = {
            "clip_id": rec.clip_id,
            "path": f"{rec.clip_id}.motion",
            "dataset_tag": rec.dataset_tag,
            "frames": rec.valid_frames,
            "fps": rec.motion.fps,
            "has_audio": rec.audio is not None,
            "caption_count": len(rec.local_captions),
        }
        if rec.audio is not None:
            wav_path = os.path.join(out_dir, f"{rec.clip_id}.wav")
            write_wav(wav_path, rec.audio, rec.sample_rate)
            entry["audio_path"] = f"{rec.clip_id}.wav"
        if rec.local_captions or rec.global_caption:
            cap_path = os.path.join(out_dir, f"{rec.clip_id}.captions.json")
            with open(cap_path, "w", encoding="utf-8") as f:
                json.dump(
                    {
                        "local": rec.local_captions,
                        "global": rec.global_caption,
                        "segments": rec.caption_segments,
                    },
                    f, sort_keys=True,
                )
            entry["caption_path"] = f"{rec.clip_id}.captions.json"
        if rec.beat_times:
            entry["beat_times"] = [round(float(b), 6) for b in rec.beat_times]
        entries.append(entry)
    entries.sort(key=lambda e: e["clip_id"])
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest_path, entries)
    return manifest_path


@dataclass
class IngestReport:
    records: list
    errors: list  # (path, message)


def ingest(corpus_dir, spec):
    """Load a corpus directory into padded, filtered SampleRecords.

    Motion files are resampled to ``spec.fps``, motion-tagged clips shorter
    than ``spec.min_frames`` are dropped, and everything is truncated or
    padded to ``spec.target_frames`` (``valid_frames`` keeps the true
    length). Malformed files land in the error report; the batch continues.
    """
    manifest_path = os.path.join(corpus_dir, "manifest.json")
    if os.path.exists(manifest_path):
        entries = read_manifest(manifest_path)
    else:
        entries = [
            {"clip_id": os.path.splitext(f)[0], "path": f, "dataset_tag": "motion"}
            for f in sorted(os.listdir(corpus_dir))
            if f.endswith(".motion")
        ]

    records = []
    errors = []
    for entry in sorted(entries, key=lambda e: e["clip_id"]):
        path = os.path.join(corpus_dir, entry["path"])
        try:
            seq = read_motion(path)
            if abs(seq.fps - spec.fps) > 1e-9:
                seq = resample_fps(seq, spec.fps)
            tag = entry.get("dataset_tag", "motion")
            if tag == "motion" and seq.frame_count < spec.min_frames:
                continue
            valid = min(seq.frame_count, spec.target_frames)
            seq, _mask = pad_or_truncate(seq, spec.target_frames)

            audio = None
            sr = spec.audio_sample_rate
            if entry.get("audio_path"):
                audio, sr = read_wav(os.path.join(corpus_dir, entry["audio_path"]))
            local_caps, global_cap, cap_segments = [], None, None
            if entry.get("caption_path"):
                with open(os.path.join(corpus_dir, entry["caption_path"]), encoding="utf-8") as f:
                    caps = json.load(f)
                local_caps = caps.get("local", [])
                global_cap = caps.get("global")
                segs = caps.get("segments")
                cap_segments = [tuple(s) for s in segs] if segs else None
            records.append(
                SampleRecord(
                    clip_id=entry["clip_id"], motion=seq, dataset_tag=tag,
                    valid_frames=valid, audio=audio, sample_rate=sr,
                    local_captions=local_caps, global_caption=global_cap,
                    caption_segments=cap_segments,
                    beat_times=entry.get("beat_times", []),
                )
            )
        except (ContainerError, ValueError, OSError) as exc:
            errors.append((entry["path"], str(exc)))
    records.sort(key=lambda r: r.clip_id)
    return IngestReport(records=records, errors=errors)


def split(records, seed, ratios=(0.8, 0.1, 0.1)):
    """Seed-deterministic per-clip split with largest-remainder sizing.

    Sizes are the floors of N*ratio with leftover items assigned by largest
    fractional remainder (ties resolved in train/val/test order).
    """
    n = len(records)
    exact = [n * r for r in ratios]
    sizes = [int(x) for x in exact]
    remainders = sorted(
        range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i)
    )
    for i in range(n - sum(sizes)):
        sizes[remainders[i % len(ratios)]] += 1

    order = np.random.default_rng(seed).permutation(n)
    shuffled = [records[i] for i in order]
    train = shuffled[: sizes[0]]
    val = shuffled[sizes[0]: sizes[0] + sizes[1]]
    test = shuffled[sizes[0] + sizes[1]:]
    return train, val, test


def weighted_sampler(sets_by_tag, weights, seed):
    """Infinite stream mixing tags proportionally to their weights."""
    tags = sorted(sets_by_tag)
    if not tags:
        raise ValueError("no record sets to sample from")
    w = np.array([float(weights[t]) for t in tags])
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    p = w / w.sum()
    rng = np.random.default_rng(seed)
    while True:
        tag = tags[int(rng.choice(len(tags), p=p))]
        pool = sets_by_tag[tag]
        yield pool[int(rng.integers(0, len(pool)))]
