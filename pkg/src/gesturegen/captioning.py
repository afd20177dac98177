"""Gesture caption generation: segmentation, templating, filtering, caching.

The caption model itself sits behind the ``Captioner`` protocol. The
bundled ``StubCaptioner`` derives text from kinematic statistics so the
whole pipeline runs offline and deterministically; ``RemoteCaptioner``
talks to an HTTP service instead.
"""

import base64
import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureLayout, project_to_caption_subset
from .skeleton import CAPTION_JOINT_MAP

log = logging.getLogger(__name__)

SEPARATOR = "<SEP>"
MIN_CAPTION_WORDS = 5
DEFAULT_SEGMENT_LEN = 60  # 3 s at 20 fps
REMOTE_URL_ENV = "GESTUREGEN_REMOTE_URL"


@dataclass(frozen=True)
class Segment:
    """Half-open frame range [start, end) of a source clip."""

    start: int
    end: int
    source_clip: str = ""

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad segment [{self.start}, {self.end})")

    @property
    def length(self):
        return self.end - self.start


@dataclass(frozen=True)
class LocalCaption:
    segment: Segment
    text: str
    template_id: int


@dataclass(frozen=True)
class GlobalCaption:
    text: str
    parts: tuple


# Template bank: gesture-to-text prompt patterns, each with exactly one
# [motion] placeholder.
PROMPT_TEMPLATES = (
    "Give me a summary of the motion being displayed in [motion] using words.",
    "Explain the motion illustrated in [motion] using language.",
    "Describe the action being represented by [motion] using text.",
    "What kind of action is being demonstrated in [motion]?",
    "Describe the movement demonstrated in [motion] in words.",
    "Generate a sentence that explains the action in [motion].",
    "Please describe the movement depicted in [motion] using natural language.",
    "Provide a description of the motion being displayed in [motion] using language.",
    "Give me a brief summary of the movement depicted in [motion].",
    "Describe the movement demonstrated in [motion] using natural language.",
)


@dataclass(frozen=True)
class PromptTemplate:
    id: int
    input_pattern: str
    task: str = "Gesture-to-Text"

    def __post_init__(self):
        if self.input_pattern.count("[motion]") != 1:
            raise ValueError("template must contain exactly one [motion] placeholder")

    def fill(self, motion_token="[motion]"):
        return self.input_pattern.replace("[motion]", motion_token)


def default_templates():
    return tuple(PromptTemplate(i, p) for i, p in enumerate(PROMPT_TEMPLATES))


def segment_regular(length, segment_len):
    """Uniform non-overlapping segmentation with a half-length remainder rule.

    Consecutive segments of ``segment_len`` frames; a trailing remainder
    shorter than half a segment is merged into the previous segment,
    otherwise it is kept as its own (shorter) segment.
    """
    if segment_len < 1 or length < 1:
        raise ValueError("length and segment_len must be >= 1")
    if segment_len > length:
        return [Segment(0, length)]
    full = length // segment_len
    remainder = length - full * segment_len
    bounds = [i * segment_len for i in range(full + 1)]
    if remainder:
        if remainder >= segment_len / 2:
            bounds.append(length)
        else:
            bounds[-1] = length
    return [Segment(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def segment_dynamic(length, rng_seed, min_len, max_len):
    """Left-to-right random segmentation with uniform lengths in [min, max].

    Deterministic for a given seed. The final segment absorbs whatever is
    left when fewer than ``min_len`` frames remain.
    """
    if not 1 <= min_len <= max_len <= length:
        raise ValueError("need 1 <= min_len <= max_len <= length")
    rng = np.random.default_rng(rng_seed)
    bounds = [0]
    while length - bounds[-1] > max_len:
        step = int(rng.integers(min_len, max_len + 1))
        bounds.append(bounds[-1] + step)
    remaining = length - bounds[-1]
    if remaining >= min_len:
        bounds.append(length)
    else:
        # too little left for its own segment: the last one absorbs it
        bounds[-1] = length
    return [Segment(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def assemble_global(locals_, separator=SEPARATOR):
    """Join ordered local captions into one global caption."""
    if not locals_:
        raise ValueError("need at least one local caption")
    starts = [c.segment.start for c in locals_]
    if starts != sorted(starts):
        raise ValueError("local captions must be ordered by segment start")
    for c in locals_:
        if separator in c.text:
            raise ValueError(f"local caption contains the separator token: {c.text!r}")
    text = f" {separator} ".join(c.text for c in locals_)
    return GlobalCaption(text=text, parts=tuple(locals_))


def quality_filter(caption, min_words=MIN_CAPTION_WORDS):
    """Keep a caption only if it has at least ``min_words`` whitespace tokens."""
    return len(caption.text.split()) >= min_words


class Captioner:
    """Interface: produce a caption for one motion segment."""

    def caption(self, prompt, features, fps):
        raise NotImplementedError


class StubCaptioner(Captioner):
    """Deterministic captioner driven by kinematic statistics.

    Picks the dominant moving joint group, root displacement direction and
    vertical hand excursion from the 22-joint features and composes a
    sentence from a fixed phrase grammar. Moving segments give >= 5 words;
    near-static ones produce a deliberately short phrase so the quality
    filter path is exercised.
    """

    # joint rows inside the 22-joint rig (0 = pelvis root)
    _GROUPS = {
        "left arm": (16, 18, 20),
        "right arm": (17, 19, 21),
        "legs": (4, 5, 7, 8),
        "torso": (3, 6, 9, 12),
        "head": (12, 15),
    }
    _SPEED_WORDS = ((0.06, "slowly"), (0.15, "steadily"), (np.inf, "quickly"))
    _STATIC_SPEED = 0.02  # m/s dominant-group speed

    def __init__(self, joint_count=22):
        self.layout = FeatureLayout(joint_count)

    def caption(self, prompt, features, fps):
        del prompt  # the stub ignores the instruction wording
        lay = self.layout
        T = features.shape[0]
        vel = features[:, lay.joint_velocities].reshape(T, lay.joint_count, 3)
        speed = np.linalg.norm(vel, axis=-1)

        group_speed = {name: float(speed[:, list(rows)].mean()) for name, rows in self._GROUPS.items()}
        group = max(sorted(group_speed), key=lambda g: group_speed[g])
        dominant = group_speed[group]
        if dominant < self._STATIC_SPEED:
            return "person stands still"

        adverb = next(w for lim, w in self._SPEED_WORDS if dominant < lim)

        root_vel = features[:, lay.root_velocity]
        travel = float(np.hypot(*root_vel.mean(axis=0)))
        if travel > 0.15:
            direction = "forward" if abs(root_vel[:, 1].mean()) >= abs(root_vel[:, 0].mean()) else "sideways"
            clause = f"while moving {direction}"
        elif float(np.abs(features[:, lay.yaw_rate]).mean()) > 0.3:
            clause = "while turning in place"
        else:
            clause = "in place"

        pos = features[:, lay.joint_positions].reshape(T, lay.joint_count - 1, 3)
        # wrists are joints 20/21, i.e. rows 19/20 of the non-root block
        hand_y = pos[:, (19, 20), 1]
        excursion = float(hand_y.max() - hand_y.min())
        if excursion > 0.35:
            detail = "raising the hands high"
        elif excursion > 0.12:
            detail = "with lively hand movement"
        else:
            detail = "with small gestures"

        return f"a person moves the {group} {adverb} {clause} {detail}"


class CaptionerError(RuntimeError):
    """A captioner backend failed for one segment."""


class RemoteCaptioner(Captioner):
    """HTTP captioner client: POST {url}/v1/caption.

    Body: ``{"prompt": str, "motion": base64(float32 frames), "fps": float}``;
    expects ``200 {"caption": str}``. Any other status or a transport error
    raises CaptionerError after ``retries`` additional attempts.
    """

    def __init__(self, base_url=None, timeout=10.0, retries=1, session=None):
        import requests

        self.base_url = (base_url or os.environ.get(REMOTE_URL_ENV, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no remote captioner URL (set {REMOTE_URL_ENV})")
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def caption(self, prompt, features, fps):
        import requests

        body = {
            "prompt": prompt,
            "motion": base64.b64encode(
                np.ascontiguousarray(features, dtype="<f4").tobytes()
            ).decode("ascii"),
            "fps": float(fps),
        }
        last = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(
                    f"{self.base_url}/v1/caption", json=body, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last = exc
                continue
            if resp.status_code == 200:
                return resp.json()["caption"]
            last = CaptionerError(f"captioner returned HTTP {resp.status_code}")
        raise CaptionerError(f"remote captioner failed: {last}")


def _feature_hash(features):
    return hashlib.sha1(np.ascontiguousarray(features, dtype="<f4").tobytes()).hexdigest()


class CaptionCache:
    """Caption store keyed by (clip, range, strategy) plus a feature hash.

    Persisted as JSON lines; writes are idempotent and serialized per
    process so concurrent captioning of distinct segments is safe.
    """

    def __init__(self, path=None):
        self.path = path
        self._entries = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            self.load(path)

    @staticmethod
    def _key(clip_id, segment, strategy, feature_hash):
        return (clip_id, segment.start, segment.end, strategy, feature_hash)

    def get(self, clip_id, segment, strategy, feature_hash):
        return self._entries.get(self._key(clip_id, segment, strategy, feature_hash))

    def put(self, clip_id, segment, strategy, feature_hash, caption):
        with self._lock:
            self._entries[self._key(clip_id, segment, strategy, feature_hash)] = caption

    def __len__(self):
        return len(self._entries)

    def load(self, path):
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                seg = Segment(rec["start"], rec["end"], rec["clip_id"])
                cap = LocalCaption(seg, rec["caption"], rec["template_id"])
                self._entries[
                    (rec["clip_id"], rec["start"], rec["end"], rec["strategy"], rec["feature_hash"])
                ] = cap

    def save(self, path=None):
        path = path or self.path
        if path is None:
            raise ValueError("no cache path given")
        with self._lock, open(path, "w", encoding="utf-8") as f:
            for (clip_id, start, end, strategy, fh), cap in sorted(self._entries.items()):
                f.write(
                    json.dumps(
                        {
                            "clip_id": clip_id,
                            "start": start,
                            "end": end,
                            "strategy": strategy,
                            "template_id": cap.template_id,
                            "caption": cap.text,
                            "feature_hash": fh,
                        },
                        sort_keys=True,
                    )
                )
                f.write("\n")


@dataclass
class CaptionResult:
    locals: list
    global_caption: object  # GlobalCaption or None
    dropped: list = field(default_factory=list)  # segments without captions
    backend_calls: int = 0


def caption_clip(
    seq,
    strategy,
    captioner,
    templates=None,
    cache=None,
    seed=0,
    clip_id="",
    segment_len=DEFAULT_SEGMENT_LEN,
    dynamic_len_range=(40, 80),
    min_words=MIN_CAPTION_WORDS,
    mix_probability=0.2,
    joint_map=CAPTION_JOINT_MAP,
):
    """Caption one clip under a strategy: regular, dynamic or hierarchical.

    Segments the clip, projects each segment to the 22-joint subset, pairs
    it with a uniformly sampled prompt template and asks the captioner.
    Captions failing the word-count filter (and captioner failures) leave
    their segments caption-free; the batch never aborts. The hierarchical
    strategy additionally joins the kept local captions into a global one.
    """
    if strategy not in ("regular", "dynamic", "hierarchical"):
        raise ValueError(f"unknown strategy {strategy!r}")
    templates = templates or default_templates()
    rng = np.random.default_rng(seed)
    M = seq.frame_count

    if strategy == "dynamic":
        lo, hi = dynamic_len_range
        lo = min(lo, M)
        hi = min(hi, M)
        segments = segment_dynamic(M, int(rng.integers(0, 2**32)), lo, hi)
    else:
        segments = segment_regular(M, segment_len)
    segments = [Segment(s.start, s.end, clip_id) for s in segments]

    projected = seq if seq.skeleton.joint_count == len(joint_map) else project_to_caption_subset(
        seq, joint_map
    )

    kept = []
    dropped = []
    calls = 0
    prev_text = None
    for seg in segments:
        feats = projected.features[seg.start:seg.end]
        fh = _feature_hash(feats)
        template = templates[int(rng.integers(0, len(templates)))]
        mix = strategy == "dynamic" and rng.random() < mix_probability

        cached = cache.get(clip_id, seg, strategy, fh) if cache is not None else None
        if cached is not None:
            caption = cached
        else:
            try:
                text = captioner.caption(template.fill(), feats, projected.fps)
                calls += 1
            except Exception as exc:  # backend failure: log and continue
                log.error("captioner failed on %s[%d:%d): %s", clip_id, seg.start, seg.end, exc)
                dropped.append(seg)
                prev_text = None
                continue
            if mix and prev_text:
                text = f"{text} and {prev_text}"
            caption = LocalCaption(seg, text, template.id)
            if cache is not None:
                cache.put(clip_id, seg, strategy, fh, caption)

        if quality_filter(caption, min_words):
            kept.append(caption)
            prev_text = caption.text
        else:
            dropped.append(seg)
            prev_text = None

    global_caption = None
    if strategy == "hierarchical" and kept:
        global_caption = assemble_global(kept)
    return CaptionResult(locals=kept, global_caption=global_caption, dropped=dropped,
                         backend_calls=calls)
