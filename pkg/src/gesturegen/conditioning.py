"""Caption and audio condition embeddings for the denoiser.

Encoders are pluggable: deterministic stubs keep everything offline, and
remote HTTP clients mirror the captioner protocol. Caption vectors are 512
wide; audio features are per-motion-frame rows of width 1133 before
projection. ``condition_tokens`` lays out the encoder-side token sequence
(local caption tokens plus per-segment pooled audio tokens) and
``project_conditions`` maps everything to the denoiser width.
"""

import base64
import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .captioning import REMOTE_URL_ENV, Segment, segment_regular

TEXT_WIDTH = 512
AUDIO_WIDTH = 1133


class EncoderError(RuntimeError):
    """An embedding backend failed; the message names the modality."""


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray  # (512,)
    source_text: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (TEXT_WIDTH,) or not np.isfinite(v).all():
            raise ValueError(f"text embedding must be finite ({TEXT_WIDTH},), got {v.shape}")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class AudioEmbedding:
    frames: np.ndarray  # (T_a, 1133)
    sample_alignment: float = 1.0  # audio rows per motion frame

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != AUDIO_WIDTH or not np.isfinite(f).all():
            raise ValueError(f"audio embedding must be finite (T, {AUDIO_WIDTH}), got {f.shape}")
        object.__setattr__(self, "frames", f)


@dataclass(frozen=True)
class ConditionSet:
    """Everything the denoiser is conditioned on for one clip.

    ``segments`` aligns local captions and audio pooling; ``local_captions``
    holds one entry per segment (None where a segment is caption-free).
    ``mask_flags`` marks modalities nulled for classifier-free guidance.
    """

    segments: tuple  # of Segment
    local_captions: tuple = ()  # of TextEmbedding | None, same length as segments
    global_caption: object = None  # TextEmbedding | None
    audio: object = None  # AudioEmbedding | None
    mask_flags: dict = field(default_factory=lambda: {"caption": False, "audio": False})

    def __post_init__(self):
        if self.local_captions and len(self.local_captions) != len(self.segments):
            raise ValueError("local_captions must align with segments")
        starts = [s.start for s in self.segments]
        if starts != sorted(starts):
            raise ValueError("segments must be ordered by start frame")


def default_segments(frame_count, segment_len=60):
    return tuple(segment_regular(frame_count, segment_len))


class TextEncoder:
    def encode(self, text):
        raise NotImplementedError


class AudioEncoder:
    def encode(self, waveform, sample_rate):
        raise NotImplementedError


class StubTextEncoder(TextEncoder):
    """Unit-norm embedding from seeded hashes of token n-grams.

    Deterministic, and distinct texts map to (almost surely) distinct
    directions while shared words contribute shared components.
    """

    def __init__(self, width=TEXT_WIDTH, seed=7):
        self.width = width
        self.seed = seed

    def _token_vector(self, token):
        digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
        gen = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return gen.standard_normal(self.width)

    def encode(self, text):
        if not text:
            raise EncoderError("text: cannot embed empty string")
        tokens = text.lower().split()
        grams = tokens + [" ".join(p) for p in zip(tokens, tokens[1:])]
        vec = np.zeros(self.width)
        for g in grams:
            vec += self._token_vector(g)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise EncoderError("text: degenerate embedding")
        return TextEmbedding(vector=vec / norm, source_text=text)


class StubAudioEncoder(AudioEncoder):
    """Per-motion-frame log-energy bank tiled to the WavLM width.

    Each motion frame gets log1p(RMS) of the surrounding waveform computed
    at several smoothing windows, tiled to 1133 channels. Silence maps to
    exactly zero. The multi-scale bank keeps rhythm information alive after
    per-segment mean pooling: click trains of different rates saturate the
    windows differently.
    """

    WINDOWS = (1, 3, 7, 15, 31)  # in motion frames

    def __init__(self, motion_fps=20.0, width=AUDIO_WIDTH):
        self.motion_fps = motion_fps
        self.width = width

    def encode(self, waveform, sample_rate):
        wav = np.asarray(waveform, dtype=np.float64)
        if wav.ndim != 1 or wav.size == 0:
            raise EncoderError("audio: need a non-empty mono waveform")
        if sample_rate <= 0:
            raise EncoderError("audio: sample rate must be positive")
        hop = sample_rate / self.motion_fps
        frames = int(round(wav.size / hop))
        frames = max(frames, 1)
        energy = np.zeros(frames)
        for i in range(frames):
            lo = int(round(i * hop))
            hi = min(int(round((i + 1) * hop)), wav.size)
            if hi > lo:
                energy[i] = np.sqrt(np.mean(wav[lo:hi] ** 2))
        bank = []
        for w in self.WINDOWS:
            if w == 1:
                sm = energy
            else:
                kernel = np.ones(w) / w
                sm = np.convolve(energy, kernel, mode="same")
            bank.append(np.log1p(10.0 * sm))
        bank = np.stack(bank, axis=1)  # (frames, n_windows)
        reps = int(np.ceil(self.width / bank.shape[1]))
        tiled = np.tile(bank, (1, reps))[:, : self.width]
        # one embedding row per motion frame
        return AudioEmbedding(frames=tiled, sample_alignment=1.0)


class RemoteTextEncoder(TextEncoder):
    """POST {url}/v1/embed_text {"text": ...} -> {"vector": [512 floats]}."""

    def __init__(self, base_url=None, timeout=10.0, retries=1, session=None):
        import requests

        self.base_url = (base_url or os.environ.get(REMOTE_URL_ENV, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no remote encoder URL (set {REMOTE_URL_ENV})")
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def encode(self, text):
        import requests

        last = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(
                    f"{self.base_url}/v1/embed_text", json={"text": text}, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last = exc
                continue
            if resp.status_code == 200:
                return TextEmbedding(np.array(resp.json()["vector"]), source_text=text)
            last = EncoderError(f"text: HTTP {resp.status_code}")
        raise EncoderError(f"text: remote encoder failed: {last}")


class RemoteAudioEncoder(AudioEncoder):
    """POST {url}/v1/embed_audio {"pcm16": b64, "sample_rate": sr} -> {"frames": [[...]]}."""

    def __init__(self, base_url=None, timeout=10.0, retries=1, session=None):
        import requests

        self.base_url = (base_url or os.environ.get(REMOTE_URL_ENV, "")).rstrip("/")
        if not self.base_url:
            raise ValueError(f"no remote encoder URL (set {REMOTE_URL_ENV})")
        self.timeout = timeout
        self.retries = retries
        self._session = session or requests.Session()

    def encode(self, waveform, sample_rate):
        import requests

        pcm = np.clip(np.asarray(waveform) * 32767.0, -32768, 32767).astype("<i2")
        body = {
            "pcm16": base64.b64encode(pcm.tobytes()).decode("ascii"),
            "sample_rate": int(sample_rate),
        }
        last = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(
                    f"{self.base_url}/v1/embed_audio", json=body, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last = exc
                continue
            if resp.status_code == 200:
                return AudioEmbedding(np.array(resp.json()["frames"]))
            last = EncoderError(f"audio: HTTP {resp.status_code}")
        raise EncoderError(f"audio: remote encoder failed: {last}")


def embed_text(text, encoder):
    """Embed caption text to a 512-wide vector; deterministic per encoder."""
    if not text:
        raise EncoderError("text: empty caption")
    return encoder.encode(text)


def embed_audio(waveform, sample_rate, encoder):
    """Embed a mono waveform to per-motion-frame features (T_a, 1133)."""
    wav = np.asarray(waveform)
    if wav.size == 0:
        raise EncoderError("audio: empty waveform")
    return encoder.encode(wav, sample_rate)


def zero_audio(frame_count):
    """The explicit all-zero audio used for records with no speech."""
    return AudioEmbedding(frames=np.zeros((frame_count, AUDIO_WIDTH)))


@dataclass(frozen=True)
class ConditionToken:
    """One encoder-side token before projection: raw vector plus its tag."""

    vector: np.ndarray
    modality: str  # "caption" | "audio"
    segment_index: int


def condition_tokens(cs):
    """Lay out encoder-side condition tokens for one clip.

    One caption token per segment that has a local caption, one audio token
    per segment (mean-pooled over the segment's audio rows) whenever audio
    is present. Masked modalities keep their token count but are zeroed.
    Token order: captions by segment, then audio by segment.
    """
    tokens = []
    caption_masked = cs.mask_flags.get("caption", False)
    audio_masked = cs.mask_flags.get("audio", False)

    locals_ = cs.local_captions or (None,) * len(cs.segments)
    for i, cap in enumerate(locals_):
        if cap is None:
            continue
        vec = np.zeros(TEXT_WIDTH) if caption_masked else cap.vector
        tokens.append(ConditionToken(vec, "caption", i))

    if cs.audio is not None:
        T_a = cs.audio.frames.shape[0]
        for i, seg in enumerate(cs.segments):
            lo, hi = min(seg.start, T_a), min(seg.end, T_a)
            pooled = cs.audio.frames[lo:hi].mean(axis=0) if hi > lo else np.zeros(AUDIO_WIDTH)
            vec = np.zeros(AUDIO_WIDTH) if audio_masked else pooled
            tokens.append(ConditionToken(vec, "audio", i))
    return tokens


def global_caption_vector(cs):
    """Decoder-side global condition: the caption vector or the null token."""
    if cs.global_caption is None or cs.mask_flags.get("caption", False):
        return np.zeros(TEXT_WIDTH)
    return cs.global_caption.vector


@dataclass(frozen=True)
class ConditionProjection:
    """Linear maps taking raw condition vectors to the denoiser width."""

    caption_weight: np.ndarray  # (width, 512)
    audio_weight: np.ndarray  # (width, 1133)

    @property
    def width(self):
        return self.caption_weight.shape[0]


def project_conditions(cs, projection):
    """Project a ConditionSet to width-``projection.width`` tokens.

    Returns (matrix, tokens): the (N, width) array of projected tokens and
    the token metadata in order. Masked modalities come out as zero rows
    (the null condition is the zero vector).
    """
    tokens = condition_tokens(cs)
    if not tokens:
        return np.zeros((0, projection.width)), []
    rows = []
    for tok in tokens:
        weight = projection.caption_weight if tok.modality == "caption" else projection.audio_weight
        rows.append(weight @ tok.vector)
    return np.stack(rows), tokens


def mask_for_cfg(cs, rng, p=0.1):
    """Randomly null modalities for classifier-free guidance training.

    Each modality is masked independently with probability ``p``; masking is
    idempotent on the flags and the null condition is the zero vector.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    flags = dict(cs.mask_flags)
    if rng.random() < p:
        flags["caption"] = True
    if rng.random() < p:
        flags["audio"] = True
    return replace(cs, mask_flags=flags)


def null_conditions(cs):
    """Fully unconditional copy (both modalities masked)."""
    return replace(cs, mask_flags={"caption": True, "audio": True})


def mask_modality(cs, modality):
    """Copy with one modality masked (used by the guidance passes)."""
    flags = dict(cs.mask_flags)
    flags[modality] = True
    return replace(cs, mask_flags=flags)
