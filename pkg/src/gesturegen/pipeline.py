"""End-to-end orchestration: training preparation and generation.

Bridges the data records to the models: caption gesture records, embed
conditions, encode latents with the frozen VAE, and run guided DDIM plus
VAE decoding for generation requests.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from . import captioning as cap
from . import conditioning as cond
from . import diffusion as diff
from . import vae as vae_mod
from .features import FeatureLayout, MotionSequence


def caption_records(records, settings, cache=None, seed=0, captioner=None):
    """Fill gesture records' captions via the captioning pipeline.

    Motion records keep their native captions. Returns the total number of
    captioner backend calls (0 on a warm cache).
    """
    captioner = captioner or cap.StubCaptioner()
    calls = 0
    for rec in records:
        if rec.dataset_tag != "gesture":
            continue
        valid = MotionSequence(
            fps=rec.motion.fps, skeleton=rec.motion.skeleton,
            features=rec.motion.features[: rec.valid_frames],
        )
        result = cap.caption_clip(
            valid, settings.strategy, captioner, cache=cache,
            seed=seed + _stable_id(rec.clip_id), clip_id=rec.clip_id,
            segment_len=settings.segment_len,
            dynamic_len_range=(settings.dynamic_min_len, settings.dynamic_max_len),
            min_words=settings.min_words,
            mix_probability=settings.mix_probability,
        )
        # keep every segment in order; dropped ones stay caption-free (None)
        by_start = {c.segment.start: c.text for c in result.locals}
        all_segments = sorted(
            [(c.segment.start, c.segment.end) for c in result.locals]
            + [(s.start, s.end) for s in result.dropped]
        )
        rec.caption_segments = all_segments
        rec.local_captions = [by_start.get(a) for a, _ in all_segments]
        rec.global_caption = result.global_caption.text if result.global_caption else None
        calls += result.backend_calls
    return calls


def _stable_id(clip_id):
    return sum(ord(c) for c in clip_id) % 100003


def build_condition_set(record, text_encoder, audio_encoder, segment_len=60):
    """Embed one record's captions and audio into a ConditionSet.

    Gesture records: segments from the captioning pass (regular segments as
    fallback), per-segment local caption embeddings, real audio embedding.
    Motion records: one whole-clip segment, the native caption, explicitly
    zero audio.
    """
    frames = record.valid_frames
    if record.dataset_tag == "motion":
        segments = (cap.Segment(0, frames, record.clip_id),)
        text = (record.local_captions or [record.global_caption])[0]
        emb = cond.embed_text(text, text_encoder)
        global_emb = cond.embed_text(record.global_caption, text_encoder) \
            if record.global_caption else emb
        return cond.ConditionSet(
            segments=segments, local_captions=(emb,),
            global_caption=global_emb, audio=cond.zero_audio(frames),
        )

    seg_ranges = getattr(record, "caption_segments", None)
    if seg_ranges:
        segments = tuple(cap.Segment(a, b, record.clip_id) for a, b in seg_ranges)
        locals_ = tuple(
            cond.embed_text(t, text_encoder) if t else None for t in record.local_captions
        )
    else:
        segments = tuple(cap.segment_regular(frames, segment_len))
        locals_ = (None,) * len(segments)
    global_emb = (
        cond.embed_text(record.global_caption, text_encoder)
        if record.global_caption else None
    )
    audio = cond.embed_audio(record.audio, record.sample_rate, audio_encoder)
    return cond.ConditionSet(
        segments=segments, local_captions=locals_,
        global_caption=global_emb, audio=audio,
    )


def stack_training_arrays(records, target_frames=180):
    """Stack padded features and masks for batched training."""
    N = len(records)
    D = records[0].motion.feature_dim
    feats = np.zeros((N, target_frames, D))
    masks = np.zeros((N, target_frames), dtype=bool)
    for i, rec in enumerate(records):
        T = min(rec.motion.frame_count, target_frames)
        feats[i, :T] = rec.motion.features[:T]
        masks[i, : min(rec.valid_frames, target_frames)] = True
    return feats, masks


def encode_latents(model, scaler, feats, masks):
    """Frozen-VAE posterior means for each clip: (N, n, d)."""
    normed = scaler.normalize(feats)
    out = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(normed), 64):
            x = torch.as_tensor(normed[start:start + 64], dtype=torch.float32)
            m = torch.as_tensor(masks[start:start + 64], dtype=torch.bool)
            mu, _ = model.encode(x, m)
            out.append(mu.numpy().astype(np.float64))
    return np.concatenate(out)


@dataclass
class GenerationRequest:
    captions: list = field(default_factory=list)
    audio: np.ndarray = None
    sample_rate: int = 16000
    frames: int = 180
    audio_scale: float = 7.0
    caption_scale: float = 0.75
    seed: int = 0
    inference_steps: int = 50


@dataclass
class GenerationResult:
    motion: MotionSequence
    manifest: dict
    condition_set: object


def request_conditions(request, text_encoder, audio_encoder, separator=cap.SEPARATOR,
                       segment_len=60):
    """Build the ConditionSet for a free-form generation request.

    Captions split the frame range evenly (one segment per caption); the
    global caption joins them with the separator. Missing audio enters as
    the explicit zero embedding; missing captions leave the caption path
    empty so its guidance pass collapses to the unconditional one.
    """
    frames = request.frames
    texts = [t for t in request.captions if t]
    if texts:
        k = len(texts)
        bounds = [round(i * frames / k) for i in range(k + 1)]
        segments = tuple(
            cap.Segment(max(a, 0), max(b, a + 1)) for a, b in zip(bounds[:-1], bounds[1:])
        )
        locals_ = tuple(cond.embed_text(t, text_encoder) for t in texts)
        global_text = f" {separator} ".join(texts)
        global_emb = cond.embed_text(global_text, text_encoder)
    else:
        segments = tuple(cap.segment_regular(frames, segment_len))
        locals_ = (None,) * len(segments)
        global_emb = None

    if request.audio is not None:
        audio = cond.embed_audio(request.audio, request.sample_rate, audio_encoder)
    else:
        audio = cond.zero_audio(frames)
    return cond.ConditionSet(
        segments=segments, local_captions=locals_, global_caption=global_emb, audio=audio,
    )


def generate(vae_model, feature_scaler, denoiser, latent_scaler, request,
             text_encoder=None, audio_encoder=None, skeleton=None, fps=20.0,
             schedule=None):
    """Full generation: conditions -> guided DDIM -> VAE decode -> features.

    Returns a GenerationResult whose manifest allows exact replay (seed,
    scales, schedule and condition hashes).
    """
    text_encoder = text_encoder or cond.StubTextEncoder()
    audio_encoder = audio_encoder or cond.StubAudioEncoder(motion_fps=fps)
    cs = request_conditions(request, text_encoder, audio_encoder)
    if schedule is None:
        schedule = diff.NoiseSchedule.linear()

    z = diff.generate_latent(
        denoiser, latent_scaler, cs, schedule,
        inference_steps=request.inference_steps,
        s1=request.audio_scale, s2=request.caption_scale, seed=request.seed,
    )
    feats = vae_mod.decode(vae_model, z, request.frames)
    feats = feature_scaler.denormalize(feats)
    layout = FeatureLayout(skeleton.joint_count)
    feats[:, layout.foot_contacts] = (feats[:, layout.foot_contacts] > 0.5).astype(float)
    motion = MotionSequence(fps=fps, skeleton=skeleton, features=feats)

    manifest = {
        "seed": request.seed,
        "frames": request.frames,
        "audio_scale": request.audio_scale,
        "caption_scale": request.caption_scale,
        "inference_steps": request.inference_steps,
        "schedule_hash": schedule.digest(),
        "condition_hash": diff.condition_digest(cs),
        "captions": list(request.captions),
        "has_audio": request.audio is not None,
    }
    return GenerationResult(motion=motion, manifest=manifest, condition_set=cs)


def save_generation_manifest(path, manifest):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
