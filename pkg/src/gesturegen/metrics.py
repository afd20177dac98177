"""Evaluation metrics: smoothness, Frechet distances, beat consistency,
diversity, text-motion alignment and inference timing.

Everything here is a pure function of its inputs; the learned feature
extractors (FGD autoencoder, text-motion co-embedding) live in
``evaluators`` and are passed in as callables or model objects.
"""

import time
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BC_SIGMA = 0.1  # seconds


def jerk_accel(positions, fps):
    """Mean absolute jerk (m/s^3) and acceleration (m/s^2) of a trajectory.

    Finite differences of orders 2 and 3 scaled by fps^2 and fps^3; both
    are exact on polynomials up to their order. Requires T >= 4 frames.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 4:
        raise ValueError("need at least 4 frames for jerk")
    accel = np.diff(positions, n=2, axis=0) * fps**2
    jerk = np.diff(positions, n=3, axis=0) * fps**3
    mean_accel = float(np.linalg.norm(accel, axis=-1).mean())
    mean_jerk = float(np.linalg.norm(jerk, axis=-1).mean())
    return mean_jerk, mean_accel


def _gaussian_stats(samples):
    samples = np.asarray(samples, dtype=np.float64)
    mu = samples.mean(axis=0)
    sigma = np.cov(samples, rowvar=False)
    if sigma.ndim == 0:
        sigma = sigma.reshape(1, 1)
    return mu, sigma


def frechet_distance(a, b, eps=1e-6, warn=None):
    """Gaussian Frechet distance between two sample sets (N, D).

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The matrix square
    root comes from an eigendecomposition of the symmetrized product
    S_a^{1/2} S_b S_a^{1/2}; tiny negative eigenvalues are clamped to zero
    (a warning fires via ``warn`` beyond 1e-6). Both covariances get an
    eps*I regularizer against singularity.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per side")
    mu_a, s_a = _gaussian_stats(a)
    mu_b, s_b = _gaussian_stats(b)
    k = s_a.shape[0]
    s_a = s_a + eps * np.eye(k)
    s_b = s_b + eps * np.eye(k)

    # sqrt of s_a via symmetric eigendecomposition
    wa, va = np.linalg.eigh(s_a)
    root_a = (va * np.sqrt(np.maximum(wa, 0.0))) @ va.T
    inner = root_a @ s_b @ root_a
    inner = (inner + inner.T) / 2.0
    w, _ = np.linalg.eigh(inner)
    if w.min() < -1e-6 and warn is not None:
        warn(f"frechet: clamping eigenvalue {w.min():.3e}")
    trace_term = float(np.trace(s_a) + np.trace(s_b) - 2.0 * np.sqrt(np.maximum(w, 0.0)).sum())
    mean_term = float(np.sum((mu_a - mu_b) ** 2))
    return mean_term + trace_term


def fgd(real_features, gen_features, extractor, eps=1e-6):
    """Frechet distance over a trained gesture autoencoder's latents."""
    real_latents = extractor.encode_batch(real_features)
    gen_latents = extractor.encode_batch(gen_features)
    return frechet_distance(real_latents, gen_latents, eps=eps)


# --- beat consistency ------------------------------------------------------


def bc_from_beats(motion_beats, audio_beats, sigma=DEFAULT_BC_SIGMA):
    """BC score of explicit beat trains (times in seconds).

    Mean over motion beats of exp(-d^2 / (2 sigma^2)) where d is the gap to
    the nearest audio beat. Defined as 0 (with no beats to score) when
    either train is empty.
    """
    motion_beats = np.asarray(motion_beats, dtype=np.float64)
    audio_beats = np.asarray(audio_beats, dtype=np.float64)
    if motion_beats.size == 0 or audio_beats.size == 0:
        return 0.0
    d = np.abs(motion_beats[:, None] - audio_beats[None, :]).min(axis=1)
    return float(np.mean(np.exp(-(d**2) / (2.0 * sigma**2))))


def detect_motion_beats(positions, fps):
    """Kinematic beats: local minima of mean joint speed (central differences)."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 3:
        return np.array([])
    vel = (positions[2:] - positions[:-2]) * (fps / 2.0)
    speed = np.linalg.norm(vel, axis=-1).mean(axis=1)  # frames 1..T-2
    beats = []
    for i in range(1, len(speed) - 1):
        if speed[i] <= speed[i - 1] and speed[i] < speed[i + 1]:
            beats.append((i + 1) / fps)
    return np.array(beats)


def onset_envelope(waveform, sample_rate, hop_hz=100.0):
    """Rectified energy flux of a waveform at ``hop_hz`` frames per second."""
    wav = np.asarray(waveform, dtype=np.float64)
    hop = max(int(round(sample_rate / hop_hz)), 1)
    frames = max(wav.size // hop, 1)
    energy = np.array(
        [np.sqrt(np.mean(wav[i * hop:(i + 1) * hop] ** 2)) for i in range(frames)]
    )
    flux = np.diff(energy, prepend=energy[:1])
    return np.maximum(flux, 0.0), hop_hz


def detect_audio_beats(waveform, sample_rate, hop_hz=100.0, threshold_sigma=2.0):
    """Onset peaks of the energy-flux envelope, in seconds."""
    flux, rate = onset_envelope(waveform, sample_rate, hop_hz)
    if flux.size < 3:
        return np.array([])
    thresh = flux.mean() + threshold_sigma * flux.std()
    beats = []
    for i in range(1, len(flux) - 1):
        if flux[i] >= flux[i - 1] and flux[i] > flux[i + 1] and flux[i] > thresh:
            beats.append(i / rate)
    return np.array(beats)


def beat_consistency(positions, fps, waveform, sample_rate, sigma=DEFAULT_BC_SIGMA,
                     warn=None):
    """BC between motion kinematic beats and audio onset beats in (0, 1].

    Returns 0.0 (with an optional warning) when either side has no
    detectable beats.
    """
    motion_beats = detect_motion_beats(positions, fps)
    audio_beats = detect_audio_beats(waveform, sample_rate)
    if motion_beats.size == 0 or audio_beats.size == 0:
        if warn is not None:
            warn("beat_consistency: no beats detected on one side, scoring 0")
        return 0.0
    return bc_from_beats(motion_beats, audio_beats, sigma)


# --- diversity -------------------------------------------------------------


def l1_diversity(samples):
    """Mean over unordered pairs of the mean absolute feature difference."""
    arr = np.asarray([np.asarray(s, dtype=np.float64).ravel() for s in samples])
    n = arr.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    total = 0.0
    for i in range(n - 1):
        total += np.abs(arr[i + 1:] - arr[i]).mean(axis=1).sum()
    return float(total / (n * (n - 1) / 2))


# --- co-embedding metrics ---------------------------------------------------


def fid_mmdist_div_rprec(gen_features, ref_features, texts, coembed,
                         div_subset_size=32, rprec_pool_size=32, rng=None):
    """Text-to-motion metric block over a shared embedding space.

    Args:
        gen_features: generated motion feature arrays, paired with texts.
        ref_features: reference motion feature arrays.
        texts: per-sample caption embeddings (512-wide vectors) paired with
            the generated motions.
        coembed: object with motion_embed_batch / text_embed_batch.
        div_subset_size: sample count for the diversity estimate.
        rprec_pool_size: candidate pool for retrieval precision.
        rng: numpy Generator for subset/pool draws.

    Returns dict with fid, mm_dist, diversity, r_precision_top1/2/3.
    """
    rng = rng or np.random.default_rng(0)
    gen_emb = coembed.motion_embed_batch(gen_features)
    ref_emb = coembed.motion_embed_batch(ref_features)
    text_emb = coembed.text_embed_batch(texts)
    n = gen_emb.shape[0]
    if rprec_pool_size > n:
        raise ValueError(f"pool {rprec_pool_size} larger than sample count {n}")

    fid = frechet_distance(ref_emb, gen_emb)
    mm_dist = float(np.linalg.norm(gen_emb - text_emb, axis=1).mean())

    k = min(div_subset_size, n)
    idx = rng.choice(n, size=k, replace=False)
    sub = gen_emb[idx]
    dists = np.linalg.norm(sub[:, None] - sub[None, :], axis=-1)
    diversity = float(dists[np.triu_indices(k, 1)].mean()) if k >= 2 else 0.0

    top = {1: 0, 2: 0, 3: 0}
    for i in range(n):
        others = [j for j in range(n) if j != i]
        pool = [i] + list(rng.choice(others, size=rprec_pool_size - 1, replace=False))
        d = np.linalg.norm(text_emb[pool] - gen_emb[i][None, :], axis=1)
        rank = int(np.argsort(d, kind="stable").tolist().index(0))
        for kk in top:
            top[kk] += int(rank < kk)
    out = {
        "fid": fid,
        "mm_dist": mm_dist,
        "diversity": diversity,
    }
    for kk, hits in top.items():
        out[f"r_precision_top{kk}"] = hits / n
    return out


# --- timing ----------------------------------------------------------------


def aits(generator, requests, warmup=1):
    """Average inference time per request in seconds (batch size one).

    ``generator`` is a warmed-up callable; the first ``warmup`` requests are
    run but not timed, and model loading is the caller's business.
    """
    times = []
    for i, req in enumerate(requests):
        start = time.perf_counter()
        generator(req)
        elapsed = time.perf_counter() - start
        if i >= warmup:
            times.append(elapsed)
    if not times:
        raise ValueError("need at least one timed request after warmup")
    return report({"aits": times})


# --- aggregation -----------------------------------------------------------


@dataclass
class MetricReport:
    """Per-metric mean and 95% confidence half-width over repeated runs."""

    means: dict
    ci95: dict
    runs: int
    seeds: list = field(default_factory=list)

    def row(self, name):
        return self.means[name], self.ci95.get(name)

    def to_dict(self):
        return {
            name: {
                "mean": self.means[name],
                "ci95": self.ci95.get(name),
                "runs": self.runs,
                "seed_list": self.seeds,
            }
            for name in sorted(self.means)
        }


def report(values_per_metric, seeds=None):
    """Aggregate repeated runs: mean and 1.96 * s / sqrt(R) half-widths.

    With fewer than 2 runs the interval is None (point estimate only).
    """
    means = {}
    ci = {}
    runs = 0
    for name, values in values_per_metric.items():
        arr = np.asarray(list(values), dtype=np.float64)
        runs = max(runs, arr.size)
        means[name] = float(arr.mean())
        if arr.size >= 2:
            ci[name] = float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))
        else:
            ci[name] = None
    return MetricReport(means=means, ci95=ci, runs=runs, seeds=list(seeds or []))
