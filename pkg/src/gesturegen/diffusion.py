"""Latent diffusion: noise schedule, hierarchical denoiser, guidance, DDIM.

The denoiser is an encoder-decoder transformer. Its encoder self-attends
over the noised latent tokens, a timestep token and the projected local
conditions (per-segment caption and pooled audio tokens); its decoder
cross-attends that representation against the global caption token. At
inference, classifier-free guidance combines an audio-only, a caption-only
and an unconditional noise prediction.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import conditioning as cond
from .checkpoints import load_checkpoint, save_checkpoint, state_dict_to_numpy
from .vae import EncoderBlock, DecoderBlock, sinusoidal_positions


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise constants: beta, alpha and the cumulative alpha_bar.

    Index t runs 1..steps; array slot t-1 holds step t's constants.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @classmethod
    def linear(cls, steps=1000, beta_start=8.5e-4, beta_end=0.012):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        beta = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
        if not (0 < beta[0] and beta[-1] < 1):
            raise ValueError("betas must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        return cls(beta=beta, alpha=alpha, alpha_bar=alpha_bar)

    @property
    def steps(self):
        return len(self.beta)

    def digest(self):
        return hashlib.sha1(self.beta.astype("<f8").tobytes()).hexdigest()


def q_sample(z0, t, eps, schedule):
    """Closed-form forward marginal: z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"t={t} outside [1, {schedule.steps}]")
    abar = schedule.alpha_bar[t - 1]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def q_sample_chain(z0, t, schedule, rng):
    """Step the forward chain t times; distributionally equal to q_sample."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"t={t} outside [1, {schedule.steps}]")
    z = np.asarray(z0, dtype=np.float64)
    for step in range(t):
        a = schedule.alpha[step]
        z = np.sqrt(a) * z + np.sqrt(1.0 - a) * rng.standard_normal(z.shape)
    return z


def cfg_combine(eps_audio, eps_caption, eps_uncond, s1, s2):
    """Dual-scale classifier-free guidance (affine: coefficients sum to 1)."""
    return s1 * eps_audio + s2 * eps_caption + (1.0 - s1 - s2) * eps_uncond


class HierarchicalDenoiser(nn.Module):
    """Noise predictor with two-stage condition injection."""

    def __init__(self, latent_tokens, latent_dim, config):
        super().__init__()
        self.n = latent_tokens
        self.d = latent_dim
        width = config.width
        self.width = width

        self.latent_in = nn.Linear(latent_dim, width)
        self.time_embed = nn.Sequential(
            nn.Linear(width, width), nn.GELU(), nn.Linear(width, width)
        )
        self.caption_proj = nn.Linear(cond.TEXT_WIDTH, width)
        self.audio_proj = nn.Linear(cond.AUDIO_WIDTH, width)
        self.global_proj = nn.Linear(cond.TEXT_WIDTH, width)

        self.encoder = nn.ModuleList(
            EncoderBlock(width, config.heads) for _ in range(config.encoder_layers)
        )
        self.decoder = nn.ModuleList(
            DecoderBlock(width, config.heads) for _ in range(config.decoder_layers)
        )
        self.out = nn.Linear(width, latent_dim)
        self.max_steps = 10000

    def timestep_token(self, t, device):
        """Sinusoidal embedding of integer steps t (B,) -> (B, width)."""
        half = self.width // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=device) / half
        )
        args = t.float().unsqueeze(1) * freqs.unsqueeze(0)
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
        return self.time_embed(emb)

    def forward(self, z_t, t, cond_tokens, cond_mask, global_tokens):
        """Predict the noise in z_t.

        Args:
            z_t: (B, n, d) noised latents.
            t: (B,) integer steps.
            cond_tokens: (B, C, width) projected local condition tokens.
            cond_mask: (B, C) bool, True where a token is padding.
            global_tokens: (B, 1, width) projected global caption (or null).
        """
        B = z_t.shape[0]
        zin = self.latent_in(z_t)
        ttok = self.timestep_token(t, z_t.device).unsqueeze(1)
        x = torch.cat([zin, ttok, cond_tokens], dim=1)

        if cond_mask is None:
            key_padding = None
        else:
            fixed = torch.zeros(B, self.n + 1, dtype=torch.bool, device=z_t.device)
            key_padding = torch.cat([fixed, cond_mask], dim=1)

        for layer in self.encoder:
            x = layer(x, key_padding_mask=key_padding)
        h = x
        for layer in self.decoder:
            h = layer(h, global_tokens)
        return self.out(h[:, : self.n])

    def project_condition_set(self, cs):
        """Torch projection of a single ConditionSet: (tokens, global token)."""
        tokens, mask, gtok = project_condition_batch(self, [cs])
        return tokens, gtok


def project_condition_batch(model, cond_sets):
    """Project a batch of ConditionSets to padded encoder tokens.

    Returns (tokens (B, C, width), padding_mask (B, C), global (B, 1, width)).
    Token counts vary per set; shorter rows are zero-padded and masked out.
    """
    tok_lists = [cond.condition_tokens(cs) for cs in cond_sets]
    B = len(cond_sets)
    C = max((len(t) for t in tok_lists), default=0)
    tokens = torch.zeros(B, C, model.width)
    padding = torch.ones(B, C, dtype=torch.bool)

    by_modality = {"caption": [], "audio": []}
    for b, toks in enumerate(tok_lists):
        padding[b, : len(toks)] = False
        for pos, tok in enumerate(toks):
            by_modality[tok.modality].append((b, pos, tok.vector))
    for modality, proj in (("caption", model.caption_proj), ("audio", model.audio_proj)):
        entries = by_modality[modality]
        if not entries:
            continue
        mat = torch.as_tensor(np.stack([v for _, _, v in entries]), dtype=torch.float32)
        rows = torch.as_tensor([b for b, _, _ in entries], dtype=torch.long)
        cols = torch.as_tensor([p for _, p, _ in entries], dtype=torch.long)
        tokens = tokens.index_put((rows, cols), proj(mat))

    gvecs = np.stack([cond.global_caption_vector(cs) for cs in cond_sets])
    gtok = model.global_proj(torch.as_tensor(gvecs, dtype=torch.float32)).unsqueeze(1)
    return tokens, padding, gtok


def encoder_token_count(denoiser, cs):
    """Length law: n latent tokens + 1 timestep + local condition tokens."""
    return denoiser.n + 1 + len(cond.condition_tokens(cs))


def denoise(model, z_t, t, cs):
    """Single-clip noise prediction from a ConditionSet (numpy in/out)."""
    out = denoise_batch(model, np.asarray(z_t)[None], [t], [cs])
    return out[0]


def denoise_batch(model, z_t, ts, cond_sets):
    """Batched noise prediction (numpy in/out)."""
    model.eval()
    with torch.no_grad():
        tokens, padding, gtok = project_condition_batch(model, cond_sets)
        zt = torch.as_tensor(np.asarray(z_t), dtype=torch.float32)
        tt = torch.as_tensor(list(ts), dtype=torch.long)
        out = model(zt, tt, tokens, padding, gtok)
    return out.numpy().astype(np.float64)


def guided_epsilon(model, z_t, t, cs, s1, s2):
    """The three guidance passes of one step, combined.

    The model runs once on a 3-row batch: audio-only, caption-only and
    unconditional. When a modality is absent from ``cs`` its pass equals
    the unconditional one, reducing the combination algebraically.
    """
    passes = [
        cond.mask_modality(cs, "caption"),
        cond.mask_modality(cs, "audio"),
        cond.null_conditions(cs),
    ]
    z = np.repeat(np.asarray(z_t)[None], 3, axis=0)
    eps = denoise_batch(model, z, [t, t, t], passes)
    return cfg_combine(eps[0], eps[1], eps[2], s1, s2)


def ddim_timesteps(train_steps, inference_steps):
    """Uniform-stride subsequence of the training steps, descending."""
    if inference_steps > train_steps:
        raise ValueError("inference_steps cannot exceed train_steps")
    stride = train_steps // inference_steps
    ts = [(i + 1) * stride for i in range(inference_steps)]
    ts[-1] = train_steps
    return ts[::-1]


def ddim_sample(eps_model, shape, schedule, inference_steps=50, eta=0.0, rng=None,
                z_T=None):
    """DDIM trajectory from noise to a denoised latent.

    ``eps_model(z_t, t) -> eps_hat`` wraps the denoiser plus guidance. The
    start point is ``z_T`` when given, otherwise drawn from ``rng``. With
    eta=0 the path is deterministic given the start. Returns the final x0
    estimate.
    """
    if z_T is None:
        if rng is None:
            raise ValueError("need rng or an explicit z_T")
        z_T = rng.standard_normal(shape)

    steps = ddim_timesteps(schedule.steps, inference_steps)
    z = np.asarray(z_T, dtype=np.float64)
    x0 = z
    for i, t in enumerate(steps):
        abar_t = schedule.alpha_bar[t - 1]
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        abar_prev = schedule.alpha_bar[t_prev - 1] if t_prev >= 1 else 1.0

        eps_hat = eps_model(z, t)
        x0 = (z - math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(abar_t)
        sigma = 0.0
        if eta > 0.0 and t_prev >= 1:
            sigma = eta * math.sqrt(
                (1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - abar_t / abar_prev)
            )
        dir_coeff = math.sqrt(max(1.0 - abar_prev - sigma**2, 0.0))
        z = math.sqrt(abar_prev) * x0 + dir_coeff * eps_hat
        if sigma > 0.0:
            z = z + sigma * rng.standard_normal(z.shape)
    return x0


def diffusion_loss(model, z0_batch, cond_sets, schedule, rng, mask_prob=0.1):
    """The l2 noise-prediction objective over one batch.

    Draws (t, eps) per sample, applies classifier-free condition masking,
    and averages ||eps - eps_hat||^2 (summed over latent entries) across
    the batch. Differentiable through the model.
    """
    B = len(z0_batch)
    zts, ts, targets, masked = [], [], [], []
    for b in range(B):
        z0 = np.asarray(z0_batch[b], dtype=np.float64)
        t = int(rng.integers(1, schedule.steps + 1))
        eps = rng.standard_normal(z0.shape)
        zts.append(q_sample(z0, t, eps, schedule))
        ts.append(t)
        targets.append(eps)
        masked.append(cond.mask_for_cfg(cond_sets[b], rng, mask_prob))

    tokens, padding, gtok = project_condition_batch(model, masked)
    zt = torch.as_tensor(np.stack(zts), dtype=torch.float32)
    tt = torch.as_tensor(ts, dtype=torch.long)
    eps_hat = model(zt, tt, tokens, padding, gtok)
    target = torch.as_tensor(np.stack(targets), dtype=torch.float32)
    return torch.sum((target - eps_hat) ** 2, dim=(1, 2)).mean()


class LatentScaler:
    """Z-normalization of VAE latents so diffusion sees unit-scale data."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, latents, floor=1e-6):
        arr = np.asarray(latents, dtype=np.float64)
        flat = arr.reshape(arr.shape[0], -1)
        mean = flat.mean(axis=0).reshape(arr.shape[1:])
        std = np.maximum(flat.std(axis=0).reshape(arr.shape[1:]), floor)
        return cls(mean, std)

    def normalize(self, z):
        return (z - self.mean) / self.std

    def denormalize(self, z):
        return z * self.std + self.mean


def train_diffusion(z0_list, cond_sets, config, seed=0, log_every=0, callback=None):
    """Train the denoiser on frozen-VAE latents plus their conditions.

    Latents are z-normalized internally (the scaler ships with the model).
    Returns (model, latent_scaler, history).
    """
    z0 = np.asarray(z0_list, dtype=np.float64)
    N, n, d = z0.shape
    scaler = LatentScaler.fit(z0)
    z0n = scaler.normalize(z0)

    schedule = NoiseSchedule.linear(config.train_steps, config.beta_start, config.beta_end)
    torch.manual_seed(seed)
    model = HierarchicalDenoiser(n, d, config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(seed)

    history = []
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(N)
        total = 0.0
        batches = 0
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = diffusion_loss(
                model,
                [z0n[i] for i in idx],
                [cond_sets[i] for i in idx],
                schedule,
                rng,
                config.cond_mask_prob,
            )
            if not torch.isfinite(loss):
                raise RuntimeError(f"diffusion training diverged at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss)
            batches += 1
        record = {"epoch": epoch, "loss": total / batches}
        history.append(record)
        if log_every and epoch % log_every == 0:
            print(f"diffusion epoch {epoch}: loss {record['loss']:.5f}")
        if callback is not None:
            callback(record)
    model.eval()
    return model, scaler, history


def save_denoiser(path, model, scaler, config, seed, history):
    meta = {
        "kind": "denoiser",
        "latent_tokens": model.n,
        "latent_dim": model.d,
        "config": {
            "encoder_layers": len(model.encoder),
            "decoder_layers": len(model.decoder),
            "heads": model.encoder[0].attn.num_heads,
            "width": model.width,
            "train_steps": config.train_steps,
            "inference_steps": config.inference_steps,
            "beta_start": config.beta_start,
            "beta_end": config.beta_end,
            "audio_scale": config.audio_scale,
            "caption_scale": config.caption_scale,
            "cond_mask_prob": config.cond_mask_prob,
        },
        "seed": seed,
        "epochs_trained": len(history),
        "final_loss": history[-1]["loss"] if history else None,
    }
    params = state_dict_to_numpy(model)
    params["latent_scaler.mean"] = scaler.mean
    params["latent_scaler.std"] = scaler.std
    save_checkpoint(path, params, meta)


def load_denoiser(path):
    from .config import DiffusionSettings

    params, meta = load_checkpoint(path)
    if meta.get("kind") != "denoiser":
        raise ValueError(f"{path} is not a denoiser checkpoint")
    cfg = meta["config"]
    settings = DiffusionSettings(
        train_steps=cfg["train_steps"], inference_steps=cfg["inference_steps"],
        beta_start=cfg["beta_start"], beta_end=cfg["beta_end"],
        encoder_layers=cfg["encoder_layers"], decoder_layers=cfg["decoder_layers"],
        heads=cfg["heads"], width=cfg["width"],
        audio_scale=cfg["audio_scale"], caption_scale=cfg["caption_scale"],
        cond_mask_prob=cfg["cond_mask_prob"], epochs=0,
    )
    model = HierarchicalDenoiser(meta["latent_tokens"], meta["latent_dim"], settings)
    scaler = LatentScaler(params.pop("latent_scaler.mean"), params.pop("latent_scaler.std"))
    state = {k: torch.from_numpy(v) for k, v in params.items()}
    model.load_state_dict(state)
    model.eval()
    return model, scaler, settings, meta


def condition_digest(cs):
    """Stable hash of a ConditionSet for replay manifests."""
    h = hashlib.sha1()
    for seg in cs.segments:
        h.update(f"{seg.start}:{seg.end};".encode())
    for cap in cs.local_captions or ():
        h.update(b"-" if cap is None else cap.vector.astype("<f8").tobytes())
    if cs.global_caption is not None:
        h.update(cs.global_caption.vector.astype("<f8").tobytes())
    if cs.audio is not None:
        h.update(cs.audio.frames.astype("<f8").tobytes())
    h.update(json.dumps(cs.mask_flags, sort_keys=True).encode())
    return h.hexdigest()


def generate_latent(denoiser, latent_scaler, cs, schedule, inference_steps, s1, s2, seed):
    """Run guided DDIM for one request and return the denormalized latent."""
    rng = np.random.default_rng(seed)

    def eps_model(z_t, t):
        return guided_epsilon(denoiser, z_t, t, cs, s1, s2)

    z_hat = ddim_sample(
        eps_model, (denoiser.n, denoiser.d), schedule,
        inference_steps=inference_steps, eta=0.0, rng=rng,
    )
    return latent_scaler.denormalize(z_hat)
