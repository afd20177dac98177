"""Transformer VAE over unified motion features.

The encoder reads frame tokens plus learnable distribution tokens and
emits Gaussian parameters; the decoder cross-attends zero motion queries
against the latent. Both stacks carry U-Net style long skip connections
(layer k's output is added, through a linear map, to layer L-1-k's input),
so decoding stays a pure function of the latent.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoints import load_checkpoint, save_checkpoint, state_dict_to_numpy


@dataclass(frozen=True)
class GaussianParams:
    mu: np.ndarray  # (n, d)
    log_sigma: np.ndarray  # (n, d)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        ls = np.asarray(self.log_sigma, dtype=np.float64)
        if mu.shape != ls.shape or not (np.isfinite(mu).all() and np.isfinite(ls).all()):
            raise ValueError("mu/log_sigma must be finite and share a shape")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", ls)


def sinusoidal_positions(length, dim, device=None):
    """Standard sine/cosine positional table, shape (length, dim)."""
    position = torch.arange(length, dtype=torch.float32, device=device).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float32, device=device) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(length, dim, device=device)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : dim // 2]
    return table


class EncoderBlock(nn.Module):
    def __init__(self, width, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(
            nn.Linear(width, width * 4), nn.GELU(), nn.Linear(width * 4, width)
        )

    def forward(self, x, key_padding_mask=None):
        h = self.norm1(x)
        attn, _ = self.attn(h, h, h, key_padding_mask=key_padding_mask, need_weights=False)
        x = x + attn
        x = x + self.ff(self.norm2(x))
        return x


class DecoderBlock(nn.Module):
    def __init__(self, width, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.self_attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.cross_attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm3 = nn.LayerNorm(width)
        self.ff = nn.Sequential(
            nn.Linear(width, width * 4), nn.GELU(), nn.Linear(width * 4, width)
        )

    def forward(self, x, memory, memory_key_padding_mask=None):
        h = self.norm1(x)
        attn, _ = self.self_attn(h, h, h, need_weights=False)
        x = x + attn
        h = self.norm2(x)
        attn, _ = self.cross_attn(
            h, memory, memory, key_padding_mask=memory_key_padding_mask, need_weights=False
        )
        x = x + attn
        x = x + self.ff(self.norm3(x))
        return x


class _SkipWiring(nn.Module):
    """Long skips inside one stack: outputs of the first half feed the
    mirrored second-half layers through learned linear maps."""

    def __init__(self, layers, width):
        super().__init__()
        self.pairs = [(k, layers - 1 - k) for k in range(layers // 2)]
        self.maps = nn.ModuleDict(
            {str(dst): nn.Linear(width, width) for _, dst in self.pairs}
        )

    def stash(self, layer_idx, value, store):
        for src, _ in self.pairs:
            if src == layer_idx:
                store[layer_idx] = value

    def inject(self, layer_idx, x, store):
        for src, dst in self.pairs:
            if dst == layer_idx:
                return x + self.maps[str(dst)](store[src])
        return x


class MotionVAE(nn.Module):
    """Encode (T, D) feature sequences to an (n, d) latent and back."""

    def __init__(self, feature_dim, config):
        super().__init__()
        self.feature_dim = feature_dim
        self.n = config.latent_tokens
        self.d = config.latent_dim
        width = config.width
        self.width = width

        self.input_proj = nn.Linear(feature_dim, width)
        self.dist_tokens = nn.Parameter(torch.randn(2 * self.n, width) * 0.02)
        self.enc_layers = nn.ModuleList(
            EncoderBlock(width, config.heads) for _ in range(config.layers)
        )
        self.enc_skips = _SkipWiring(config.layers, width) if config.skip_connections else None
        self.to_latent = nn.Linear(width, self.d)

        self.from_latent = nn.Linear(self.d, width)
        self.dec_layers = nn.ModuleList(
            DecoderBlock(width, config.heads) for _ in range(config.layers)
        )
        self.dec_skips = _SkipWiring(config.layers, width) if config.skip_connections else None
        self.output_proj = nn.Linear(width, feature_dim)

    def encode(self, features, mask=None):
        """Features (B, T, D) and bool mask (B, T) of real frames -> mu, log_sigma (B, n, d)."""
        B, T, D = features.shape
        if D != self.feature_dim:
            raise ValueError(f"expected feature width {self.feature_dim}, got {D}")
        x = self.input_proj(features)
        x = x + sinusoidal_positions(T, self.width, features.device)
        dist = self.dist_tokens.unsqueeze(0).expand(B, -1, -1)
        x = torch.cat([dist, x], dim=1)

        if mask is None:
            key_padding = None
        else:
            always = torch.zeros(B, 2 * self.n, dtype=torch.bool, device=features.device)
            key_padding = torch.cat([always, ~mask], dim=1)

        store = {}
        for i, layer in enumerate(self.enc_layers):
            if self.enc_skips is not None:
                x = self.enc_skips.inject(i, x, store)
            x = layer(x, key_padding_mask=key_padding)
            if self.enc_skips is not None:
                self.enc_skips.stash(i, x, store)
        head = self.to_latent(x[:, : 2 * self.n])
        mu, log_sigma = head[:, : self.n], head[:, self.n:]
        return mu, log_sigma

    def decode(self, z, target_len):
        """Latent (B, n, d) -> features (B, target_len, D)."""
        if target_len < 1:
            raise ValueError("target_len must be >= 1")
        B = z.shape[0]
        memory = self.from_latent(z)
        queries = sinusoidal_positions(target_len, self.width, z.device)
        x = queries.unsqueeze(0).expand(B, -1, -1)

        store = {}
        for i, layer in enumerate(self.dec_layers):
            if self.dec_skips is not None:
                x = self.dec_skips.inject(i, x, store)
            x = layer(x, memory)
            if self.dec_skips is not None:
                self.dec_skips.stash(i, x, store)
        return self.output_proj(x)


def encode(model, features, mask=None):
    """Numpy-facing encode: (T, D) or (B, T, D) -> GaussianParams (first batch row)."""
    single = features.ndim == 2
    feats = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    if single:
        feats = feats.unsqueeze(0)
    m = None
    if mask is not None:
        m = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
        if single:
            m = m.unsqueeze(0)
    model.eval()
    with torch.no_grad():
        mu, log_sigma = model.encode(feats, m)
    if single:
        mu, log_sigma = mu[0], log_sigma[0]
    return GaussianParams(mu.numpy(), log_sigma.numpy())


def reparameterize(params, rng):
    """z = mu + sigma * eps with eps drawn from the caller's generator."""
    eps = rng.standard_normal(params.mu.shape)
    return params.mu + np.exp(params.log_sigma) * eps


def decode(model, z, target_len):
    """Numpy-facing decode: (n, d) or (B, n, d) -> features."""
    single = np.asarray(z).ndim == 2
    zt = torch.as_tensor(np.asarray(z), dtype=torch.float32)
    if single:
        zt = zt.unsqueeze(0)
    model.eval()
    with torch.no_grad():
        out = model.decode(zt, target_len)
    out = out.numpy().astype(np.float64)
    return out[0] if single else out


def kl_divergence(mu, log_sigma):
    """Closed-form KL(N(mu, sigma^2) || N(0, I)), summed over latent dims."""
    var = torch.exp(2.0 * log_sigma)
    return 0.5 * torch.sum(mu**2 + var - 1.0 - 2.0 * log_sigma, dim=tuple(range(1, mu.ndim)))


def vae_loss(x, x_hat, mu, log_sigma, beta, mask=None):
    """Masked reconstruction MSE plus beta-weighted KL.

    Reconstruction averages squared error over real frames and features;
    KL is the closed form summed over latent dimensions, averaged over the
    batch. Returns (total, {"recon": ..., "kl": ...}).
    """
    if mask is None:
        recon = torch.mean((x - x_hat) ** 2)
    else:
        diff2 = (x - x_hat) ** 2
        w = mask.float().unsqueeze(-1)
        recon = (diff2 * w).sum() / (w.sum() * x.shape[-1])
    kl = kl_divergence(mu, log_sigma).mean()
    total = recon + beta * kl
    return total, {"recon": recon, "kl": kl}


class FeatureScaler:
    """Per-feature z-normalization with a std floor against dead channels."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, stacked_features, floor=1e-2):
        mean = stacked_features.mean(axis=0)
        std = np.maximum(stacked_features.std(axis=0), floor)
        return cls(mean, std)

    def normalize(self, feats):
        return (feats - self.mean) / self.std

    def denormalize(self, feats):
        return feats * self.std + self.mean


def train_vae(features, masks, config, seed=0, log_every=0, callback=None):
    """Train the VAE on stacked (N, T, D) features with (N, T) masks.

    Features are z-normalized internally; the scaler ships with the model.
    Returns (model, scaler, history) where history is one dict per epoch.
    Aborts with RuntimeError if the loss goes non-finite.
    """
    features = np.asarray(features, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    N, T, D = features.shape

    flat = features.reshape(-1, D)[masks.reshape(-1)]
    scaler = FeatureScaler.fit(flat)
    normed = scaler.normalize(features)

    torch.manual_seed(seed)
    model = MotionVAE(D, config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(seed)

    x_all = torch.as_tensor(normed, dtype=torch.float32)
    m_all = torch.as_tensor(masks, dtype=torch.bool)

    # bucket clips of similar valid length together and crop each batch to
    # its longest clip; padded frames carry no information, so this only
    # cuts attention cost
    lengths = masks.sum(axis=1)
    by_length = np.argsort(lengths, kind="stable")
    batch_ids = [
        by_length[s:s + config.batch_size] for s in range(0, N, config.batch_size)
    ]

    history = []
    model.train()
    for epoch in range(config.epochs):
        order = rng.permutation(len(batch_ids))
        epoch_loss = epoch_recon = epoch_kl = 0.0
        batches = 0
        for bi in order:
            idx = batch_ids[bi]
            t_max = int(lengths[idx].max())
            x = x_all[idx][:, :t_max]
            m = m_all[idx][:, :t_max]
            mu, log_sigma = model.encode(x, m)
            eps = torch.as_tensor(
                rng.standard_normal(mu.shape), dtype=torch.float32
            )
            z = mu + torch.exp(log_sigma) * eps
            x_hat = model.decode(z, t_max)
            loss, parts = vae_loss(x, x_hat, mu, log_sigma, config.kl_weight, m)
            if not torch.isfinite(loss):
                raise RuntimeError(f"VAE training diverged at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            epoch_recon += float(parts["recon"].detach())
            epoch_kl += float(parts["kl"].detach())
            batches += 1
        record = {
            "epoch": epoch,
            "loss": epoch_loss / batches,
            "recon": epoch_recon / batches,
            "kl": epoch_kl / batches,
        }
        history.append(record)
        if log_every and epoch % log_every == 0:
            print(f"vae epoch {epoch}: loss {record['loss']:.5f} recon {record['recon']:.5f}")
        if callback is not None:
            callback(record)
    model.eval()
    return model, scaler, history


def save_vae(path, model, scaler, config, seed, history):
    meta = {
        "kind": "vae",
        "feature_dim": model.feature_dim,
        "config": {
            "layers": len(model.enc_layers),
            "heads": model.enc_layers[0].attn.num_heads,
            "width": model.width,
            "latent_tokens": model.n,
            "latent_dim": model.d,
            "kl_weight": config.kl_weight,
            "skip_connections": model.enc_skips is not None,
        },
        "seed": seed,
        "epochs_trained": len(history),
        "final_loss": history[-1]["loss"] if history else None,
        "final_recon": history[-1]["recon"] if history else None,
    }
    params = state_dict_to_numpy(model)
    params["scaler.mean"] = scaler.mean
    params["scaler.std"] = scaler.std
    save_checkpoint(path, params, meta)


def load_vae(path):
    from .config import VAESettings

    params, meta = load_checkpoint(path)
    if meta.get("kind") != "vae":
        raise ValueError(f"{path} is not a VAE checkpoint")
    cfg = meta["config"]
    settings = VAESettings(
        layers=cfg["layers"], heads=cfg["heads"], width=cfg["width"],
        latent_tokens=cfg["latent_tokens"], latent_dim=cfg["latent_dim"],
        kl_weight=cfg["kl_weight"], skip_connections=cfg["skip_connections"],
        epochs=0,
    )
    model = MotionVAE(meta["feature_dim"], settings)
    scaler = FeatureScaler(params.pop("scaler.mean"), params.pop("scaler.std"))
    state = {k: torch.from_numpy(v) for k, v in params.items()}
    model.load_state_dict(state)
    model.eval()
    return model, scaler, meta
