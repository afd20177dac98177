"""Learned metric backbones: the FGD autoencoder and the text-motion
co-embedding.

The FGD extractor is a 1D convolutional autoencoder over feature frames (4
encoder and 4 decoder layers, LeakyReLU after each convolution) whose
bottleneck supplies the latents for the Frechet gesture distance. The
co-embedding trains a motion tower and a text tower into one space with a
symmetric contrastive objective, backing MM-Dist, FID, Div and R-Precision.
Absolute values from these desk-trained evaluators are not comparable to
any externally published numbers; only orderings and properties are.
"""

import numpy as np
import torch
from torch import nn

from .checkpoints import load_checkpoint, save_checkpoint, state_dict_to_numpy
from .vae import FeatureScaler


class FGDExtractor(nn.Module):
    """Conv autoencoder over (T, D) feature clips with a pooled latent."""

    def __init__(self, feature_dim, latent_dim=240, channels=64):
        super().__init__()
        c = channels
        self.encoder = nn.Sequential(
            nn.Conv1d(feature_dim, c, 5, stride=2, padding=2), nn.LeakyReLU(0.2),
            nn.Conv1d(c, c, 5, stride=2, padding=2), nn.LeakyReLU(0.2),
            nn.Conv1d(c, c, 5, stride=2, padding=2), nn.LeakyReLU(0.2),
            nn.Conv1d(c, latent_dim, 5, stride=2, padding=2), nn.LeakyReLU(0.2),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose1d(latent_dim, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.ConvTranspose1d(c, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.ConvTranspose1d(c, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.ConvTranspose1d(c, feature_dim, 4, stride=2, padding=1),
        )
        self.latent_dim = latent_dim
        self.feature_dim = feature_dim
        self.channels = channels
        self.scaler = None  # attached after training

    def forward(self, x):
        """x: (B, T, D) -> (reconstruction (B, T, D), latent map (B, L, T/16))."""
        h = self.encoder(x.transpose(1, 2))
        y = self.decoder(h).transpose(1, 2)
        return y[:, : x.shape[1]], h

    def encode_batch(self, features):
        """List/array of (T, D) clips -> (N, latent_dim) pooled latents."""
        arr = np.asarray([np.asarray(f, dtype=np.float64) for f in features])
        if self.scaler is not None:
            arr = self.scaler.normalize(arr)
        x = torch.as_tensor(arr, dtype=torch.float32)
        self.eval()
        with torch.no_grad():
            h = self.encoder(x.transpose(1, 2))
        return h.mean(dim=2).numpy().astype(np.float64)


def train_fgd_extractor(features, latent_dim=240, channels=64, epochs=1000,
                        batch_size=32, lr=1e-3, seed=0, log_every=0):
    """Train the FGD autoencoder on real-side features (N, T, D)."""
    arr = np.asarray(features, dtype=np.float64)
    N, T, D = arr.shape
    scaler = FeatureScaler.fit(arr.reshape(-1, D))
    normed = scaler.normalize(arr)

    torch.manual_seed(seed)
    model = FGDExtractor(D, latent_dim, channels)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    x_all = torch.as_tensor(normed, dtype=torch.float32)

    history = []
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(N)
        total, batches = 0.0, 0
        for start in range(0, N, batch_size):
            idx = order[start:start + batch_size]
            x = x_all[idx]
            recon, _ = model(x)
            loss = torch.mean((recon - x) ** 2)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss)
            batches += 1
        history.append({"epoch": epoch, "loss": total / batches})
        if log_every and epoch % log_every == 0:
            print(f"fgd extractor epoch {epoch}: loss {total / batches:.5f}")
    model.eval()
    model.scaler = scaler
    return model, history


class CoEmbedding(nn.Module):
    """Motion and text towers into a shared unit-norm embedding space."""

    def __init__(self, feature_dim, text_dim=512, embed_dim=64, channels=64,
                 temperature=0.07):
        super().__init__()
        c = channels
        self.motion_tower = nn.Sequential(
            nn.Conv1d(feature_dim, c, 5, stride=2, padding=2), nn.LeakyReLU(0.2),
            nn.Conv1d(c, c, 5, stride=2, padding=2), nn.LeakyReLU(0.2),
            nn.Conv1d(c, c, 5, stride=2, padding=2), nn.LeakyReLU(0.2),
        )
        self.motion_head = nn.Linear(c, embed_dim)
        self.text_tower = nn.Sequential(
            nn.Linear(text_dim, 256), nn.LeakyReLU(0.2),
            nn.Linear(256, embed_dim),
        )
        self.temperature = temperature
        self.embed_dim = embed_dim
        self.feature_dim = feature_dim
        self.text_dim = text_dim
        self.channels = channels
        self.scaler = None

    def embed_motion(self, x):
        h = self.motion_tower(x.transpose(1, 2)).mean(dim=2)
        e = self.motion_head(h)
        return e / e.norm(dim=1, keepdim=True).clamp_min(1e-8)

    def embed_text(self, v):
        e = self.text_tower(v)
        return e / e.norm(dim=1, keepdim=True).clamp_min(1e-8)

    def motion_embed_batch(self, features):
        arr = np.asarray([np.asarray(f, dtype=np.float64) for f in features])
        if self.scaler is not None:
            arr = self.scaler.normalize(arr)
        self.eval()
        with torch.no_grad():
            e = self.embed_motion(torch.as_tensor(arr, dtype=torch.float32))
        return e.numpy().astype(np.float64)

    def text_embed_batch(self, vectors):
        arr = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors])
        self.eval()
        with torch.no_grad():
            e = self.embed_text(torch.as_tensor(arr, dtype=torch.float32))
        return e.numpy().astype(np.float64)


def train_coembedding(features, text_vectors, embed_dim=64, channels=64,
                      epochs=300, batch_size=32, lr=1e-3, seed=0, log_every=0):
    """Symmetric InfoNCE training over (motion, caption-vector) pairs."""
    arr = np.asarray(features, dtype=np.float64)
    texts = np.asarray(text_vectors, dtype=np.float64)
    N, T, D = arr.shape
    scaler = FeatureScaler.fit(arr.reshape(-1, D))
    normed = scaler.normalize(arr)

    torch.manual_seed(seed)
    model = CoEmbedding(D, texts.shape[1], embed_dim, channels)
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    x_all = torch.as_tensor(normed, dtype=torch.float32)
    t_all = torch.as_tensor(texts, dtype=torch.float32)

    history = []
    model.train()
    for epoch in range(epochs):
        order = rng.permutation(N)
        total, batches = 0.0, 0
        for start in range(0, N, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue
            me = model.embed_motion(x_all[idx])
            te = model.embed_text(t_all[idx])
            logits = (me @ te.T) / model.temperature
            labels = torch.arange(len(idx))
            loss = 0.5 * (
                nn.functional.cross_entropy(logits, labels)
                + nn.functional.cross_entropy(logits.T, labels)
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss)
            batches += 1
        history.append({"epoch": epoch, "loss": total / max(batches, 1)})
        if log_every and epoch % log_every == 0:
            print(f"coembed epoch {epoch}: loss {history[-1]['loss']:.5f}")
    model.eval()
    model.scaler = scaler
    return model, history


def save_evaluator(path, model, history, seed):
    if isinstance(model, FGDExtractor):
        meta = {
            "kind": "fgd_extractor",
            "feature_dim": model.feature_dim,
            "latent_dim": model.latent_dim,
            "channels": model.channels,
        }
    elif isinstance(model, CoEmbedding):
        meta = {
            "kind": "coembedding",
            "feature_dim": model.feature_dim,
            "text_dim": model.text_dim,
            "embed_dim": model.embed_dim,
            "channels": model.channels,
            "temperature": model.temperature,
        }
    else:
        raise TypeError(f"not an evaluator: {type(model)}")
    meta["seed"] = seed
    meta["epochs_trained"] = len(history)
    meta["final_loss"] = history[-1]["loss"] if history else None
    params = state_dict_to_numpy(model)
    params["scaler.mean"] = model.scaler.mean
    params["scaler.std"] = model.scaler.std
    save_checkpoint(path, params, meta)


def load_evaluator(path):
    params, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind == "fgd_extractor":
        model = FGDExtractor(meta["feature_dim"], meta["latent_dim"], meta["channels"])
    elif kind == "coembedding":
        model = CoEmbedding(
            meta["feature_dim"], meta["text_dim"], meta["embed_dim"],
            meta["channels"], meta["temperature"],
        )
    else:
        raise ValueError(f"{path} is not an evaluator checkpoint")
    scaler = FeatureScaler(params.pop("scaler.mean"), params.pop("scaler.std"))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in params.items()})
    model.eval()
    model.scaler = scaler
    return model, meta
