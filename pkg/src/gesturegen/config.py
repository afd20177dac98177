"""Run configuration: nested settings with paper and desk profiles.

The ``paper`` profile pins every published training constant so it stays
auditable; the ``desk`` profile shrinks the networks and schedules to run
end to end on a laptop CPU in minutes. Config files are YAML with an
optional ``include`` key (paths merged first, later keys override) and
unknown keys are rejected.
"""

import dataclasses
import os
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class VAESettings:
    layers: int = 9
    heads: int = 4
    width: int = 512
    latent_tokens: int = 1
    latent_dim: int = 512
    kl_weight: float = 1e-4
    activation: str = "gelu"
    skip_connections: bool = True
    epochs: int = 6000
    batch_size: int = 128
    learning_rate: float = 1e-4

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError("vae width must be divisible by heads")
        if self.latent_tokens < 1:
            raise ConfigError("latent_tokens must be >= 1")


@dataclass
class DiffusionSettings:
    train_steps: int = 1000
    inference_steps: int = 50
    beta_start: float = 8.5e-4
    beta_end: float = 0.012
    encoder_layers: int = 9
    decoder_layers: int = 9
    heads: int = 4
    width: int = 512
    activation: str = "gelu"
    epochs: int = 2000
    batch_size: int = 128
    learning_rate: float = 1e-4
    audio_scale: float = 7.0  # s1
    caption_scale: float = 0.75  # s2
    cond_mask_prob: float = 0.1

    def __post_init__(self):
        if self.inference_steps > self.train_steps:
            raise ConfigError("inference_steps cannot exceed train_steps")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError("need 0 < beta_start <= beta_end < 1")


@dataclass
class CaptionSettings:
    strategy: str = "hierarchical"
    segment_len: int = 60
    dynamic_min_len: int = 40
    dynamic_max_len: int = 80
    min_words: int = 5
    separator: str = "<SEP>"
    mix_probability: float = 0.2


@dataclass
class ConditioningSettings:
    text_width: int = 512
    audio_width: int = 1133
    token_width: int = 512


@dataclass
class DataSettings:
    fps: float = 20.0
    target_frames: int = 180
    min_frames: int = 40
    max_frames: int = 180
    split_ratios: tuple = (0.8, 0.1, 0.1)
    mixture_weights: dict = field(default_factory=lambda: {"gesture": 1.0, "motion": 1.0})
    audio_sample_rate: int = 16000

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.split_ratios)
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")
        if self.min_frames > self.max_frames:
            raise ConfigError("min_frames > max_frames")
        self.split_ratios = ratios


@dataclass
class MetricSettings:
    runs: int = 20
    fgd_latent_dim: int = 240
    bc_sigma: float = 0.1
    rprecision_pool: int = 32
    diversity_subset: int = 32
    coembed_dim: int = 64
    fgd_channels: int = 64
    fgd_epochs: int = 1000
    coembed_epochs: int = 300
    evaluator_batch: int = 32
    evaluator_lr: float = 1e-3


@dataclass
class RunConfig:
    profile: str = "paper"
    seed: int = 0
    vae: VAESettings = field(default_factory=VAESettings)
    diffusion: DiffusionSettings = field(default_factory=DiffusionSettings)
    captioning: CaptionSettings = field(default_factory=CaptionSettings)
    conditioning: ConditioningSettings = field(default_factory=ConditioningSettings)
    data: DataSettings = field(default_factory=DataSettings)
    metrics: MetricSettings = field(default_factory=MetricSettings)

    def to_dict(self):
        return dataclasses.asdict(self)


def paper_profile(seed=0):
    """The published full-scale training configuration, verbatim."""
    return RunConfig(profile="paper", seed=seed)


def desk_profile(seed=0):
    """Laptop-scale settings: same pipeline, small nets, short schedules."""
    return RunConfig(
        profile="desk",
        seed=seed,
        vae=VAESettings(
            layers=2, heads=4, width=64, latent_tokens=1, latent_dim=32,
            kl_weight=1e-4, epochs=150, batch_size=32, learning_rate=2e-3,
        ),
        diffusion=DiffusionSettings(
            train_steps=1000, inference_steps=50,
            encoder_layers=2, decoder_layers=2, heads=4, width=64,
            epochs=300, batch_size=32, learning_rate=2e-3,
        ),
        metrics=MetricSettings(
            runs=20, fgd_epochs=60, coembed_epochs=200, fgd_channels=32,
        ),
    )


PROFILES = {"paper": paper_profile, "desk": desk_profile}

_SECTION_TYPES = {
    "vae": VAESettings,
    "diffusion": DiffusionSettings,
    "captioning": CaptionSettings,
    "conditioning": ConditioningSettings,
    "data": DataSettings,
    "metrics": MetricSettings,
}


def _apply_overrides(config, overrides):
    for key, value in overrides.items():
        if key == "include":
            continue
        if key in ("profile", "seed"):
            setattr(config, key, value)
            continue
        if key not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section {key!r}")
        section = getattr(config, key)
        valid = {f.name for f in dataclasses.fields(section)}
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        for sub, subval in value.items():
            if sub not in valid:
                raise ConfigError(f"unknown key {key}.{sub}")
            setattr(section, sub, subval)
        section.__post_init__()
    return config


def load_config(path=None, overrides=None, profile=None):
    """Build a RunConfig from a profile, an optional YAML file and overrides.

    The file may name a ``profile`` and ``include`` other files; includes
    are loaded first and later values win. Unknown keys raise ConfigError.
    """
    data = {}
    if path is not None:
        data = _load_yaml_with_includes(path)
    name = profile or data.get("profile", "desk")
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}")
    config = PROFILES[name]()
    _apply_overrides(config, data)
    config.profile = name
    if overrides:
        _apply_overrides(config, overrides)
    return config


def _load_yaml_with_includes(path, seen=None):
    seen = seen or set()
    real = os.path.realpath(path)
    if real in seen:
        raise ConfigError(f"circular include: {path}")
    seen.add(real)
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    includes = data.get("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged = {}
    for inc in includes:
        inc_path = os.path.join(os.path.dirname(path), inc)
        merged = _deep_merge(merged, _load_yaml_with_includes(inc_path, seen))
    return _deep_merge(merged, data)


def _deep_merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if k == "include":
            continue
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out
