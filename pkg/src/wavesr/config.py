"""Run configuration: flat key=value files, overrides, and seed streams.

Config files are flat TOML-style text: one `key = value` per line, `#`
comments, booleans as true/false, lists as comma-separated values.
Unknown keys are hard errors.  Precedence: command-line overrides > file >
defaults.  Defaults follow the reference experimental protocol
(levels=6, timesteps=100, lr=1e-3, batch=16, omega=0.3, detail_gain=0.8,
eta=0.3).

All randomness in a run flows from one 64-bit seed, split into three named
streams via numpy SeedSequence spawn keys: 0 = train, 1 = sampler,
2 = noise synthesis (for degrading ground truth with noise_sigma > 0).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .denoiser import NetConfig
from .errors import ConfigError
from .image import DegradationModel
from .pipeline import SamplerConfig, TrainConfig

_STREAMS = ("train", "sampler", "noise")


def seed_streams(seed: int) -> dict:
    return {
        name: np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        for i, name in enumerate(_STREAMS)
    }


@dataclass
class RunConfig:
    # paths
    input: str = ""
    output: str = ""
    ground_truth: str = ""
    checkpoint: str = ""
    metrics_csv: str = ""
    dump_subbands: str = ""
    record_trajectory: str = ""
    # reproducibility
    seed: int = 0
    # degradation
    scale_factor: float = 4.0
    degradation_mode: str = "bicubic"
    blur_sigma: float = 1.0
    noise_sigma: float = 0.0
    # wavelet / sampler
    levels: int = 6
    detail_gain: float = 0.8
    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    omega: float = 0.3
    eta: float = 0.3
    parent_mode: str = "time-aligned"
    sigma_mode: str = "posterior"
    # training
    iterations: int = 120_000
    batch: int = 16
    patch: int = 48
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_milestones: tuple = (0.5, 0.8)
    shared_eps: bool = True
    # network
    width: int = 32
    blocks: int = 6
    emb_dim: int = 64
    pad_mode: str = "zero"
    shared: bool = True
    # metrics
    y_channel: bool = False
    crop_border: int = 0

    def degradation(self) -> DegradationModel:
        try:
            return DegradationModel(scale_factor=self.scale_factor, mode=self.degradation_mode,
                                    blur_sigma=self.blur_sigma, noise_sigma=self.noise_sigma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sampler_cfg(self) -> SamplerConfig:
        try:
            return SamplerConfig(levels=self.levels, timesteps=self.timesteps,
                                 beta_start=self.beta_start, beta_end=self.beta_end,
                                 omega=self.omega, detail_gain=self.detail_gain,
                                 eta=self.eta, parent_mode=self.parent_mode,
                                 sigma_mode=self.sigma_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_cfg(self) -> TrainConfig:
        try:
            return TrainConfig(iterations=self.iterations, batch=self.batch, patch=self.patch,
                               lr=self.lr, lr_decay=self.lr_decay,
                               lr_milestones=tuple(self.lr_milestones),
                               shared_eps=self.shared_eps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def net_cfg(self, channels: int) -> NetConfig:
        try:
            return NetConfig(in_channels=channels, width=self.width, blocks=self.blocks,
                             emb_dim=self.emb_dim, levels=self.levels,
                             timesteps=self.timesteps, pad_mode=self.pad_mode,
                             shared=self.shared)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved(self) -> dict:
        d = dataclasses.asdict(self)
        d["lr_milestones"] = list(d["lr_milestones"])
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str, where: str):
    default = _FIELDS[key].default
    ftype = type(default) if default is not dataclasses.MISSING else tuple
    raw = raw.strip().strip('"').strip("'")
    try:
        if ftype is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true/false, got '{raw}'")
            return low == "true"
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for '{key}': {exc}") from exc


def _assign(cfg: RunConfig, key: str, raw: str, where: str):
    if key not in _FIELDS:
        raise ConfigError(f"{where}: unknown config key '{key}'")
    setattr(cfg, key, _coerce(key, raw, where))


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, then overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{line.strip()}'")
            key, raw = stripped.split("=", 1)
            _assign(cfg, key.strip(), raw, f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must be key=value")
        key, raw = item.split("=", 1)
        _assign(cfg, key.strip(), raw, f"--set {item}")
    return cfg


def require(cfg: RunConfig, *keys: str):
    for key in keys:
        if not getattr(cfg, key):
            raise ConfigError(f"missing required config key '{key}'")
