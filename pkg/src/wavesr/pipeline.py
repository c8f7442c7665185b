"""Per-image trainer and the coarse-to-fine parent-conditioned sampler.

Training draws (scale, timestep, noise) triples, forward-noises aligned
patch pairs from the partial-reconstruction targets, and fits the shared
noise predictor with Adam.  Sampling runs the reverse process scale by
scale: each scale is seeded with the previous scale's final estimate,
each reverse step is followed by a gradient correction toward agreement
of the degraded iterate with the observed LR image, and the full state
trajectory of a scale is recorded so the next scale can consume it as its
time-aligned parent stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .denoiser import (
    AdamState, DenoiserInput, DenoiserModel, NetConfig,
    adam_step, init_model, loss_and_grad, predict_noise,
)
from .diffusion import NoiseSchedule, build_schedule, forward_noise, reverse_step
from .errors import NumericError, TrainingDiverged
from .image import DegradationModel, bicubic_resample, degrade, degrade_adjoint, validate_image
from .metrics import psnr, ssim
from .wavelet import WaveletConfig, atrous_decompose, partial_targets

PARENT_MODES = ("time-aligned", "misaligned-prev-t", "coarse-final", "none")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 120_000
    batch: int = 16
    patch: int = 48
    lr: float = 1e-3
    lr_decay: float = 0.5
    lr_milestones: tuple = (0.5, 0.8)  # fractions of total iterations
    shared_eps: bool = True            # couple child/parent forward noise

    def __post_init__(self):
        if self.iterations < 1 or self.batch < 1 or self.patch < 1:
            raise ValueError("iterations, batch and patch must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass(frozen=True)
class SamplerConfig:
    levels: int = 6
    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    omega: float = 0.3
    detail_gain: float = 0.8
    eta: float = 0.3
    parent_mode: str = "time-aligned"
    sigma_mode: str = "posterior"

    def __post_init__(self):
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.parent_mode not in PARENT_MODES:
            raise ValueError(f"parent_mode must be one of {PARENT_MODES}")

    def schedule(self) -> NoiseSchedule:
        return build_schedule(self.timesteps, self.beta_start, self.beta_end,
                              self.omega, self.sigma_mode)


# ---------------------------------------------------------------------------
# LR-consistency.

def lr_loss(x, y, model: DegradationModel) -> float:
    """Sum of squared residuals between D(x) and the LR observation."""
    r = degrade(x, model) - validate_image(y)
    return float(np.sum(r * r))


def lr_consistency_step(x, y, model: DegradationModel, eta: float):
    """Gradient step x - eta * grad ||D(x) - y||^2, via the exact adjoint."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if eta == 0:
        return x
    r = degrade(x, model) - validate_image(y)
    grad = 2.0 * degrade_adjoint(r, model, x.shape[0], x.shape[1])
    return x - eta * grad


def operator_norm(model: DegradationModel, hr_h: int, hr_w: int, channels: int = 1,
                  iters: int = 50, seed: int = 0) -> float:
    """Power-iteration estimate of ||D||_op on the given HR grid."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((hr_h, hr_w, channels))
    lam = 0.0
    for _ in range(iters):
        z = degrade_adjoint(degrade(x, model), model, hr_h, hr_w)
        lam = float(np.sqrt(np.sum(z * z)) / np.sqrt(np.sum(x * x)))
        x = z / np.sqrt(np.sum(z * z))
    return float(np.sqrt(lam))


# ---------------------------------------------------------------------------
# Targets and training.

def build_reference(y, model: DegradationModel) -> np.ndarray:
    h, w = model.hr_shape(y.shape[0], y.shape[1])
    return bicubic_resample(y, h, w)


def build_targets(x_ref, levels: int, detail_gain: float, boundary: str = "mirror"):
    """Clean diffusion targets per scale; levels = 0 means no decomposition."""
    if levels == 0:
        return [validate_image(x_ref)]
    pyramid = atrous_decompose(x_ref, WaveletConfig(levels=levels, detail_gain=detail_gain,
                                                    boundary=boundary))
    return partial_targets(pyramid, detail_gain)


def _check_compat(net_cfg: NetConfig, sampler_cfg: SamplerConfig):
    if net_cfg.levels != sampler_cfg.levels:
        raise ValueError(
            f"network built for {net_cfg.levels} levels but sampler configured "
            f"for {sampler_cfg.levels}")
    if net_cfg.timesteps != sampler_cfg.timesteps:
        raise ValueError(
            f"network built for {net_cfg.timesteps} timesteps but sampler configured "
            f"for {sampler_cfg.timesteps}")


def train(y, degradation: DegradationModel, sampler_cfg: SamplerConfig,
          train_cfg: TrainConfig, net_cfg: NetConfig, rng, callback=None):
    """Fit the noise predictor on targets derived from the LR input itself.

    Returns (model, losses). Raises TrainingDiverged (carrying the last
    finite model) if the loss leaves the finite range.
    """
    y = validate_image(y)
    _check_compat(net_cfg, sampler_cfg)
    if net_cfg.in_channels != y.shape[2]:
        raise ValueError(f"network expects {net_cfg.in_channels} channels, image has {y.shape[2]}")
    x_ref = build_reference(y, degradation)
    targets = build_targets(x_ref, sampler_cfg.levels, sampler_cfg.detail_gain)
    sched = sampler_cfg.schedule()
    model = init_model(net_cfg, rng)
    states = [AdamState() for _ in model.params_sets]
    h, w = x_ref.shape[:2]
    patch = min(train_cfg.patch, h, w)
    milestones = [int(frac * train_cfg.iterations) for frac in train_cfg.lr_milestones]
    zero_parent = sampler_cfg.parent_mode == "none"
    losses = []
    for it in range(train_cfg.iterations):
        lr = train_cfg.lr * train_cfg.lr_decay ** sum(it >= m for m in milestones)
        s = int(rng.integers(0, sampler_cfg.levels + 1))
        t = int(rng.integers(1, sampler_cfg.timesteps + 1))
        batch = []
        for _ in range(train_cfg.batch):
            i0 = int(rng.integers(0, h - patch + 1))
            j0 = int(rng.integers(0, w - patch + 1))
            child0 = targets[s][i0:i0 + patch, j0:j0 + patch]
            eps = rng.standard_normal(child0.shape)
            x_t = forward_noise(child0, t, eps, sched)
            if s == 0:
                parent_t = None
            elif zero_parent:
                parent_t = np.zeros_like(child0)
            else:
                parent0 = targets[s - 1][i0:i0 + patch, j0:j0 + patch]
                eps_p = eps if train_cfg.shared_eps else rng.standard_normal(child0.shape)
                parent_t = forward_noise(parent0, t, eps_p, sched)
            batch.append((DenoiserInput(x_t, parent_t, t, s), eps))
        idx = 0 if net_cfg.shared else s
        loss, grads = loss_and_grad(batch, model.params_sets[idx], net_cfg)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite at iteration {it}", params=model)
        model.params_sets[idx], states[idx] = adam_step(
            model.params_sets[idx], grads, states[idx], lr)
        losses.append(loss)
        if callback is not None:
            callback(it, loss)
    return model, losses


# ---------------------------------------------------------------------------
# Sampling.

@dataclass
class SampleResult:
    image: np.ndarray
    manifest: list = field(default_factory=list)


def _state_hash(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _select_parent(mode: str, t: int, traj: dict, final: np.ndarray, shape):
    if mode == "none":
        return np.zeros(shape)
    if mode == "time-aligned":
        return traj[t]
    if mode == "misaligned-prev-t":
        return traj[max(t - 1, 1)]
    return final  # coarse-final


def sample(y, model: DenoiserModel, sampler_cfg: SamplerConfig,
           degradation: DegradationModel, rng, record: bool = False) -> SampleResult:
    """Coarse-to-fine reverse diffusion with per-step LR-consistency correction."""
    y = validate_image(y)
    _check_compat(model.cfg, sampler_cfg)
    if model.cfg.in_channels != y.shape[2]:
        raise ValueError(f"checkpoint expects {model.cfg.in_channels} channels, image has {y.shape[2]}")
    sched = sampler_cfg.schedule()
    big_t = sampler_cfg.timesteps
    h, w = degradation.hr_shape(y.shape[0], y.shape[1])
    shape = (h, w, y.shape[2])
    needs_traj = sampler_cfg.parent_mode in ("time-aligned", "misaligned-prev-t")
    manifest = []

    x = rng.standard_normal(shape)
    prev_traj = None
    prev_hat = None
    for s in range(sampler_cfg.levels + 1):
        if s > 0:
            x = prev_hat
        traj = {big_t: x}
        if record:
            manifest.append({"scale": s, "t": big_t, "kind": "state", "hash": _state_hash(x)})
        params = model.params_for(s)
        for t in range(big_t, 0, -1):
            if s == 0:
                parent = None
            else:
                parent = _select_parent(sampler_cfg.parent_mode, t, prev_traj, prev_hat, shape)
                if record:
                    manifest.append({"scale": s, "t": t, "kind": "parent",
                                     "hash": _state_hash(parent)})
            eps_hat = predict_noise(DenoiserInput(x, parent, t, s), params, model.cfg)
            x = reverse_step(x, eps_hat, t, sched, rng)
            # checked before the consistency step, whose operator application
            # would otherwise reject non-finite input with a generic error
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite state at scale {s}, timestep {t}")
            x = lr_consistency_step(x, y, degradation, sampler_cfg.eta)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite state at scale {s}, timestep {t}")
            traj[t - 1] = x
            if record:
                manifest.append({"scale": s, "t": t - 1, "kind": "state", "hash": _state_hash(x)})
        prev_hat = traj[0]
        prev_traj = traj if (needs_traj or record) else None
    return SampleResult(image=np.clip(prev_hat, 0.0, 1.0), manifest=manifest)


def write_trajectory_manifest(manifest, path) -> None:
    with open(path, "w") as fh:
        for entry in manifest:
            fh.write(f"{entry['scale']}\t{entry['t']}\t{entry['kind']}\t{entry['hash']}\n")


def evaluate(x_hat, x_gt, y_channel: bool = False, crop_border: int = 0):
    """(PSNR dB, SSIM) of the estimate against ground truth."""
    return (psnr(x_hat, x_gt, y_channel=y_channel, crop_border=crop_border),
            ssim(x_hat, x_gt, y_channel=y_channel, crop_border=crop_border))
