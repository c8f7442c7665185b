"""Noise schedule construction and DDPM forward/reverse algebra.

Timesteps are 1-based (t in 1..T); schedule arrays are stored 0-indexed,
so quantities at timestep t live at index t - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_MODES = ("posterior", "beta")


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    omega: float
    sigma_mode: str

    @property
    def timesteps(self) -> int:
        return len(self.beta)


def build_schedule(
    timesteps: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    omega: float = 0.3,
    sigma_mode: str = "posterior",
) -> NoiseSchedule:
    """Linear beta schedule with posterior-scaled reverse noise sigma_t.

    sigma_t = omega * sqrt(beta_tilde_t), beta_tilde_t = beta_t * (1 - abar_{t-1}) / (1 - abar_t)
    with abar_0 := 1, so sigma_1 = 0 and the final reverse step is deterministic.
    sigma_mode="beta" uses sigma_t = omega * sqrt(beta_t) instead (sigma_1 still
    forced to 0 to keep the last step deterministic).
    """
    if timesteps < 1:
        raise ValueError(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if omega < 0:
        raise ValueError(f"omega must be >= 0, got {omega}")
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
    beta = np.linspace(beta_start, beta_end, timesteps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    if sigma_mode == "posterior":
        beta_tilde = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
        sigma = omega * np.sqrt(beta_tilde)
    else:
        sigma = omega * np.sqrt(beta)
        sigma[0] = 0.0
    return NoiseSchedule(
        beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma,
        omega=omega, sigma_mode=sigma_mode,
    )


def _check_t(t: int, sched: NoiseSchedule) -> int:
    if not 1 <= t <= sched.timesteps:
        raise ValueError(f"timestep {t} outside [1, {sched.timesteps}]")
    return t - 1


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    i = _check_t(t, sched)
    if np.shape(eps) != np.shape(x0):
        raise ValueError(f"eps shape {np.shape(eps)} != x0 shape {np.shape(x0)}")
    ab = sched.alpha_bar[i]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_mean(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """(x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)."""
    i = _check_t(t, sched)
    if np.shape(eps_hat) != np.shape(x_t):
        raise ValueError(f"eps_hat shape {np.shape(eps_hat)} != x_t shape {np.shape(x_t)}")
    coeff = (1.0 - sched.alpha[i]) / np.sqrt(1.0 - sched.alpha_bar[i])
    return (x_t - coeff * eps_hat) / np.sqrt(sched.alpha[i])


def reverse_step(x_t, eps_hat, t: int, sched: NoiseSchedule, rng) -> np.ndarray:
    """One ancestral step: reverse mean plus sigma_t * z.

    The rng is consumed only when sigma_t > 0, so omega = 0 sampling is a
    deterministic function of its inputs.
    """
    i = _check_t(t, sched)
    mu = reverse_mean(x_t, eps_hat, t, sched)
    if sched.sigma[i] > 0:
        mu = mu + sched.sigma[i] * rng.standard_normal(mu.shape)
    return mu
