"""Inspect the degradation operator and the diffusion noise schedule.

Shows the exact adjoint identity that the LR-consistency gradient relies
on, the descent property of a consistency step, and the shape of the
linear beta schedule.
"""

import numpy as np

from wavesr.diffusion import build_schedule, forward_noise
from wavesr.image import DegradationModel, degrade, degrade_adjoint
from wavesr.pipeline import lr_consistency_step, lr_loss, operator_norm
from wavesr.synthetic import make_test_image

# --- degradation operator -------------------------------------------------
model = DegradationModel(scale_factor=3.15, mode="bicubic")
x = make_test_image(126, 126, 1)
y = degrade(x, model)
print("HR", x.shape[:2], "->", "LR", y.shape[:2], f"(factor {model.scale_factor})")

rng = np.random.default_rng(0)
r = rng.standard_normal(y.shape)
lhs = float(np.sum(degrade(x, model) * r))
rhs = float(np.sum(x * degrade_adjoint(r, model, 126, 126)))
print(f"adjoint identity <Dx, r> = <x, D'r>: {lhs:.12f} = {rhs:.12f}")

norm = operator_norm(model, 126, 126)
eta = 0.9 / norm ** 2
x0 = rng.uniform(size=(126, 126, 1))
before = lr_loss(x0, y, model)
after = lr_loss(lr_consistency_step(x0, y, model, eta), y, model)
print(f"operator norm {norm:.4f}; one consistency step: loss {before:.4f} -> {after:.4f}")

# --- noise schedule ---------------------------------------------------------
sched = build_schedule(timesteps=25, omega=0.3)
print("\nschedule (T = 25): beta in "
      f"[{sched.beta[0]:.2e}, {sched.beta[-1]:.2e}], "
      f"alpha_bar from {sched.alpha_bar[0]:.4f} down to {sched.alpha_bar[-1]:.4f}")
print("sigma_1 =", sched.sigma[0], "(final reverse step is deterministic)")

x0 = make_test_image(16, 16, 1)
for t in (1, 12, 25):
    xt = forward_noise(x0, t, np.random.default_rng(1).standard_normal(x0.shape), sched)
    print(f"  t = {t:2d}: signal fraction {np.sqrt(sched.alpha_bar[t - 1]):.3f}, "
          f"noisy range [{xt.min():.2f}, {xt.max():.2f}]")
