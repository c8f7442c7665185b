"""Single-image super-resolution with an undecimated wavelet hierarchy,
a shared per-image diffusion denoiser, and LR-consistent coarse-to-fine
sampling."""

import os as _os

# Honour the thread-count env var before numpy initialises its BLAS pools.
# Effective only when this package is imported before numpy (e.g. via the
# console script); harmless otherwise.
if "WAVESR_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["WAVESR_THREADS"])

from .image import (  # noqa: E402
    DegradationModel, bicubic_resample, degrade, degrade_adjoint,
    load_image, save_image,
)
from .wavelet import (  # noqa: E402
    AtrousPyramid, WaveletConfig, atrous_decompose, dilated_b3_kernel,
    partial_targets, reconstruct,
)
from .diffusion import (  # noqa: E402
    NoiseSchedule, build_schedule, forward_noise, reverse_mean, reverse_step,
)
from .denoiser import (  # noqa: E402
    AdamState, DenoiserInput, DenoiserModel, NetConfig, adam_step,
    init_model, load_checkpoint, loss_and_grad, predict_noise, save_checkpoint,
)
from .pipeline import (  # noqa: E402
    SampleResult, SamplerConfig, TrainConfig, evaluate, lr_consistency_step,
    lr_loss, operator_norm, sample, train,
)
from .metrics import psnr, ssim  # noqa: E402

__version__ = "0.1.0"
