"""Adversarial-robustness toolkit for tiny image-to-image models."""

__version__ = "0.1.0"

from .attacks import (  # noqa: E402
    ATTACKS,
    AttackBudget,
    attack_fda,
    attack_frequency,
    attack_ifgsm,
    attack_random_uniform,
    attack_universal,
    run_attack,
    transfer_grid,
)
from .frequency import FrequencyMask, dct2, idct2, jpeg_like  # noqa: E402
from .metrics import psnr, ssim, vulnerability_index  # noqa: E402
from .models import ImageToImageModel, Task, build_model, load_weights, save_weights, train  # noqa: E402

__all__ = [
    "__version__", "ATTACKS", "AttackBudget", "attack_fda", "attack_frequency", "attack_ifgsm",
    "attack_random_uniform", "attack_universal", "run_attack", "transfer_grid", "FrequencyMask",
    "dct2", "idct2", "jpeg_like", "psnr", "ssim", "vulnerability_index", "ImageToImageModel",
    "Task", "build_model", "load_weights", "save_weights", "train",
]
