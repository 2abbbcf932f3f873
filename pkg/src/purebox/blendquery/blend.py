from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch

from purebox.corpus.dataset import ImageSample
from purebox.errors import AlphaOutOfRange, InvalidTarget, NotRobustModel, ShapeMismatch
from purebox.zoo.handle import ClassifierHandle
from purebox.zoo.pgd import pgd

ROBUST_EPS0 = 15 / 255


@dataclass(frozen=True)
class BlendConfig:
    method: str = "robust"
    eps0: float | None = None  # None: 15/255 for robust, 1.0 (full mix) for naive
    max_recursions: int = 6
    norm_tolerance: float = 0.05
    pgd_steps: int = 40
    pgd_step_size: float | None = None  # None: eps / 10
    early_exit: bool = False

    def __post_init__(self):
        if self.method not in ("naive", "robust"):
            raise ValueError(f"unknown blend method {self.method!r}")
        if not 0 < self.search_range <= 1:
            raise ValueError("eps0 must lie in (0, 1]")
        if self.max_recursions < 1:
            raise ValueError("max_recursions must be >= 1")
        if not 0 < self.norm_tolerance < 1:
            raise ValueError("norm_tolerance must lie in (0, 1)")
        if self.pgd_steps < 0:
            raise ValueError("pgd_steps must be >= 0")

    @property
    def search_range(self) -> float:
        if self.eps0 is not None:
            return self.eps0
        return ROBUST_EPS0 if self.method == "robust" else 1.0

    def step_size(self, eps: float) -> float:
        return eps / 10 if self.pgd_step_size is None else self.pgd_step_size

    def to_dict(self):
        return asdict(self)


def naive_blend(x1: ImageSample, x2: ImageSample, alpha: float) -> ImageSample:
    """max(0, min(alpha * x1 + (1 - alpha) * x2, 1)); keeps x1's label and ref."""
    if x1.pixels.shape != x2.pixels.shape:
        raise ShapeMismatch(f"{x1.pixels.shape} vs {x2.pixels.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha={alpha} outside [0, 1]")
    mixed = alpha * x1.pixels + (1.0 - alpha) * x2.pixels
    return ImageSample(np.clip(mixed, 0.0, 1.0).astype(x1.pixels.dtype, copy=False), x1.label, x1.manifest_ref)


def robust_blend(robust_model: ClassifierHandle, x: ImageSample, target_label: int, eps: float,
                 cfg: BlendConfig = BlendConfig(), check: bool = False) -> ImageSample:
    """Targeted PGD from zero init toward ``target_label`` inside the eps-ball around ``x``."""
    if not 0 <= target_label < robust_model.num_classes:
        raise InvalidTarget(f"target {target_label} outside 0..{robust_model.num_classes - 1}")
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    if not robust_model.robust:
        warnings.warn("blending with a non-robust model; blends will look less natural", NotRobustModel,
                      stacklevel=2)
    if eps == 0 or cfg.pgd_steps == 0:
        return ImageSample(x.pixels.copy(), x.label, x.manifest_ref)
    robust_model.model.eval()
    xt = torch.from_numpy(np.asarray(x.pixels, dtype=np.float32))[None]
    out = pgd(robust_model.model, xt, torch.tensor([target_label]), eps, cfg.pgd_steps, cfg.step_size(eps),
              targeted=True, check=check)
    return ImageSample(out[0].numpy(), x.label, x.manifest_ref)
