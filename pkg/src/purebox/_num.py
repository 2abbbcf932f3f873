"""Exact l-inf projection helpers.

Float32 rounding in ``x + delta`` can overshoot a radius by half an ulp; the
helpers nudge such elements back so the bound holds in exact arithmetic.
"""
from __future__ import annotations

import numpy as np
import torch


def float32_floor(value: float) -> float:
    """Largest float32 not exceeding ``value``."""
    f = np.float32(value)
    if float(f) > value:
        f = np.nextafter(f, np.float32(-np.inf))
    return float(f)


def project_linf(adv: torch.Tensor, center: torch.Tensor, eps: float) -> torch.Tensor:
    """Project ``adv`` into the l-inf ball of radius ``eps`` around ``center`` and into [0, 1]."""
    radius = float32_floor(eps) if adv.dtype == torch.float32 else eps
    delta = torch.clamp(adv - center, -radius, radius)
    out = torch.clamp(center + delta, 0.0, 1.0)
    over = (out.double() - center.double()).abs() > radius
    if over.any():
        out = torch.where(over, torch.nextafter(out, center), out)
    return out


def project_linf_np(adv: np.ndarray, center: np.ndarray, eps: float) -> np.ndarray:
    return project_linf(torch.from_numpy(np.asarray(adv)), torch.from_numpy(np.asarray(center)), eps).numpy()
