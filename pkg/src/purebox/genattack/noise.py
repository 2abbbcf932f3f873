from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from purebox.errors import MissingFrozenNoise

DEFAULT_SIGMA = 0.1


@dataclass
class NoiseMode:
    """Generator input noise: one frozen image (``fixed``) or fresh Gaussian draws (``distributional``)."""

    kind: str
    sigma: float = DEFAULT_SIGMA
    frozen_noise: np.ndarray | None = None
    shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "distributional"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.frozen_noise is not None:
            self.frozen_noise = np.asarray(self.frozen_noise, dtype=np.float32)
            if self.frozen_noise.ndim != 3 or self.frozen_noise.shape[0] != 3:
                raise ValueError("frozen_noise must have shape (3, H, W)")
            if self.shape is None:
                self.shape = tuple(self.frozen_noise.shape)
            elif tuple(self.shape) != self.frozen_noise.shape:
                raise ValueError("frozen_noise shape disagrees with shape")
        if self.shape is not None:
            self.shape = tuple(int(s) for s in self.shape)

    @classmethod
    def distributional(cls, shape, sigma: float = DEFAULT_SIGMA) -> "NoiseMode":
        return cls("distributional", sigma=sigma, shape=tuple(shape))

    @classmethod
    def fixed(cls, shape, seed: int = 0, sigma: float = DEFAULT_SIGMA) -> "NoiseMode":
        """Freeze one Gaussian draw as the generator's only input."""
        frozen = np.random.default_rng(seed).normal(0.0, sigma, size=tuple(shape)).astype(np.float32)
        return cls("fixed", sigma=sigma, frozen_noise=frozen)


def sample_noise(mode: NoiseMode, seed: int, shape=None) -> np.ndarray:
    if mode.kind == "fixed":
        if mode.frozen_noise is None:
            raise MissingFrozenNoise("fixed noise mode requires frozen_noise")
        return mode.frozen_noise.copy()
    shape = tuple(shape or mode.shape or ())
    if len(shape) != 3:
        raise ValueError("distributional sampling needs a (3, H, W) shape")
    return np.random.default_rng(seed).normal(0.0, mode.sigma, size=shape).astype(np.float32)
