from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from purebox._num import float32_floor, project_linf
from purebox.corpus.dataset import ImageSample
from purebox.errors import ShapeMismatch
from purebox.genattack.generator import GeneratorHandle
from purebox.genattack.noise import NoiseMode, sample_noise


@dataclass
class Perturbation:
    delta: np.ndarray  # (3, H, W) float32
    budget: float
    generator_ref: str = ""
    noise_seed: int = 0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float32)
        if self.delta.ndim != 3 or self.delta.shape[0] != 3:
            raise ShapeMismatch(f"delta must be (3, H, W), got {self.delta.shape}")

    @property
    def shape(self):
        return self.delta.shape

    @classmethod
    def zeros(cls, shape, budget: float = 0.0) -> "Perturbation":
        return cls(np.zeros(shape, dtype=np.float32), budget)

    def save(self, path: str | Path) -> Path:
        """Raw little-endian float32 payload at ``path`` plus ``path.json`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.delta.astype("<f4").tobytes())
        sidecar = {"shape": list(self.delta.shape), "budget": self.budget, "noise_seed": self.noise_seed,
                   "generator_ref": self.generator_ref}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Perturbation":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        delta = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"]).astype(np.float32)
        return cls(delta, meta["budget"], meta["generator_ref"], meta["noise_seed"])


def _bounded_delta(raw: torch.Tensor, budget: float) -> np.ndarray:
    limit = float32_floor(budget)
    return np.clip((budget * raw).numpy().astype(np.float32), -limit, limit)


def generate_perturbation(gen: GeneratorHandle, mode: NoiseMode, budget: float, seed: int) -> Perturbation:
    if gen.train_budget is not None and not np.isclose(budget, gen.train_budget):
        warnings.warn(f"emitting at budget {budget:.5f} but the generator was trained at {gen.train_budget:.5f}",
                      stacklevel=2)
    z = torch.from_numpy(sample_noise(mode, seed))[None]
    gen.net.eval()
    with torch.no_grad():
        raw = gen.net(z)[0]
    return Perturbation(_bounded_delta(raw, budget), budget, gen.run_id, seed)


def generate_perturbations(gen: GeneratorHandle, mode: NoiseMode, budget: float, n: int,
                           base_seed: int = 0) -> list[Perturbation]:
    return [generate_perturbation(gen, mode, budget, base_seed + i) for i in range(n)]


def apply_perturbation(x: ImageSample, p: Perturbation) -> ImageSample:
    """clip(x + delta, 0, 1) with the l-inf distance to x held at or below the budget."""
    if x.pixels.shape != p.delta.shape:
        raise ShapeMismatch(f"image {x.pixels.shape} vs perturbation {p.delta.shape}")
    pixels = torch.from_numpy(np.asarray(x.pixels, dtype=np.float32))
    out = project_linf(pixels + torch.from_numpy(p.delta), pixels, max(p.budget, 0.0))
    return ImageSample(out.numpy(), x.label, x.manifest_ref)


def apply_perturbation_batch(images: torch.Tensor, p: Perturbation) -> torch.Tensor:
    if tuple(images.shape[1:]) != p.delta.shape:
        raise ShapeMismatch(f"images {tuple(images.shape[1:])} vs perturbation {p.delta.shape}")
    return project_linf(images + torch.from_numpy(p.delta)[None], images, max(p.budget, 0.0))
