from __future__ import annotations

import logging
from typing import Sequence

import torch
import torch.nn.functional as F

from purebox.corpus.dataset import LabeledSet
from purebox.errors import DivergedTraining, EnsembleMismatch, MissingFrozenNoise
from purebox.genattack.generator import GeneratorHandle
from purebox.genattack.noise import NoiseMode
from purebox.zoo.handle import ClassifierHandle

log = logging.getLogger(__name__)

DEFAULT_LR = 2e-4


def _check_ensemble(ensemble: Sequence[ClassifierHandle], images: torch.Tensor) -> None:
    if not ensemble:
        raise EnsembleMismatch("ensemble is empty")
    shapes = {m.input_shape for m in ensemble if m.input_shape is not None}
    if len(shapes) > 1:
        raise EnsembleMismatch(f"ensemble members disagree on input shape: {sorted(shapes)}")
    if shapes and tuple(images.shape[1:]) != shapes.pop():
        raise EnsembleMismatch(f"dataset images {tuple(images.shape[1:])} do not match the ensemble input shape")


def fooling_loss(gen: GeneratorHandle, ensemble: Sequence[ClassifierHandle], images: torch.Tensor,
                 clean_preds: Sequence[torch.Tensor], z: torch.Tensor, budget: float) -> torch.Tensor:
    """Negative cross-entropy of perturbed images against each member's clean prediction.

    ``z`` holds k noise images; the batch is cut into k chunks and chunk i
    shares the single perturbation made from ``z[i]``.
    """
    delta = budget * gen.net(z)
    k = len(z)
    owner = torch.arange(len(images)) * k // len(images)
    adv = torch.clamp(images + delta[owner], 0.0, 1.0)
    losses = [F.cross_entropy(m.model(adv), y) for m, y in zip(ensemble, clean_preds)]
    return -torch.stack(losses).mean()


def _draw_noise(mode: NoiseMode, k: int, shape, gen: torch.Generator) -> torch.Tensor:
    if mode.kind == "fixed":
        if mode.frozen_noise is None:
            raise MissingFrozenNoise("fixed noise mode requires frozen_noise")
        return torch.from_numpy(mode.frozen_noise)[None].expand(k, *mode.frozen_noise.shape).contiguous()
    return mode.sigma * torch.randn((k, *shape), generator=gen)


def train_generator(gen: GeneratorHandle, ensemble: Sequence[ClassifierHandle], dataset: LabeledSet,
                    mode: NoiseMode, budget: float, iters: int, seed: int, *, batch_size: int = 32,
                    noise_per_step: int = 1, lr: float = DEFAULT_LR) -> GeneratorHandle:
    """Fit the generator so its perturbations raise the ensemble's loss on ``dataset``.

    Only the generator is updated; ensemble members stay frozen in eval mode.
    """
    images = dataset.images
    _check_ensemble(ensemble, images)
    if not 0 < budget < 1:
        raise ValueError("budget must lie in (0, 1)")
    if mode.kind == "fixed" and mode.frozen_noise is None:
        raise MissingFrozenNoise("fixed noise mode requires frozen_noise")
    if mode.frozen_noise is not None and tuple(mode.frozen_noise.shape) != tuple(images.shape[1:]):
        raise EnsembleMismatch("frozen noise shape does not match the image shape")
    if iters <= 0:
        return gen

    for m in ensemble:
        m.model.eval()
    clean = [m.predict(images) for m in ensemble]
    params = [p for p in gen.net.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=lr, betas=(0.5, 0.999))
    rng = torch.Generator().manual_seed(seed)
    n = len(images)
    k = max(1, min(noise_per_step, batch_size))
    gen.net.train()
    for it in range(iters):
        idx = torch.randint(0, n, (min(batch_size, n),), generator=rng)
        z = _draw_noise(mode, k, images.shape[1:], rng)
        loss = fooling_loss(gen, ensemble, images[idx], [c[idx] for c in clean], z, budget)
        if not torch.isfinite(loss):
            raise DivergedTraining(f"non-finite fooling loss at iteration {it}", list(gen.loss_trace))
        grads = torch.autograd.grad(loss, params)
        for p, g in zip(params, grads):
            p.grad = g
        opt.step()
        gen.loss_trace.append(loss.item())
        if it % 100 == 0:
            log.debug("generator iter %d loss %.4f", it, gen.loss_trace[-1])
    gen.net.eval()
    gen.train_budget = budget
    gen.noise_kind = mode.kind
    gen.iterations += iters
    return gen
