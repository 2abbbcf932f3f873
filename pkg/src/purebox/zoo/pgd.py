from __future__ import annotations

import torch
import torch.nn.functional as F

from purebox._num import project_linf


class BallViolation(AssertionError):
    pass


def _check(adv, x, eps, step):
    if (adv.double() - x.double()).abs().max() > eps or adv.min() < 0 or adv.max() > 1:
        raise BallViolation(f"PGD iterate {step} left the eps-ball or the [0,1] box")


def pgd(model, x: torch.Tensor, y: torch.Tensor, eps: float, steps: int, step_size: float,
        targeted: bool = False, random_start: bool = False, generator: torch.Generator | None = None,
        check: bool = False) -> torch.Tensor:
    """l-inf PGD on cross-entropy.

    Untargeted mode ascends the loss of ``y``; targeted mode descends the loss of
    ``y`` (the target). Every iterate is projected into the eps-ball around
    ``x`` and into [0, 1]. ``check`` asserts containment after each step.
    """
    x = x.detach()
    if eps <= 0 or steps <= 0:
        return x.clone()
    adv = x.clone()
    if random_start:
        noise = torch.rand(x.shape, generator=generator, dtype=x.dtype) * 2 - 1
        adv = project_linf(x + eps * noise, x, eps)
    if check:
        _check(adv, x, eps, 0)
    for step in range(1, steps + 1):
        adv.requires_grad_(True)
        loss = F.cross_entropy(model(adv), y)
        (grad,) = torch.autograd.grad(loss, adv)
        with torch.no_grad():
            direction = -grad.sign() if targeted else grad.sign()
            adv = project_linf(adv + step_size * direction, x, eps)
        if check:
            _check(adv, x, eps, step)
    return adv.detach()
