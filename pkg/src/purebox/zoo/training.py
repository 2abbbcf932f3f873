from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from purebox.corpus.dataset import LabeledSet
from purebox.errors import DataMismatch, DivergedTraining, EmptySplit
from purebox.zoo.archs import ArchSpec, build_model
from purebox.zoo.handle import ClassifierHandle, TrainConfig, lr_at
from purebox.zoo.pgd import pgd

log = logging.getLogger(__name__)

BatchTransform = Callable[[torch.nn.Module, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class TrainData:
    train: LabeledSet
    val: LabeledSet
    class_map: list[str]


def set_deterministic(threads: int | None = 1) -> None:
    torch.use_deterministic_algorithms(True, warn_only=True)
    if threads:
        torch.set_num_threads(threads)


def best_epoch(val_accuracies: Sequence[float]) -> int:
    """0-based index of the first epoch reaching the maximum validation accuracy."""
    return int(np.argmax(np.asarray(val_accuracies)))


def _augment(x: torch.Tensor, gen: torch.Generator, pad: int = 2) -> torch.Tensor:
    n, _, h, w = x.shape
    flip = torch.rand(n, generator=gen) < 0.5
    x = torch.where(flip[:, None, None, None], x.flip(-1), x)
    padded = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    dx = torch.randint(0, 2 * pad + 1, (n,), generator=gen)
    dy = torch.randint(0, 2 * pad + 1, (n,), generator=gen)
    return torch.stack([padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w] for i in range(n)])


def _accuracy(model, data: LabeledSet, batch_size: int = 256) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            correct += int((model(data.images[i:i + batch_size]).argmax(-1) == data.labels[i:i + batch_size]).sum())
    return correct / len(data)


def _make_optimizer(model, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.initial_lr, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.initial_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)


def train_classifier(arch: ArchSpec, data: TrainData, cfg: TrainConfig, *,
                     batch_transform: BatchTransform | None = None,
                     init_state: dict | None = None, robust: bool = False, keep: str = "best") -> ClassifierHandle:
    """Train with a step LR schedule and keep the weights of the best validation epoch.

    ``keep="last"`` returns the final weights instead (plain fine-tuning); the
    per-epoch validation accuracy is recorded either way.
    """
    if keep not in ("best", "last"):
        raise ValueError(f"keep must be 'best' or 'last', not {keep!r}")
    if len(data.train) == 0:
        raise EmptySplit("training split is empty")
    if len(data.val) == 0:
        raise EmptySplit("validation split is empty")
    if len(data.class_map) != arch.num_classes:
        raise DataMismatch(f"class_map has {len(data.class_map)} classes, arch expects {arch.num_classes}")
    top = int(max(data.train.labels.max(), data.val.labels.max()))
    if top >= arch.num_classes or int(min(data.train.labels.min(), data.val.labels.min())) < 0:
        raise DataMismatch(f"labels outside 0..{arch.num_classes - 1}")

    torch.manual_seed(cfg.seed)
    model = build_model(arch)
    if init_state is not None:
        model.load_state_dict(init_state)
    opt = _make_optimizer(model, cfg)
    gen = torch.Generator().manual_seed(cfg.seed)

    record: list[dict] = []
    best_acc, best_state, best_idx = -1.0, None, None
    n = len(data.train)
    for epoch in range(cfg.max_epochs):
        lr = lr_at(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        order = torch.randperm(n, generator=gen)
        total, seen = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            x, y = data.train.images[idx], data.train.labels[idx]
            if cfg.augment:
                x = _augment(x, gen)
            if batch_transform is not None:
                model.eval()
                x = batch_transform(model, x, y)
            model.train()
            loss = F.cross_entropy(model(x), y)
            if not torch.isfinite(loss):
                record.append({"epoch": epoch, "train_loss": float("nan"), "val_accuracy": float("nan"),
                               "learning_rate": lr})
                raise DivergedTraining(f"non-finite loss at epoch {epoch}", record)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        val_acc = _accuracy(model, data.val)
        record.append({"epoch": epoch, "train_loss": total / seen, "val_accuracy": val_acc, "learning_rate": lr})
        log.debug("%s epoch %d loss %.4f val %.4f", arch.family, epoch, total / seen, val_acc)
        if val_acc > best_acc or keep == "last":
            best_acc, best_idx = val_acc, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    return ClassifierHandle(
        arch=arch,
        model=model,
        class_map=list(data.class_map),
        training_record=record,
        train_config=cfg,
        robust=robust,
        input_shape=tuple(data.train.images.shape[1:]),
        best_epoch=best_idx,
    )


def adversarial_train(arch: ArchSpec, data: TrainData, cfg: TrainConfig, eps: float,
                      pgd_steps: int = 7, pgd_step_size: float | None = None) -> ClassifierHandle:
    """Madry-style training: each batch is swapped for its untargeted PGD counterpart."""
    if not 0 <= eps < 1:
        raise ValueError("eps must lie in [0, 1)")
    if pgd_steps < 1:
        raise ValueError("pgd_steps must be >= 1")
    step = eps / 4 if pgd_step_size is None else pgd_step_size
    gen = torch.Generator().manual_seed(cfg.seed + 1)

    def attack(model, x, y):
        return pgd(model, x, y, eps, pgd_steps, step, random_start=True, generator=gen)

    return train_classifier(arch, data, cfg, batch_transform=attack, robust=True)


def evaluate_accuracy(model: ClassifierHandle, split: LabeledSet, perturbation=None) -> float:
    """Top-1 accuracy, optionally after adding a universal perturbation."""
    if len(split) == 0:
        raise EmptySplit("evaluation split is empty")
    images = split.images
    if perturbation is not None:
        from purebox.genattack.perturbation import apply_perturbation_batch

        images = apply_perturbation_batch(images, perturbation)
    return int((model.predict(images) == split.labels).sum()) / len(split)


