from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from purebox.zoo.archs import ArchSpec, build_model


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 5e-4
    decay_factor: float = 10.0
    decay_period_epochs: int = 30
    max_epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: bool = False

    def __post_init__(self):
        for name in ("initial_lr", "decay_period_epochs", "max_epochs", "batch_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.decay_factor > 1:
            raise ValueError("decay_factor must exceed 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self):
        return asdict(self)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule; ``epoch`` is the 0-based epoch index."""
    return cfg.initial_lr / cfg.decay_factor ** (epoch // cfg.decay_period_epochs)


@dataclass
class ClassifierHandle:
    """A trained classifier plus everything needed to reload and audit it."""

    arch: ArchSpec
    model: nn.Module
    class_map: list[str]
    training_record: list[dict] = field(default_factory=list)
    train_config: TrainConfig | None = None
    robust: bool = False
    input_shape: tuple[int, int, int] | None = None
    best_epoch: int | None = None
    run_id: str = ""

    def __post_init__(self):
        if len(self.class_map) != self.arch.num_classes:
            raise ValueError("class_map length must equal num_classes")
        self.model.eval()

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def best_val_accuracy(self) -> float | None:
        if self.best_epoch is None:
            return None
        return self.training_record[self.best_epoch]["val_accuracy"]

    def logits(self, x, batch_size: int = 256) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=torch.float32)
        single = x.ndim == 3
        if single:
            x = x[None]
        self.model.eval()
        with torch.no_grad():
            out = torch.cat([self.model(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]) if len(x) \
                else torch.zeros(0, self.num_classes)
        return out[0] if single else out

    def predict(self, x, batch_size: int = 256) -> torch.Tensor:
        return self.logits(x, batch_size).argmax(-1)

    def input_gradient(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Gradient of the summed cross-entropy with respect to the input batch."""
        self.model.eval()
        x = x.detach().clone().requires_grad_(True)
        loss = F.cross_entropy(self.model(x), y, reduction="sum")
        (grad,) = torch.autograd.grad(loss, x)
        return grad

    def freeze(self) -> "ClassifierHandle":
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        return self

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.model.state_dict(), directory / "model.bin")
        meta = {
            "arch": self.arch.to_dict(),
            "train_config": self.train_config.to_dict() if self.train_config else None,
            "class_map": self.class_map,
            "training_record": self.training_record,
            "robust": self.robust,
            "input_shape": list(self.input_shape) if self.input_shape else None,
            "best_epoch": self.best_epoch,
            "run_id": self.run_id,
        }
        (directory / "record.json").write_text(json.dumps(meta, indent=1))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "ClassifierHandle":
        directory = Path(directory)
        meta = json.loads((directory / "record.json").read_text())
        arch = ArchSpec(**meta["arch"])
        model = build_model(arch)
        model.load_state_dict(torch.load(directory / "model.bin", weights_only=True))
        return cls(
            arch=arch,
            model=model,
            class_map=meta["class_map"],
            training_record=meta["training_record"],
            train_config=TrainConfig(**meta["train_config"]) if meta["train_config"] else None,
            robust=meta["robust"],
            input_shape=tuple(meta["input_shape"]) if meta["input_shape"] else None,
            best_epoch=meta["best_epoch"],
            run_id=meta.get("run_id", ""),
        )


def accuracy_counts(handle: ClassifierHandle, images: torch.Tensor, labels: torch.Tensor) -> int:
    return int((handle.predict(images) == labels).sum())


