"""ResNet-style perturbation generators (heavy and light variants)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch
from torch import nn

from purebox.errors import InvalidSpec

DEFAULT_BUDGET = 10 / 255
HEAVY_BASE_FILTERS = 64
HEAVY_RES_BLOCKS = 6


@dataclass(frozen=True)
class GeneratorSpec:
    variant: str = "heavy"
    base_filters: int = HEAVY_BASE_FILTERS
    res_blocks: int = HEAVY_RES_BLOCKS
    norm_budget: float = DEFAULT_BUDGET

    @classmethod
    def heavy(cls, base_filters: int = HEAVY_BASE_FILTERS, res_blocks: int = HEAVY_RES_BLOCKS,
              norm_budget: float = DEFAULT_BUDGET) -> "GeneratorSpec":
        return cls("heavy", base_filters, res_blocks, norm_budget)

    @classmethod
    def light(cls, heavy_base_filters: int = HEAVY_BASE_FILTERS, heavy_res_blocks: int = HEAVY_RES_BLOCKS,
              norm_budget: float = DEFAULT_BUDGET) -> "GeneratorSpec":
        """Half the filters, twice the residual blocks of the matching heavy spec."""
        return cls("light", heavy_base_filters // 2, heavy_res_blocks * 2, norm_budget)

    def light_counterpart(self) -> "GeneratorSpec":
        if self.variant != "heavy":
            raise InvalidSpec("light_counterpart is defined for heavy specs")
        return GeneratorSpec.light(self.base_filters, self.res_blocks, self.norm_budget)

    def validate(self) -> None:
        if self.variant not in ("heavy", "light"):
            raise InvalidSpec(f"unknown variant {self.variant!r}")
        if self.base_filters < 1:
            raise InvalidSpec("base_filters must be >= 1")
        if self.res_blocks < 1:
            raise InvalidSpec("at least one residual block is required")
        if not 0 < self.norm_budget <= 1:
            raise InvalidSpec("norm_budget must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)


class ResnetBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3, bias=False),
            nn.InstanceNorm2d(channels, affine=True), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3, bias=False),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class PerturbationNet(nn.Module):
    """conv x3 (two stride-2) -> residual blocks -> transposed conv x2 -> conv -> tanh."""

    def __init__(self, base_filters: int, res_blocks: int):
        super().__init__()
        f = base_filters

        def norm(c):
            return nn.InstanceNorm2d(c, affine=True)

        layers = [
            nn.ReflectionPad2d(3), nn.Conv2d(3, f, 7, bias=False), norm(f), nn.ReLU(True),
            nn.Conv2d(f, 2 * f, 3, stride=2, padding=1, bias=False), norm(2 * f), nn.ReLU(True),
            nn.Conv2d(2 * f, 4 * f, 3, stride=2, padding=1, bias=False), norm(4 * f), nn.ReLU(True),
        ]
        layers += [ResnetBlock(4 * f) for _ in range(res_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * f, 2 * f, 3, stride=2, padding=1, output_padding=1, bias=False),
            norm(2 * f), nn.ReLU(True),
            nn.ConvTranspose2d(2 * f, f, 3, stride=2, padding=1, output_padding=1, bias=False),
            norm(f), nn.ReLU(True),
            nn.ReflectionPad2d(3), nn.Conv2d(f, 3, 7),
            nn.Tanh(),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


@dataclass
class GeneratorHandle:
    spec: GeneratorSpec
    net: PerturbationNet
    loss_trace: list[float] = field(default_factory=list)
    train_budget: float | None = None
    noise_kind: str | None = None
    iterations: int = 0
    run_id: str = ""

    @property
    def parameter_count(self) -> int:
        return parameter_count(self.net)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.net.state_dict(), directory / "generator.bin")
        meta = {"spec": self.spec.to_dict(), "loss_trace": self.loss_trace, "train_budget": self.train_budget,
                "noise_kind": self.noise_kind, "iterations": self.iterations, "run_id": self.run_id}
        (directory / "spec.json").write_text(json.dumps(meta, indent=1))
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "GeneratorHandle":
        directory = Path(directory)
        meta = json.loads((directory / "spec.json").read_text())
        handle = build_generator(GeneratorSpec(**meta["spec"]))
        handle.net.load_state_dict(torch.load(directory / "generator.bin", weights_only=True))
        handle.loss_trace = meta["loss_trace"]
        handle.train_budget = meta["train_budget"]
        handle.noise_kind = meta["noise_kind"]
        handle.iterations = meta["iterations"]
        handle.run_id = meta.get("run_id", "")
        return handle


def build_generator(spec: GeneratorSpec, seed: int | None = None) -> GeneratorHandle:
    spec.validate()
    if seed is not None:
        torch.manual_seed(seed)
    net = PerturbationNet(spec.base_filters, spec.res_blocks)
    net.eval()
    return GeneratorHandle(spec=spec, net=net)


def with_budget(spec: GeneratorSpec, budget: float) -> GeneratorSpec:
    return replace(spec, norm_budget=budget)
