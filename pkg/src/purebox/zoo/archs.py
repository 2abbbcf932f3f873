"""Small CNN families for desk-scale substitute and target models.

Each family differs in depth, width and connectivity so an ensemble built from
several families is structurally diverse.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

FAMILIES = ("small_cnn", "mobile_like", "dense_like", "res_like_A", "res_like_B", "vgg_like_A", "vgg_like_B")


@dataclass(frozen=True)
class ArchSpec:
    family: str
    num_classes: int
    width_scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not self.width_scale > 0:
            raise ValueError("width_scale must be positive")

    def to_dict(self):
        return asdict(self)


def _w(base: int, scale: float) -> int:
    return max(4, int(round(base * scale)))


def _conv_bn(cin, cout, stride=1, groups=1, k=3):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, groups=groups, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class _Head(nn.Module):
    def __init__(self, cin, num_classes):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(cin, num_classes)

    def forward(self, x):
        return self.fc(torch.flatten(self.pool(x), 1))


class SmallCNN(nn.Module):
    """Two 5x5 convolutions without normalisation and a dense head over the spatial map."""

    def __init__(self, num_classes, s=1.0):
        super().__init__()
        c1, c2 = _w(12, s), _w(24, s)
        self.features = nn.Sequential(
            nn.Conv2d(3, c1, 5, padding=2), nn.ReLU(inplace=True), nn.MaxPool2d(2),
            nn.Conv2d(c1, c2, 5, padding=2), nn.ReLU(inplace=True), nn.AdaptiveAvgPool2d(4),
        )
        self.fc = nn.Sequential(nn.Flatten(), nn.Linear(c2 * 16, _w(64, s)), nn.ReLU(inplace=True),
                                nn.Linear(_w(64, s), num_classes))

    def forward(self, x):
        return self.fc(self.features(x))


class _InvertedResidual(nn.Module):
    def __init__(self, cin, cout, stride, expand=2):
        super().__init__()
        hidden = cin * expand
        self.use_skip = stride == 1 and cin == cout
        self.block = nn.Sequential(
            _conv_bn(cin, hidden, k=1),
            _conv_bn(hidden, hidden, stride=stride, groups=hidden),
            nn.Conv2d(hidden, cout, 1, bias=False),
            nn.BatchNorm2d(cout),
        )

    def forward(self, x):
        out = self.block(x)
        return x + out if self.use_skip else out


class MobileLike(nn.Module):
    def __init__(self, num_classes, s=1.0):
        super().__init__()
        c0, c1, c2 = _w(12, s), _w(16, s), _w(32, s)
        self.features = nn.Sequential(
            _conv_bn(3, c0, stride=2),
            _InvertedResidual(c0, c1, 1),
            _InvertedResidual(c1, c1, 1),
            _InvertedResidual(c1, c2, 2),
            _InvertedResidual(c2, c2, 1),
        )
        self.head = _Head(c2, num_classes)

    def forward(self, x):
        return self.head(self.features(x))


class _DenseBlock(nn.Module):
    def __init__(self, cin, growth, layers):
        super().__init__()
        self.layers = nn.ModuleList(_conv_bn(cin + i * growth, growth) for i in range(layers))
        self.out_channels = cin + layers * growth

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(layer(torch.cat(feats, 1)))
        return torch.cat(feats, 1)


class DenseLike(nn.Module):
    def __init__(self, num_classes, s=1.0):
        super().__init__()
        g = _w(8, s)
        stem = _w(16, s)
        b1 = _DenseBlock(stem, g, 3)
        t1 = _w(24, s)
        b2 = _DenseBlock(t1, g, 3)
        self.features = nn.Sequential(
            _conv_bn(3, stem), nn.MaxPool2d(2),
            b1, _conv_bn(b1.out_channels, t1, k=1), nn.AvgPool2d(2),
            b2,
        )
        self.head = _Head(b2.out_channels, num_classes)

    def forward(self, x):
        return self.head(self.features(x))


class _BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = _conv_bn(cin, cout, stride=stride)
        self.conv2 = nn.Sequential(nn.Conv2d(cout, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout))
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        return torch.relu(self.conv2(self.conv1(x)) + self.shortcut(x))


class ResLike(nn.Module):
    def __init__(self, num_classes, s=1.0, blocks=(1, 1)):
        super().__init__()
        c0, c1, c2 = _w(16, s), _w(16, s), _w(32, s)
        layers = [_conv_bn(3, c0)]
        cin = c0
        for stage, (cout, n) in enumerate(zip((c1, c2), blocks)):
            for i in range(n):
                layers.append(_BasicBlock(cin, cout, 2 if i == 0 else 1))
                cin = cout
        self.features = nn.Sequential(*layers)
        self.head = _Head(cin, num_classes)

    def forward(self, x):
        return self.head(self.features(x))


class VGGLike(nn.Module):
    def __init__(self, num_classes, s=1.0, cfg=(16, "M", 32, "M")):
        super().__init__()
        layers = []
        cin = 3
        for item in cfg:
            if item == "M":
                layers.append(nn.MaxPool2d(2))
            else:
                cout = _w(item, s)
                layers.append(_conv_bn(cin, cout))
                cin = cout
        self.features = nn.Sequential(*layers)
        self.head = _Head(cin, num_classes)

    def forward(self, x):
        return self.head(self.features(x))


def build_model(arch: ArchSpec) -> nn.Module:
    n, s = arch.num_classes, arch.width_scale
    if arch.family == "small_cnn":
        return SmallCNN(n, s)
    if arch.family == "mobile_like":
        return MobileLike(n, s)
    if arch.family == "dense_like":
        return DenseLike(n, s)
    if arch.family == "res_like_A":
        return ResLike(n, s, blocks=(1, 1))
    if arch.family == "res_like_B":
        return ResLike(n, s, blocks=(2, 2))
    if arch.family == "vgg_like_A":
        return VGGLike(n, s, cfg=(16, "M", 32, "M"))
    if arch.family == "vgg_like_B":
        return VGGLike(n, s, cfg=(16, 16, "M", 32, 32, "M", 48))
    raise AssertionError(arch.family)
