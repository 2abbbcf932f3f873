from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from purebox.corpus.acquire import find_image
from purebox.corpus.classes import ClassSpec, label_map
from purebox.corpus.manifest import Manifest

DEFAULT_RESOLUTION = 224


@dataclass
class ImageSample:
    pixels: np.ndarray  # (3, H, W) in [0, 1]
    label: int
    manifest_ref: str

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) pixels, got {self.pixels.shape}")


def load_pixels(path: str | Path, resolution: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (resolution, resolution):
            im = im.resize((resolution, resolution), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


@dataclass
class LabeledSet:
    """A batch-friendly view of labelled images."""

    images: torch.Tensor  # (N, 3, H, W) float32
    labels: torch.Tensor  # (N,) int64
    refs: list[str]

    def __len__(self):
        return len(self.labels)

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.images.shape[-2:])

    @property
    def num_classes_present(self) -> int:
        return len(torch.unique(self.labels))

    def samples(self) -> list[ImageSample]:
        return [ImageSample(self.images[i].numpy(), int(self.labels[i]), self.refs[i]) for i in range(len(self))]

    @classmethod
    def from_samples(cls, samples: Sequence[ImageSample]) -> "LabeledSet":
        if not samples:
            return cls(torch.zeros(0, 3, 1, 1), torch.zeros(0, dtype=torch.long), [])
        images = torch.from_numpy(np.stack([s.pixels for s in samples]).astype(np.float32))
        labels = torch.tensor([s.label for s in samples], dtype=torch.long)
        return cls(images, labels, [s.manifest_ref for s in samples])

    def subset(self, index) -> "LabeledSet":
        index = torch.as_tensor(index, dtype=torch.long)
        return LabeledSet(self.images[index], self.labels[index], [self.refs[i] for i in index.tolist()])

    def relabel(self, labels) -> "LabeledSet":
        return LabeledSet(self.images, torch.as_tensor(labels, dtype=torch.long), list(self.refs))

    def concat(self, other: "LabeledSet") -> "LabeledSet":
        return LabeledSet(torch.cat([self.images, other.images]), torch.cat([self.labels, other.labels]),
                          self.refs + other.refs)

    def digest(self) -> str:
        """Order-independent fingerprint of (ref, label) pairs."""
        pairs = sorted(f"{r}:{int(l)}" for r, l in zip(self.refs, self.labels))
        return hashlib.sha256("\n".join(pairs).encode()).hexdigest()


def load_split(manifest: Manifest, root: str | Path, classes: Sequence[ClassSpec], split: str,
               resolution: int = DEFAULT_RESOLUTION) -> LabeledSet:
    """Load one split for a class subset; labels follow the subset order."""
    labels = label_map(classes)
    entries = sorted(manifest.select(split=split, class_ids=labels), key=lambda e: (labels[e.class_id], e.content_hash))
    samples = [
        ImageSample(load_pixels(find_image(root, e.class_id, e.content_hash), resolution), labels[e.class_id], e.content_hash)
        for e in entries
    ]
    out = LabeledSet.from_samples(samples)
    if not samples:
        out.images = torch.zeros(0, 3, resolution, resolution)
    return out


def one_vs_all(data: LabeledSet, positive: int, seed: int) -> LabeledSet:
    """Binary relabelling: ``positive`` -> 1, an equal-sized uniform draw of the rest -> 0."""
    pos = torch.nonzero(data.labels == positive).flatten()
    neg = torch.nonzero(data.labels != positive).flatten()
    rng = np.random.default_rng(seed)
    n = min(len(pos), len(neg))
    pos = pos[torch.from_numpy(np.sort(rng.choice(len(pos), n, replace=False)))] if n < len(pos) else pos
    neg = neg[torch.from_numpy(np.sort(rng.choice(len(neg), n, replace=False)))]
    index = torch.cat([pos, neg])
    out = data.subset(index)
    return out.relabel(torch.cat([torch.ones(len(pos), dtype=torch.long), torch.zeros(len(neg), dtype=torch.long)]))
