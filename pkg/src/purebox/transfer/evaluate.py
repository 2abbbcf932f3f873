from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

from purebox.corpus.dataset import ImageSample, LabeledSet
from purebox.errors import EmptyEvalSet, OracleFailure, ShapeMismatch
from purebox.genattack.perturbation import Perturbation, apply_perturbation_batch
from purebox.transfer.oracle import TargetOracle


@dataclass(frozen=True)
class TransferReport:
    clean_accuracy: float
    adversarial_accuracy: float
    accuracy_drop: float  # percentage points
    fooling_rate: float  # share of initially-correct (image, perturbation) pairs that flip
    n_images: int
    n_perturbations: int
    config_digest: str = ""
    eval_digest: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TransferReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def check(self, tol: float = 1e-9) -> None:
        assert 0 <= self.clean_accuracy <= 1 and 0 <= self.adversarial_accuracy <= 1
        assert abs(self.accuracy_drop - 100 * (self.clean_accuracy - self.adversarial_accuracy)) <= tol
        assert self.n_images >= 1 and self.n_perturbations >= 1


def _as_set(eval_set) -> LabeledSet:
    if isinstance(eval_set, LabeledSet):
        return eval_set
    return LabeledSet.from_samples(list(eval_set))


def _labels(target: TargetOracle, images: torch.Tensor, pert_index: int | None) -> np.ndarray:
    try:
        return target.labels(images)
    except Exception as batch_exc:
        # locate the failing image for the error report
        for i, img in enumerate(images):
            try:
                target(img)
            except Exception as exc:
                raise OracleFailure(f"oracle failed on pair ({pert_index}, {i}): {exc}", (pert_index, i)) from exc
        raise OracleFailure(f"oracle failed on a batch: {batch_exc}", (pert_index, None)) from batch_exc


def evaluate_transfer(perturbations: Sequence[Perturbation], target: TargetOracle,
                      eval_set: LabeledSet | Sequence[ImageSample], config_digest: str = "") -> TransferReport:
    """Clean vs. perturbed accuracy of ``target``, averaged over every (perturbation, image) pair.

    Labels are compared in the target's own label space; no mapping from
    substitute labels is attempted.
    """
    data = _as_set(eval_set)
    if len(data) == 0:
        raise EmptyEvalSet("evaluation set is empty")
    if not perturbations:
        raise ValueError("at least one perturbation is required")
    shape = tuple(data.images.shape[1:])
    for p in perturbations:
        if p.delta.shape != shape:
            raise ShapeMismatch(f"perturbation {p.delta.shape} does not match images {shape}")

    truth = data.labels.numpy()
    clean_ok = _labels(target, data.images, None) == truth
    n, n_ok = len(data), int(clean_ok.sum())
    adv_correct = fooled = 0
    for j, p in enumerate(perturbations):
        adv_ok = _labels(target, apply_perturbation_batch(data.images, p), j) == truth
        adv_correct += int(adv_ok.sum())
        fooled += int((clean_ok & ~adv_ok).sum())
    clean_acc = n_ok / n
    adv_acc = adv_correct / (n * len(perturbations))
    fooling = fooled / (n_ok * len(perturbations)) if n_ok else 0.0
    return TransferReport(
        clean_accuracy=clean_acc,
        adversarial_accuracy=adv_acc,
        accuracy_drop=100.0 * (clean_acc - adv_acc),
        fooling_rate=fooling,
        n_images=n,
        n_perturbations=len(perturbations),
        config_digest=config_digest,
        eval_digest=data.digest(),
    )


def verify_oracle_purity(target: TargetOracle, eval_set, perturbations: Sequence[Perturbation],
                         n_pairs: int = 100, seed: int = 0) -> bool:
    """Re-query random (image, perturbation) pairs twice and compare labels."""
    data = _as_set(eval_set)
    rng = np.random.default_rng(seed)
    img_idx = rng.integers(0, len(data), n_pairs)
    pert_idx = rng.integers(0, len(perturbations), n_pairs)
    batch = torch.stack([apply_perturbation_batch(data.images[i:i + 1], perturbations[j])[0]
                         for i, j in zip(img_idx, pert_idx)])
    first = np.array([target(x) for x in batch])
    second = np.array([target(x) for x in batch])
    return bool((first == second).all())
