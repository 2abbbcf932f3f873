from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from purebox.blendquery.blend import BlendConfig, naive_blend, robust_blend
from purebox.blendquery.search import BoundaryPair, QueryLedger, boundary_search, linear_sweep_search
from purebox.corpus.dataset import ImageSample, LabeledSet
from purebox.corpus.manifest import content_hash
from purebox.corpus.sources import encode_png
from purebox.errors import EmptyBoundarySet, NoBoundaryFound, QueryBudgetExhausted
from purebox.zoo.handle import ClassifierHandle, TrainConfig
from purebox.zoo.training import TrainData, train_classifier

log = logging.getLogger(__name__)


@dataclass
class HarvestResult:
    dataset: LabeledSet
    pairs: list[BoundaryPair] = field(default_factory=list)
    skipped: int = 0
    ledger: QueryLedger | None = None
    provenance: list[dict] = field(default_factory=list)

    @property
    def queries_per_pair(self) -> list[int]:
        return [p.queries_used for p in self.pairs]

    def save(self, root: str | Path, class_map: Sequence[str] | None = None) -> Path:
        """Write images in the corpus layout with a provenance sidecar per image."""
        root = Path(root)
        for i in range(len(self.dataset)):
            label = int(self.dataset.labels[i])
            class_dir = class_map[label] if class_map is not None and label < len(class_map) else f"tm{label}"
            data = encode_png(self.dataset.images[i].numpy())
            digest = content_hash(data)
            (root / class_dir).mkdir(parents=True, exist_ok=True)
            (root / class_dir / f"{digest}.png").write_bytes(data)
            (root / class_dir / f"{digest}.json").write_text(json.dumps(self.provenance[i], indent=1))
        return root


def _as_samples(sources) -> list[ImageSample]:
    return sources.samples() if isinstance(sources, LabeledSet) else list(sources)


def harvest_boundary_set(sources, tm: Callable, cfg: BlendConfig, n_per_class: int, ledger: QueryLedger, *,
                         robust_model: ClassifierHandle | None = None, partners=None, seed: int = 0,
                         search: str = "bisect", sweep_resolution: float = 0.05) -> HarvestResult:
    """Collect up to ``n_per_class`` boundary pairs per source class, labelled by the target.

    Robust blending walks toward a random other class of ``robust_model``;
    naive blending mixes toward a random ``partners`` image of another class.
    Sources whose label never flips are skipped. ``search="sweep"`` swaps
    bisection for the exhaustive grid baseline.
    """
    samples = _as_samples(sources)
    if not samples:
        raise ValueError("no source images")
    if cfg.method == "robust" and robust_model is None:
        raise ValueError("robust blending needs a robust_model")
    pool = _as_samples(partners) if partners is not None else samples
    rng = np.random.default_rng(seed)
    quota: dict[int, int] = {}
    images, labels, pairs, prov = [], [], [], []
    skipped = 0

    def finish(result_pairs):
        data = LabeledSet(torch.stack(images) if images else torch.zeros(0, *samples[0].pixels.shape),
                          torch.tensor(labels, dtype=torch.long), [p["ref"] for p in prov])
        return HarvestResult(data, result_pairs, skipped, ledger, prov)

    for idx in rng.permutation(len(samples)):
        x = samples[idx]
        if quota.get(x.label, 0) >= n_per_class:
            continue
        if cfg.method == "robust":
            others = [c for c in range(robust_model.num_classes) if c != x.label]
            target = int(rng.choice(others))

            def param_to_image(eps, x=x, target=target):
                return robust_blend(robust_model, x, target, eps, cfg)
            blend_info = {"target_label": target}
        else:
            candidates = [i for i, p in enumerate(pool) if p.label != x.label]
            if not candidates:
                skipped += 1
                log.debug("skipping %s: no partner from another class", x.manifest_ref)
                continue
            partner = pool[int(rng.choice(candidates))]

            def param_to_image(t, x=x, partner=partner):
                return naive_blend(x, partner, 1.0 - t)
            blend_info = {"partner_ref": partner.manifest_ref}
        try:
            if search == "sweep":
                pair = linear_sweep_search(param_to_image, tm, None, ledger, sweep_resolution,
                                           cfg.search_range, sample_id=x.manifest_ref)
            else:
                pair = boundary_search(param_to_image, tm, None, cfg, ledger, sample_id=x.manifest_ref)
        except NoBoundaryFound as exc:
            skipped += 1
            log.debug("skipping %s: %s", x.manifest_ref, exc)
            continue
        except QueryBudgetExhausted as exc:
            raise QueryBudgetExhausted(str(exc), finish(pairs)) from None
        quota[x.label] = quota.get(x.label, 0) + 1
        pairs.append(pair)
        for side, image, param, label in (("in", pair.inside_image, pair.inside_param, pair.tm_labels[0]),
                                          ("out", pair.outside_image, pair.outside_param, pair.tm_labels[1])):
            images.append(torch.from_numpy(np.asarray(image.pixels, dtype=np.float32)))
            labels.append(label)
            prov.append({"ref": f"{x.manifest_ref}:{side}", "source_ref": x.manifest_ref, "method": cfg.method,
                         "param": param, "tm_label": label, "queries": pair.queries_used, **blend_info})
    if skipped:
        log.info("harvest skipped %d source(s) without a boundary", skipped)
    return finish(pairs)


def refine_substitute(sm: ClassifierHandle, boundary_set: LabeledSet, base_train_set: LabeledSet,
                      cfg: TrainConfig, val_set: LabeledSet,
                      tm_to_sm: Mapping[int, int] | None = None) -> ClassifierHandle:
    """Fine-tune ``sm`` on its training data plus target-labelled boundary samples.

    The final weights are returned; ``val_set`` only feeds the training record.

    ``tm_to_sm`` translates target labels into the substitute's label space
    (identity by default); anything that does not land in that space is dropped.
    """
    if len(boundary_set) == 0:
        raise EmptyBoundarySet("boundary set is empty")
    mapped = [tm_to_sm.get(int(l), -1) if tm_to_sm is not None else int(l) for l in boundary_set.labels]
    keep = [i for i, l in enumerate(mapped) if 0 <= l < sm.num_classes]
    dropped = len(mapped) - len(keep)
    if dropped:
        log.info("dropped %d boundary sample(s) with labels outside the substitute's classes", dropped)
    if not keep:
        raise EmptyBoundarySet("no boundary sample falls in the substitute's label space")
    extra = boundary_set.subset(keep).relabel([mapped[i] for i in keep])
    data = TrainData(base_train_set.concat(extra), val_set, list(sm.class_map))
    refined = train_classifier(sm.arch, data, cfg, init_state=sm.model.state_dict(), robust=sm.robust,
                               keep="last")
    refined.run_id = f"{sm.run_id}+refined" if sm.run_id else "refined"
    return refined
