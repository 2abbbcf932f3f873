"""Content-addressed artifact store and cached stage builders.

Every artifact lives at ``<home>/artifacts/<kind>/<digest>/`` where the digest
covers the full recipe that produced it (parameters plus upstream digests).
A directory only counts once its ``DONE`` marker exists, so an interrupted
build is simply rebuilt.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from filelock import FileLock

from purebox.blendquery import BlendConfig, HarvestResult, QueryLedger, harvest_boundary_set, refine_substitute
from purebox.corpus import (
    ClassSpec,
    HttpSource,
    LabeledSet,
    LocalDirectorySource,
    Manifest,
    SyntheticSource,
    acquire_many,
    classes_by_id,
    curate,
    load_split,
    load_verdicts,
    one_vs_all,
    split_dataset,
)
from purebox.genattack import GeneratorHandle, GeneratorSpec, NoiseMode, build_generator, train_generator
from purebox.orchestrate.config import CorpusParams, TrainParams, digest_of
from purebox.zoo import ArchSpec, ClassifierHandle, TrainConfig, TrainData, adversarial_train, train_classifier

log = logging.getLogger(__name__)


def default_home() -> Path:
    return Path(os.environ.get("PUREBOX_HOME", Path.home() / ".purebox"))


class ArtifactStore:
    def __init__(self, home: str | Path | None = None):
        self.home = Path(home) if home is not None else default_home()
        self.root = self.home / "artifacts"

    def path(self, kind: str, digest: str) -> Path:
        return self.root / kind / digest

    def has(self, kind: str, digest: str) -> bool:
        return (self.path(kind, digest) / "DONE").exists()

    def lock(self, kind: str, digest: str) -> FileLock:
        (self.root / kind).mkdir(parents=True, exist_ok=True)
        return FileLock(str(self.root / kind / f"{digest}.lock"))

    def begin(self, kind: str, digest: str) -> Path:
        p = self.path(kind, digest)
        if p.exists():
            shutil.rmtree(p)
        p.mkdir(parents=True)
        return p

    def commit(self, kind: str, digest: str, recipe: dict) -> None:
        p = self.path(kind, digest)
        (p / "recipe.json").write_text(json.dumps(recipe, indent=1, sort_keys=True, default=str))
        (p / "DONE").write_text(time.strftime("%Y-%m-%dT%H:%M:%S"))


@dataclass
class Corpus:
    """An acquired, curated and split image collection on disk."""

    digest: str
    root: Path
    manifest: Manifest
    classes: list[ClassSpec]
    resolution: int
    _cache: dict = field(default_factory=dict, repr=False)

    def split(self, name: str, n_classes: int | None = None) -> LabeledSet:
        """Load ``name`` restricted to the first ``n_classes`` classes of this corpus."""
        classes = self.classes[:n_classes] if n_classes else self.classes
        key = (name, len(classes))
        if key not in self._cache:
            self._cache[key] = load_split(self.manifest, self.root / "images", classes, name, self.resolution)
        return self._cache[key]

    def class_ids(self, n_classes: int | None = None) -> list[str]:
        classes = self.classes[:n_classes] if n_classes else self.classes
        return [c.class_id for c in classes]


@dataclass
class BuildEvent:
    kind: str
    digest: str
    cached: bool
    seconds: float


class Lab:
    """Builds (or reloads) corpora, classifiers, generators and harvests by digest."""

    def __init__(self, home: str | Path | None = None):
        self.store = ArtifactStore(home)
        self.events: list[BuildEvent] = []
        self._corpora: dict[str, Corpus] = {}

    # -- bookkeeping
    def _cached(self, kind, recipe, build, load):
        digest = digest_of(recipe)
        t0 = time.time()
        with self.store.lock(kind, digest):
            cached = self.store.has(kind, digest)
            if cached:
                out = load(self.store.path(kind, digest))
            else:
                log.info("building %s %s", kind, digest[:12])
                path = self.store.begin(kind, digest)
                out = build(path, digest)
                self.store.commit(kind, digest, recipe)
        self.events.append(BuildEvent(kind, digest, cached, time.time() - t0))
        return digest, out

    # -- corpus
    def corpus(self, params: CorpusParams) -> Corpus:
        recipe = {"kind": "corpus", **asdict(params)}
        if params.verdicts:
            recipe["verdicts_digest"] = digest_of(sorted(load_verdicts(params.verdicts).items()))
        classes = classes_by_id(params.classes)
        limit = params.per_class_train + params.per_class_val + params.per_class_eval

        def build(path, digest):
            if params.source == "synthetic":
                source = SyntheticSource(limit, params.resolution, params.stream, params.amplitude, params.noise)
                fetch_limit = limit
            elif params.source == "local":
                source, fetch_limit = LocalDirectorySource(params.root), 10 ** 9
            else:
                source, fetch_limit = HttpSource(params.index_url), limit * 2
            manifest = acquire_many(classes, source, fetch_limit, store_root=path / "images")
            if params.verdicts:
                manifest = curate(manifest, load_verdicts(params.verdicts))
            else:
                manifest = curate(manifest, {h: True for h in manifest.hashes})
            manifest = split_dataset(manifest, params.per_class_train, params.per_class_val, params.split_seed)
            manifest.save(path / "manifest.json")
            return manifest

        digest, manifest = self._cached("corpus", recipe, build, lambda p: Manifest.load(p / "manifest.json"))
        if digest not in self._corpora:
            self._corpora[digest] = Corpus(digest, self.store.path("corpus", digest), manifest, classes,
                                           params.resolution)
        return self._corpora[digest]

    # -- classifiers
    @staticmethod
    def train_config(params: TrainParams, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **asdict(params))

    def _data(self, corpus: Corpus, n_classes: int, binary_positive: str | None, seed: int) -> TrainData:
        if binary_positive is not None:
            ids = corpus.class_ids()
            if binary_positive not in ids:
                raise ValueError(f"binary_positive {binary_positive} not in corpus classes")
            pos = ids.index(binary_positive)
            return TrainData(one_vs_all(corpus.split("train"), pos, seed),
                             one_vs_all(corpus.split("val"), pos, seed + 1),
                             [f"not_{binary_positive}", binary_positive])
        return TrainData(corpus.split("train", n_classes), corpus.split("val", n_classes),
                         corpus.class_ids(n_classes))

    def classifier(self, corpus: Corpus, family: str, n_classes: int, train: TrainParams, seed: int, *,
                   width_scale: float = 1.0, binary_positive: str | None = None,
                   robust_eps: float | None = None, robust_pgd_steps: int = 7) -> ClassifierHandle:
        num = 2 if binary_positive is not None else n_classes
        arch = ArchSpec(family, num, width_scale)
        cfg = self.train_config(train, seed)
        recipe = {"kind": "classifier", "corpus": corpus.digest, "arch": arch.to_dict(), "train": cfg.to_dict(),
                  "n_classes": n_classes, "binary_positive": binary_positive,
                  "robust_eps": robust_eps, "robust_pgd_steps": robust_pgd_steps}

        def build(path, digest):
            data = self._data(corpus, n_classes, binary_positive, seed)
            if robust_eps is not None:
                handle = adversarial_train(arch, data, cfg, robust_eps, pgd_steps=robust_pgd_steps)
            else:
                handle = train_classifier(arch, data, cfg)
            handle.run_id = digest
            handle.save(path)
            return handle

        _, handle = self._cached("classifier", recipe, build, ClassifierHandle.load)
        return handle.freeze()

    # -- generators
    def generator(self, ensemble: Sequence[ClassifierHandle], data_corpus: Corpus, n_classes: int,
                  spec: GeneratorSpec, noise: NoiseMode, *, iters: int, lr: float, batch_size: int,
                  noise_per_step: int, seed: int) -> GeneratorHandle:
        recipe = {"kind": "generator", "members": sorted(m.run_id for m in ensemble), "corpus": data_corpus.digest,
                  "n_classes": n_classes, "spec": spec.to_dict(), "noise": noise.kind, "sigma": noise.sigma,
                  "frozen": hashlib.sha256(noise.frozen_noise.tobytes()).hexdigest()
                  if noise.frozen_noise is not None else None,
                  "iters": iters, "lr": lr, "batch_size": batch_size, "noise_per_step": noise_per_step, "seed": seed}

        def build(path, digest):
            gen = build_generator(spec, seed=seed)
            train_generator(gen, list(ensemble), data_corpus.split("train", n_classes), noise, spec.norm_budget,
                            iters, seed, batch_size=batch_size, noise_per_step=noise_per_step, lr=lr)
            gen.run_id = digest
            gen.save(path)
            return gen

        _, gen = self._cached("generator", recipe, build, GeneratorHandle.load)
        return gen

    # -- query side
    def harvest(self, sources: LabeledSet, tm_name: str, tm, cfg: BlendConfig, n_per_class: int, *,
                robust_model: ClassifierHandle | None, partners: LabeledSet | None, seed: int,
                tm_digest: str, search: str = "bisect") -> HarvestResult:
        recipe = {"kind": "harvest", "sources": sources.digest(), "tm": tm_digest, "cfg": cfg.to_dict(),
                  "n_per_class": n_per_class, "robust": robust_model.run_id if robust_model else None,
                  "partners": partners.digest() if partners is not None else None, "seed": seed, "search": search}

        def build(path, digest):
            ledger = QueryLedger()
            res = harvest_boundary_set(sources, tm, cfg, n_per_class, ledger, robust_model=robust_model,
                                       partners=partners, seed=seed, search=search)
            torch.save({"images": res.dataset.images, "labels": res.dataset.labels, "refs": res.dataset.refs},
                       path / "boundary.pt")
            meta = {"queries_per_pair": res.queries_per_pair, "skipped": res.skipped,
                    "ledger": ledger.to_dict(), "provenance": res.provenance, "tm": tm_name}
            (path / "harvest.json").write_text(json.dumps(meta, indent=1, default=str))
            return res

        def load(path):
            blob = torch.load(path / "boundary.pt", weights_only=True)
            meta = json.loads((path / "harvest.json").read_text())
            ds = LabeledSet(blob["images"], blob["labels"], list(blob["refs"]))
            res = HarvestResult(ds, [], meta["skipped"], None, meta["provenance"])
            res.cached_queries = meta["queries_per_pair"]
            return res

        _, res = self._cached("harvest", recipe, build, load)
        return res

    def refined(self, sm: ClassifierHandle, harvest: HarvestResult, corpus: Corpus, n_classes: int,
                train: TrainParams, seed: int, tm_to_sm: dict[int, int] | None) -> ClassifierHandle:
        cfg = self.train_config(train, seed)
        recipe = {"kind": "refined", "keep": "last", "sm": sm.run_id, "boundary": harvest.dataset.digest(), "train": cfg.to_dict(),
                  "tm_to_sm": sorted((tm_to_sm or {}).items())}

        def build(path, digest):
            handle = refine_substitute(sm, harvest.dataset, corpus.split("train", n_classes), cfg,
                                       corpus.split("val", n_classes), tm_to_sm=tm_to_sm)
            handle.run_id = digest
            handle.save(path)
            return handle

        _, handle = self._cached("refined", recipe, build, ClassifierHandle.load)
        return handle.freeze()

    def summary(self, since: int = 0) -> dict:
        """Cache accounting over ``events[since:]``, so one Lab can serve several runs."""
        events = self.events[since:]
        return {"cache_hits": sum(e.cached for e in events),
                "built": sum(not e.cached for e in events),
                "events": [asdict(e) for e in events]}
