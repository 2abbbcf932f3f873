"""Run a configured experiment end to end and persist its record."""
from __future__ import annotations

import json
import logging
import time
import traceback
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch
from filelock import FileLock

from purebox.blendquery import BlendConfig
from purebox.corpus import LabeledSet, one_vs_all
from purebox.errors import ConfigInvalid, PureboxError, StageFailed
from purebox.genattack import GeneratorSpec, NoiseMode, generate_perturbations
from purebox.orchestrate.config import ExperimentConfig, validate
from purebox.orchestrate.lab import Corpus, Lab
from purebox.transfer import TargetOracle, evaluate_transfer
from purebox.zoo import ClassifierHandle, set_deterministic

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    run_id: str
    config_digest: str
    pipeline: str
    status: str = "running"
    started: float = 0.0
    finished: float = 0.0
    timings: dict[str, float] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    entries: list[dict] = field(default_factory=list)
    query: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True, default=str)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        return cls.from_json(Path(path).read_text())

    def save(self, home: str | Path) -> Path:
        runs = Path(home) / "runs"
        out = runs / self.run_id
        out.mkdir(parents=True, exist_ok=True)
        (out / "record.json").write_text(self.to_json())
        with FileLock(str(runs / "index.lock")):
            index_path = runs / "index.json"
            index = json.loads(index_path.read_text()) if index_path.exists() else {}
            index[self.run_id] = {"config_digest": self.config_digest, "pipeline": self.pipeline,
                                  "status": self.status, "finished": self.finished}
            index_path.write_text(json.dumps(index, indent=1, sort_keys=True))
        return out / "record.json"


def _roles(cfg: ExperimentConfig):
    """(substitute-side corpus params, target-side corpus params) for the pipeline."""
    if cfg.pipeline == "reversed_transfer":
        return cfg.target_corpus, cfg.attacker_corpus
    if cfg.pipeline == "prior_contaminated":
        return cfg.attacker_corpus, cfg.attacker_corpus
    return cfg.attacker_corpus, cfg.target_corpus


def check_roles(cfg: ExperimentConfig) -> None:
    sm_side, tm_side = _roles(cfg)
    name = "target_corpus" if tm_side is cfg.target_corpus else "attacker_corpus"
    if tm_side.per_class_eval <= 0:
        raise ConfigInvalid(f"{name}.per_class_eval", f"pipeline {cfg.pipeline} evaluates on this corpus; "
                                                      "it needs a positive eval split")
    if cfg.transfer.eval_classes > len(sm_side.classes):
        raise ConfigInvalid("transfer.eval_classes", "exceeds the substitute corpus class count")


def eval_set_for(target: ClassifierHandle, tm_corpus: Corpus, shared_ids: list[str], seed: int) -> LabeledSet:
    """The target's evaluation images, labelled in the target's own label space."""
    full = tm_corpus.split("eval")
    ids = tm_corpus.class_ids()
    cm = list(target.class_map)
    if len(cm) == 2 and cm[0].startswith("not_"):
        positive = cm[1]
        return one_vs_all(full, ids.index(positive), seed)
    keep = [i for i, l in enumerate(full.labels.tolist()) if ids[l] in shared_ids and ids[l] in cm]
    sub = full.subset(keep)
    return sub.relabel([cm.index(ids[l]) for l in sub.labels.tolist()])


def tm_to_sm_map(tm: ClassifierHandle, sm: ClassifierHandle) -> dict[int, int]:
    """Translate target labels into a substitute's label space through shared class ids."""
    tcm, scm = list(tm.class_map), list(sm.class_map)
    if len(scm) == 2 and scm[0].startswith("not_"):
        if len(tcm) == 2 and tcm[0].startswith("not_"):
            return {0: 0, 1: 1} if tcm[1] == scm[1] else {}
        return {i: int(c == scm[1]) for i, c in enumerate(tcm)}
    return {i: scm.index(c) for i, c in enumerate(tcm) if c in scm}


def agreement(sm: ClassifierHandle, tm: ClassifierHandle, probes: LabeledSet) -> float:
    mapping = tm_to_sm_map(tm, sm)
    tm_labels = tm.predict(probes.images).tolist()
    sm_labels = sm.predict(probes.images).tolist()
    pairs = [(mapping[t], s) for t, s in zip(tm_labels, sm_labels) if t in mapping]
    return sum(a == b for a, b in pairs) / len(pairs) if pairs else float("nan")


class _Runner:
    def __init__(self, cfg: ExperimentConfig, lab: Lab, record: RunRecord):
        self.cfg, self.lab, self.record = cfg, lab, record

    @contextmanager
    def stage(self, name: str):
        t0 = time.time()
        log.info("stage %s", name)
        try:
            yield
        except PureboxError as exc:
            if isinstance(exc, (StageFailed, ConfigInvalid)):
                raise
            raise StageFailed(name, f"{type(exc).__name__}: {exc}") from exc
        except Exception as exc:
            raise StageFailed(name, f"{type(exc).__name__}: {exc}") from exc
        finally:
            self.record.timings[name] = self.record.timings.get(name, 0.0) + time.time() - t0

    def ensembles(self, smc: Corpus):
        cfg = self.cfg
        out = {}
        for i, ens in enumerate(cfg.ensembles):
            members = []
            for j, m in enumerate(ens.members):
                h = self.lab.classifier(smc, m.family, m.n_classes, cfg.train, cfg.seed * 1000 + m.seed_offset + j,
                                        width_scale=m.width_scale, binary_positive=m.binary_positive)
                self.record.artifacts[f"substitute/{ens.name}/{j}"] = str(self.lab.store.path("classifier", h.run_id))
                members.append(h)
            out[ens.name] = members
        return out

    def targets(self, tmc: Corpus):
        cfg = self.cfg
        out = {}
        for t in cfg.targets:
            if t.checkpoint:
                h = ClassifierHandle.load(t.checkpoint).freeze()
                self.record.artifacts[f"target/{t.name}"] = str(t.checkpoint)
            else:
                h = self.lab.classifier(tmc, t.family, t.n_classes, cfg.train, cfg.seed * 1000 + t.seed_offset,
                                        width_scale=t.width_scale, binary_positive=t.binary_positive)
                self.record.artifacts[f"target/{t.name}"] = str(self.lab.store.path("classifier", h.run_id))
            out[t.name] = h
        return out

    def attack(self, phase: str, ensembles, smc: Corpus, targets, eval_sets, digest: str):
        cfg, g = self.cfg, self.cfg.generator
        k = cfg.transfer.eval_classes
        shape = tuple(smc.split("train", k).images.shape[1:])
        for ens in cfg.ensembles:
            members = ensembles[ens.name]
            n_classes = max(m.num_classes for m in members)
            for variant in g.variants:
                spec = GeneratorSpec.heavy(g.heavy_base_filters, g.heavy_res_blocks, g.budget)
                if variant == "light":
                    spec = spec.light_counterpart()
                for kind in g.noise:
                    mode = (NoiseMode.distributional(shape, g.sigma) if kind == "distributional"
                            else NoiseMode.fixed(shape, seed=cfg.seed, sigma=g.sigma))
                    with self.stage(f"generator/{phase}"):
                        gen = self.lab.generator(members, smc, k, spec, mode, iters=g.iters, lr=g.lr,
                                                 batch_size=g.batch_size, noise_per_step=g.noise_per_step,
                                                 seed=cfg.seed)
                    self.record.artifacts[f"generator/{phase}/{ens.name}/{variant}/{kind}"] = \
                        str(self.lab.store.path("generator", gen.run_id))
                    n = cfg.transfer.n_perturbations if kind == "distributional" else 1
                    perts = generate_perturbations(gen, mode, g.budget, n, base_seed=cfg.seed * 7919)
                    with self.stage(f"transfer/{phase}"):
                        for tname, tm in targets.items():
                            report = evaluate_transfer(perts, TargetOracle.from_classifier(tm, tname),
                                                       eval_sets[tname], digest)
                            self.record.entries.append({
                                "phase": phase, "ensemble": ens.name, "n_sms": len(members),
                                "n_classes": n_classes, "variant": variant, "noise": kind,
                                "target": tname, "report": report.to_dict()})

    def query(self, ensembles, smc: Corpus, targets):
        cfg, b = self.cfg, self.cfg.blend
        method = "robust" if cfg.pipeline == "query_robust" else "naive"
        blend = BlendConfig(method=method, eps0=b.eps0, max_recursions=b.max_recursions,
                            norm_tolerance=b.norm_tolerance, pgd_steps=b.pgd_steps)
        k = cfg.transfer.eval_classes
        tname = cfg.targets[0].name
        tm = targets[tname]
        oracle = TargetOracle.from_classifier(tm, tname)
        robust = None
        if method == "robust":
            with self.stage("robust_model"):
                robust = self.lab.classifier(smc, b.robust_family, k, replace(cfg.train, max_epochs=b.robust_epochs),
                                             cfg.seed * 1000 + 500, robust_eps=b.robust_eps,
                                             robust_pgd_steps=b.robust_pgd_steps)
            self.record.artifacts["robust_model"] = str(self.lab.store.path("classifier", robust.run_id))
        sources = smc.split("train", k)
        with self.stage("harvest"):
            harvest = self.lab.harvest(sources, tname, oracle, blend, b.n_per_class, robust_model=robust,
                                       partners=sources if method == "naive" else None, seed=cfg.seed,
                                       tm_digest=tm.run_id or tname)
        qpp = list(getattr(harvest, "cached_queries", None) or harvest.queries_per_pair)
        self.record.query = {"method": method, "target": tname, "boundary_images": len(harvest.dataset),
                             "pairs": len(qpp), "skipped": harvest.skipped, "total_queries": sum(qpp),
                             "max_queries_per_pair": max(qpp, default=0), "queries_per_pair": qpp,
                             "agreement": {}}
        refine_train = replace(cfg.train, initial_lr=b.refine_lr, max_epochs=b.refine_epochs)
        with self.stage("probes"):
            val = smc.split("val", k)
            probe_harvest = self.lab.harvest(val, tname, oracle, blend, b.probe_per_class, robust_model=robust,
                                             partners=val if method == "naive" else None, seed=cfg.seed + 1,
                                             tm_digest=tm.run_id or tname)
        probes = probe_harvest.dataset
        self.record.query["probes"] = len(probes)
        refined = {}
        with self.stage("refine"):
            for ens in cfg.ensembles:
                new = []
                for j, sm in enumerate(ensembles[ens.name]):
                    n_cls = ens.members[j].n_classes
                    r = self.lab.refined(sm, harvest, smc, None if ens.members[j].binary_positive else n_cls,
                                         refine_train, cfg.seed, tm_to_sm_map(tm, sm))
                    self.record.query["agreement"][f"{ens.name}/{j}"] = {
                        "before": agreement(sm, tm, probes), "after": agreement(r, tm, probes)}
                    new.append(r)
                refined[ens.name] = new
        return refined


def run_experiment(cfg: ExperimentConfig, home: str | Path | None = None, lab: Lab | None = None) -> RunRecord:
    """Execute ``cfg`` and write ``runs/<run_id>/record.json`` under the lab home.

    Raises ConfigInvalid before any work starts and StageFailed (naming the
    stage) if a stage breaks; a failed record is still written.
    """
    validate(cfg)
    check_roles(cfg)
    lab = lab or Lab(home)
    first_event = len(lab.events)
    record = RunRecord(cfg.run_id, cfg.digest(), cfg.pipeline, started=time.time())
    runner = _Runner(cfg, lab, record)
    set_deterministic()
    torch.manual_seed(cfg.seed)
    sm_side, tm_side = _roles(cfg)
    try:
        with runner.stage("corpus"):
            smc = lab.corpus(sm_side)
            tmc = lab.corpus(tm_side)
        record.artifacts["corpus/substitute"] = str(smc.root)
        record.artifacts["corpus/target"] = str(tmc.root)
        with runner.stage("substitutes"):
            ensembles = runner.ensembles(smc)
        with runner.stage("targets"):
            targets = runner.targets(tmc)
        shared = smc.class_ids(cfg.transfer.eval_classes)
        with runner.stage("eval_sets"):
            eval_sets = {n: eval_set_for(t, tmc, shared, cfg.seed) for n, t in targets.items()}
        runner.attack("baseline", ensembles, smc, targets, eval_sets, record.config_digest)
        if cfg.pipeline in ("query_naive", "query_robust"):
            refined = runner.query(ensembles, smc, targets)
            runner.attack("refined", refined, smc, targets, eval_sets, record.config_digest)
        record.status = "ok"
    except StageFailed as exc:
        record.status = "failed"
        record.error = f"{exc}\n{traceback.format_exc()}"
        raise
    finally:
        record.finished = time.time()
        record.cache = lab.summary(first_event)
        record.save(lab.store.home)
    return record
