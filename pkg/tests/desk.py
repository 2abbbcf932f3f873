"""Desk-scale experiment definitions shared by the acceptance suite.

Ten synthetic classes at 32x32 on the attacker side. The target side draws
from a disjoint image stream; its 8 classes overlap the attacker's first six.
"""
from __future__ import annotations

import torch

from purebox.corpus import CANONICAL_CLASSES
from purebox.genattack import GeneratorSpec, NoiseMode, generate_perturbations
from purebox.orchestrate import (
    BlendParams,
    CorpusParams,
    EnsembleParams,
    ExperimentConfig,
    GeneratorParams,
    Lab,
    ModelParams,
    TargetParams,
    TrainParams,
    TransferParams,
)
from purebox.transfer import TargetOracle, evaluate_transfer

SEEDS = (0, 1, 2)
ATTACKER_IDS = [c.class_id for c in CANONICAL_CLASSES[:10]]
TARGET_IDS = [c.class_id for c in CANONICAL_CLASSES[:6] + CANONICAL_CLASSES[12:14]]
SM_FAMILIES = ("res_like_A", "small_cnn", "dense_like")


def positive(seed: int) -> str:
    """Positive class of the one-vs-all substitutes; seeds walk through the six shared classes."""
    return ATTACKER_IDS[seed % 6]


def attacker_corpus() -> CorpusParams:
    return CorpusParams(classes=ATTACKER_IDS, per_class_train=200, per_class_val=40, per_class_eval=50,
                        stream="attacker")


def target_corpus() -> CorpusParams:
    return CorpusParams(classes=TARGET_IDS, per_class_train=200, per_class_val=40, per_class_eval=50,
                        stream="target")


def train_params() -> TrainParams:
    return TrainParams(initial_lr=0.05, max_epochs=8, decay_period_epochs=6, batch_size=64)


def generator_params(noise=("distributional",)) -> GeneratorParams:
    return GeneratorParams(variants=["light"], noise=list(noise), iters=300, lr=1e-3, batch_size=32)


def ensemble(name: str, n_members: int, n_classes: int) -> EnsembleParams:
    return EnsembleParams(name, [ModelParams(f, n_classes) for f in SM_FAMILIES[:n_members]])


def binary_ensemble(name: str, n_members: int, seed: int) -> EnsembleParams:
    return EnsembleParams(name, [ModelParams(f, 2, binary_positive=positive(seed)) for f in SM_FAMILIES[:n_members]])


def multi_targets() -> list[TargetParams]:
    return [TargetParams("tm_vgg8", "vgg_like_B", 8), TargetParams("tm_res8", "res_like_B", 8, seed_offset=101)]


def base(run_id: str, seed: int, **kw) -> ExperimentConfig:
    return ExperimentConfig(run_id=run_id, seed=seed, attacker_corpus=attacker_corpus(),
                            target_corpus=target_corpus(), train=train_params(),
                            transfer=TransferParams(n_perturbations=10), **kw)


def noise_config(seed: int) -> ExperimentConfig:
    """One one-vs-all substitute; fixed vs distributional generator noise."""
    return base(f"noise-s{seed}", seed, ensembles=[binary_ensemble("1sm_bin", 1, seed)], targets=multi_targets(),
                generator=generator_params(["distributional", "fixed"]))


def ensemble_config(seed: int) -> ExperimentConfig:
    """1 vs 3 one-vs-all substitutes, and 3 binary vs 3 eight-class substitutes."""
    return base(f"ensemble-s{seed}", seed,
                ensembles=[binary_ensemble("1sm_bin", 1, seed), binary_ensemble("3sm_bin", 3, seed),
                           ensemble("3sm_8c", 3, 8)],
                targets=multi_targets(), generator=generator_params())


BINARY_TARGETS = ("tm_vgg_bin", "tm_res_bin")
MULTI_TARGETS = ("tm_vgg8", "tm_res10")


def reversed_config(seed: int) -> ExperimentConfig:
    """Substitutes on the target-side corpus; binary and multi-class targets on the attacker corpus."""
    targets = [
        TargetParams("tm_vgg_bin", "vgg_like_B", 2, binary_positive=ATTACKER_IDS[0], seed_offset=102),
        TargetParams("tm_res_bin", "res_like_B", 2, binary_positive=ATTACKER_IDS[1], seed_offset=103),
        TargetParams("tm_vgg8", "vgg_like_B", 8, seed_offset=104),
        TargetParams("tm_res10", "res_like_B", 10, seed_offset=105),
    ]
    return base(f"reversed-s{seed}", seed, pipeline="reversed_transfer", ensembles=[ensemble("3sm_8c", 3, 8)],
                targets=targets, generator=generator_params())


def query_config(seed: int) -> ExperimentConfig:
    """Robust-blend harvest against the 8-class target, then substitute refinement."""
    return base(f"query-s{seed}", seed, pipeline="query_robust", ensembles=[ensemble("1sm_8c", 1, 8)],
                targets=multi_targets()[:1], generator=generator_params(),
                blend=BlendParams(n_per_class=40, probe_per_class=20, eps0=48 / 255, robust_family="res_like_A",
                                  robust_eps=15 / 255, robust_pgd_steps=5, robust_epochs=6, refine_epochs=4,
                                  refine_lr=0.01, pgd_steps=20))


def whitebox(lab: Lab, seed: int) -> tuple[float, dict]:
    """Drop of one 8-class substitute's own validation accuracy under its light distributional generator."""
    cfg = query_config(seed)
    g, n_classes = cfg.generator, 8
    corpus = lab.corpus(cfg.attacker_corpus)
    member = cfg.ensembles[0].members[0]
    sm = lab.classifier(corpus, member.family, n_classes, cfg.train, seed * 1000 + member.seed_offset)
    k = cfg.transfer.eval_classes
    shape = tuple(corpus.split("train", k).images.shape[1:])
    spec = GeneratorSpec.heavy(g.heavy_base_filters, g.heavy_res_blocks, g.budget).light_counterpart()
    mode = NoiseMode.distributional(shape, g.sigma)
    torch.manual_seed(seed)
    gen = lab.generator([sm], corpus, k, spec, mode, iters=g.iters, lr=g.lr, batch_size=g.batch_size,
                        noise_per_step=g.noise_per_step, seed=seed)
    perts = generate_perturbations(gen, mode, g.budget, cfg.transfer.n_perturbations, base_seed=seed * 7919)
    report = evaluate_transfer(perts, TargetOracle.from_classifier(sm), corpus.split("val", n_classes))
    return report.accuracy_drop, report.to_dict()
