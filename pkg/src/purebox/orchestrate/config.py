"""Experiment configuration: YAML in, validated dataclasses out, canonical digest."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from purebox.corpus.classes import CANONICAL_CLASSES
from purebox.errors import ConfigInvalid
from purebox.zoo.archs import FAMILIES

PIPELINES = ("transfer", "reversed_transfer", "prior_contaminated", "query_naive", "query_robust")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def digest_of(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass
class CorpusParams:
    source: str = "synthetic"  # synthetic | local | http
    classes: list[str] = field(default_factory=lambda: [c.class_id for c in CANONICAL_CLASSES[:10]])
    per_class_train: int = 200
    per_class_val: int = 40
    per_class_eval: int = 0
    resolution: int = 32
    root: str | None = None  # local source directory
    index_url: str | None = None  # http source listing template
    verdicts: str | None = None  # curation CSV; absent means keep everything
    stream: str = "attacker"
    amplitude: float = 0.12
    noise: float = 0.12
    split_seed: int = 0


@dataclass
class TrainParams:
    initial_lr: float = 5e-4
    decay_factor: float = 10.0
    decay_period_epochs: int = 30
    max_epochs: int = 100
    batch_size: int = 64
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: bool = False


@dataclass
class ModelParams:
    family: str = "small_cnn"
    n_classes: int = 2
    width_scale: float = 1.0
    binary_positive: str | None = None  # one-vs-all model for this class id
    seed_offset: int = 0


@dataclass
class EnsembleParams:
    name: str
    members: list[ModelParams]


@dataclass
class TargetParams:
    name: str
    family: str = "vgg_like_B"
    n_classes: int = 8
    width_scale: float = 1.0
    binary_positive: str | None = None
    checkpoint: str | None = None  # pre-trained handle directory; skips training
    seed_offset: int = 100


@dataclass
class GeneratorParams:
    variants: list[str] = field(default_factory=lambda: ["light"])
    noise: list[str] = field(default_factory=lambda: ["distributional"])
    heavy_base_filters: int = 64
    heavy_res_blocks: int = 6
    budget: float = 10 / 255
    sigma: float = 0.1
    iters: int = 300
    lr: float = 2e-4
    batch_size: int = 32
    noise_per_step: int = 1


@dataclass
class TransferParams:
    n_perturbations: int = 10
    eval_classes: int = 6


@dataclass
class BlendParams:
    n_per_class: int = 20
    eps0: float | None = None
    max_recursions: int = 6
    norm_tolerance: float = 0.05
    pgd_steps: int = 40
    robust_family: str = "res_like_A"
    robust_eps: float = 15 / 255
    robust_pgd_steps: int = 7
    robust_epochs: int = 6
    refine_epochs: int = 4
    refine_lr: float = 0.01
    probe_per_class: int = 10  # near-boundary probes harvested from validation images


@dataclass
class ExperimentConfig:
    run_id: str
    pipeline: str = "transfer"
    seed: int = 0
    attacker_corpus: CorpusParams = field(default_factory=CorpusParams)
    target_corpus: CorpusParams = field(default_factory=lambda: CorpusParams(
        classes=[c.class_id for c in CANONICAL_CLASSES[:6] + CANONICAL_CLASSES[12:14]],
        per_class_eval=50, stream="target"))
    train: TrainParams = field(default_factory=TrainParams)
    ensembles: list[EnsembleParams] = field(default_factory=lambda: [
        EnsembleParams("small_cnn", [ModelParams("small_cnn", 2)])])
    targets: list[TargetParams] = field(default_factory=lambda: [TargetParams("tm")])
    generator: GeneratorParams = field(default_factory=GeneratorParams)
    transfer: TransferParams = field(default_factory=TransferParams)
    blend: BlendParams = field(default_factory=BlendParams)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical(self) -> str:
        """Sorted-key serialisation of everything except the run label."""
        d = self.to_dict()
        d.pop("run_id")
        return canonical_json(d)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _build(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigInvalid(path, f"expected a mapping, got {type(value).__name__}")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        unknown = sorted(set(value) - names)
        if unknown:
            raise ConfigInvalid(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
        kwargs = {k: _build(hints[k], v, f"{path}.{k}" if path else k) for k, v in value.items()}
        try:
            return tp(**kwargs)
        except TypeError as exc:
            raise ConfigInvalid(path or "<root>", str(exc)) from None
    if origin is list:
        if not isinstance(value, list):
            raise ConfigInvalid(path, "expected a list")
        return [_build(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _build(inner[0], value, path)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(path, f"expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigInvalid(path, f"expected a boolean, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigInvalid(path, f"expected a string, got {value!r}")
        return value
    return value


def _positive(path, value):
    if not value > 0:
        raise ConfigInvalid(path, "must be positive")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if not cfg.run_id or "/" in cfg.run_id:
        raise ConfigInvalid("run_id", "must be a non-empty name without '/'")
    if cfg.pipeline not in PIPELINES:
        raise ConfigInvalid("pipeline", f"must be one of {PIPELINES}")
    for name in ("attacker_corpus", "target_corpus"):
        c: CorpusParams = getattr(cfg, name)
        if c.source not in ("synthetic", "local", "http"):
            raise ConfigInvalid(f"{name}.source", "must be synthetic, local or http")
        if c.source == "local" and (not c.root or not Path(c.root).is_dir()):
            raise ConfigInvalid(f"{name}.root", f"local source directory {c.root!r} does not exist")
        if c.source == "http" and not c.index_url:
            raise ConfigInvalid(f"{name}.index_url", "required for http sources")
        if c.verdicts and not Path(c.verdicts).is_file():
            raise ConfigInvalid(f"{name}.verdicts", f"file {c.verdicts!r} does not exist")
        if len(set(c.classes)) != len(c.classes) or len(c.classes) < 2:
            raise ConfigInvalid(f"{name}.classes", "need at least two distinct class ids")
        _positive(f"{name}.resolution", c.resolution)
        _positive(f"{name}.per_class_train", c.per_class_train)
        _positive(f"{name}.per_class_val", c.per_class_val)
    if not cfg.ensembles:
        raise ConfigInvalid("ensembles", "at least one ensemble is required")
    for i, ens in enumerate(cfg.ensembles):
        if not ens.members:
            raise ConfigInvalid(f"ensembles[{i}].members", "ensemble is empty")
        for j, m in enumerate(ens.members):
            _check_model(f"ensembles[{i}].members[{j}]", m.family, m.n_classes, m.binary_positive)
    if not cfg.targets:
        raise ConfigInvalid("targets", "at least one target is required")
    for i, t in enumerate(cfg.targets):
        if t.checkpoint is not None:
            if not (Path(t.checkpoint) / "record.json").is_file():
                raise ConfigInvalid(f"targets[{i}].checkpoint", f"no checkpoint at {t.checkpoint!r}")
        else:
            _check_model(f"targets[{i}]", t.family, t.n_classes, t.binary_positive)
    g = cfg.generator
    for v in g.variants:
        if v not in ("heavy", "light"):
            raise ConfigInvalid("generator.variants", f"unknown variant {v!r}")
    for k in g.noise:
        if k not in ("fixed", "distributional"):
            raise ConfigInvalid("generator.noise", f"unknown noise kind {k!r}")
    if not 0 < g.budget < 1:
        raise ConfigInvalid("generator.budget", "must lie in (0, 1)")
    if g.iters < 0:
        raise ConfigInvalid("generator.iters", "must be non-negative")
    _positive("transfer.n_perturbations", cfg.transfer.n_perturbations)
    _positive("transfer.eval_classes", cfg.transfer.eval_classes)
    _positive("blend.n_per_class", cfg.blend.n_per_class)
    _positive("blend.probe_per_class", cfg.blend.probe_per_class)
    return cfg


def _check_model(path, family, n_classes, binary_positive):
    if family not in FAMILIES:
        raise ConfigInvalid(f"{path}.family", f"unknown family {family!r}")
    if binary_positive is None and n_classes < 2:
        raise ConfigInvalid(f"{path}.n_classes", "must be >= 2")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "config must be a mapping")
    if "run_id" not in raw:
        raise ConfigInvalid("run_id", "missing")
    return validate(_build(ExperimentConfig, raw, ""))


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigInvalid("<file>", str(exc)) from None
    return config_from_dict(raw)
