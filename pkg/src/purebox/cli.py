"""Command-line entry point: ``purebox <group> <command> ...``.

Exit codes: 0 success, 1 usage or data error, 2 invalid config, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from purebox import __version__
from purebox.errors import ConfigInvalid, PureboxError, StageFailed

log = logging.getLogger("purebox")


# -- helpers

def _open_corpus(directory):
    from purebox.corpus import Manifest, classes_by_id

    directory = Path(directory)
    manifest = Manifest.load(directory / "manifest.json")
    ids = list(dict.fromkeys(e.class_id for e in manifest.entries))
    return manifest, directory / "images", classes_by_id(ids)


def _classes_arg(value):
    from purebox.corpus import CANONICAL_CLASSES, classes_by_id, select_class_subset

    if value.isdigit():
        return select_class_subset(CANONICAL_CLASSES, int(value))
    return classes_by_id([v for v in value.split(",") if v])


def _load_set(corpus_dir, split, n_classes, resolution):
    from purebox.corpus import load_split

    manifest, root, classes = _open_corpus(corpus_dir)
    classes = classes[:n_classes] if n_classes else classes
    return load_split(manifest, root, classes, split, resolution), [c.class_id for c in classes]


def _train_config(args):
    from purebox.zoo import TrainConfig

    return TrainConfig(initial_lr=args.lr, max_epochs=args.epochs, decay_period_epochs=args.decay_period,
                       batch_size=args.batch_size, seed=args.seed)


def _oracle(args):
    from purebox.transfer import HttpOracle, SubprocessOracle, TargetOracle
    from purebox.zoo import ClassifierHandle

    if args.target:
        return TargetOracle.from_classifier(ClassifierHandle.load(args.target), Path(args.target).name)
    if args.target_cmd:
        proc = SubprocessOracle(args.target_cmd.split())
        return TargetOracle.external(proc)
    return TargetOracle.external(HttpOracle(args.target_url), max_in_flight=4)


def _print_json(obj):
    print(json.dumps(obj, indent=1, sort_keys=True, default=str))


# -- corpus

def cmd_corpus_acquire(args):
    from purebox.corpus import HttpSource, LocalDirectorySource, SyntheticSource, acquire_many

    classes = _classes_arg(args.classes)
    if args.source == "synthetic":
        source = SyntheticSource(args.limit, args.resolution, args.stream, amplitude=args.amplitude, noise=args.noise)
    elif args.source == "local":
        source = LocalDirectorySource(args.root)
    else:
        source = HttpSource(args.index_url, rate_limit=args.rate_limit)
    out = Path(args.out)
    manifest = acquire_many(classes, source, args.limit, store_root=out / "images", workers=args.workers)
    manifest.save(out / "manifest.json")
    _print_json(manifest.counts())


def cmd_corpus_curate(args):
    from purebox.corpus import Manifest, accept_all, curate, load_verdicts, save_verdicts

    manifest = Manifest.load(args.manifest)
    if args.accept_all:
        verdicts = accept_all(manifest)
        save_verdicts(verdicts, args.verdicts)
    else:
        verdicts = load_verdicts(args.verdicts)
    curated = curate(manifest, verdicts)
    curated.save(args.out or args.manifest)
    print(f"kept {len(curated.entries)} of {len(manifest.entries)} images")


def cmd_corpus_split(args):
    from purebox.corpus import Manifest, split_dataset

    manifest = split_dataset(Manifest.load(args.manifest), args.train, args.val, args.seed)
    manifest.save(args.out or args.manifest)
    _print_json(manifest.counts())


# -- zoo

def _zoo_data(args):
    from purebox.corpus import one_vs_all
    from purebox.zoo import TrainData

    if args.binary_positive:
        train, ids = _load_set(args.corpus, "train", None, args.resolution)
        val, _ = _load_set(args.corpus, "val", None, args.resolution)
        pos = ids.index(args.binary_positive)
        return TrainData(one_vs_all(train, pos, args.seed), one_vs_all(val, pos, args.seed + 1),
                         [f"not_{args.binary_positive}", args.binary_positive])
    train, ids = _load_set(args.corpus, "train", args.classes, args.resolution)
    val, _ = _load_set(args.corpus, "val", args.classes, args.resolution)
    return TrainData(train, val, ids)


def cmd_zoo_train(args):
    from purebox.zoo import ArchSpec, adversarial_train, set_deterministic, train_classifier

    set_deterministic()
    data = _zoo_data(args)
    arch = ArchSpec(args.family, len(data.class_map), args.width_scale)
    if args.robust_eps is not None:
        handle = adversarial_train(arch, data, _train_config(args), args.robust_eps, pgd_steps=args.pgd_steps)
    else:
        handle = train_classifier(arch, data, _train_config(args))
    handle.run_id = Path(args.out).name
    handle.save(args.out)
    print(f"best epoch {handle.best_epoch} val accuracy {handle.best_val_accuracy:.4f}")


def cmd_zoo_eval(args):
    from purebox.zoo import ClassifierHandle, evaluate_accuracy

    handle = ClassifierHandle.load(args.model)
    split, _ = _load_set(args.corpus, args.split, handle.num_classes, args.resolution)
    print(f"{evaluate_accuracy(handle, split):.4f}")


def cmd_zoo_serve(args):
    from purebox.transfer.wire import make_http_server, serve_stdio
    from purebox.zoo import ClassifierHandle

    handle = ClassifierHandle.load(args.model).freeze()

    def label_fn(x):
        return int(handle.predict(torch.from_numpy(np.asarray(x, dtype=np.float32))))

    if args.port is None:
        serve_stdio(label_fn)
    else:
        server = make_http_server(label_fn, args.host, args.port)
        print(f"serving on http://{args.host}:{server.server_address[1]}/", flush=True)
        server.serve_forever()


# -- generators

def _noise_mode(kind, shape, seed, sigma):
    from purebox.genattack import NoiseMode

    return NoiseMode.distributional(shape, sigma) if kind == "distributional" else NoiseMode.fixed(shape, seed, sigma)


def cmd_gen_train(args):
    from purebox.genattack import GeneratorSpec, build_generator, train_generator
    from purebox.zoo import ClassifierHandle, set_deterministic

    set_deterministic()
    ensemble = [ClassifierHandle.load(m).freeze() for m in args.models]
    data, _ = _load_set(args.corpus, "train", args.classes, args.resolution)
    spec = GeneratorSpec.heavy(norm_budget=args.budget)
    if args.variant == "light":
        spec = spec.light_counterpart()
    mode = _noise_mode(args.noise, tuple(data.images.shape[1:]), args.seed, args.sigma)
    gen = build_generator(spec, seed=args.seed)
    train_generator(gen, ensemble, data, mode, args.budget, args.iters, args.seed, batch_size=args.batch_size,
                    lr=args.gen_lr)
    gen.run_id = Path(args.out).name
    gen.save(args.out)
    print(f"final loss {gen.loss_trace[-1]:.4f}" if gen.loss_trace else "untrained generator saved")


def cmd_gen_emit(args):
    from purebox.genattack import GeneratorHandle, generate_perturbations

    gen = GeneratorHandle.load(args.generator)
    shape = (3, args.resolution, args.resolution)
    mode = _noise_mode(args.noise, shape, args.noise_seed, args.sigma)
    budget = args.budget if args.budget is not None else gen.spec.norm_budget
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(generate_perturbations(gen, mode, budget, args.n, args.seed)):
        p.save(out / f"delta_{i:03d}.f32")
    print(f"wrote {args.n} perturbation(s) to {out}")


# -- transfer

def _perturbations(directory):
    from purebox.genattack import Perturbation

    return [Perturbation.load(p) for p in sorted(Path(directory).glob("*.f32"))]


def cmd_transfer_eval(args):
    from purebox.transfer import evaluate_transfer

    perts = _perturbations(args.perturbations)
    eval_set, _ = _load_set(args.corpus, args.split, args.classes, args.resolution)
    report = evaluate_transfer(perts, _oracle(args), eval_set)
    print(report.to_json())


def cmd_transfer_grid(args):
    from purebox.transfer import GridEntry, GridKey, TransferReport, aggregate_grid

    entries = []
    for path in args.entries:
        for e in json.loads(Path(path).read_text()):
            entries.append(GridEntry(GridKey(e["ensemble"], e["n_sms"], e["n_classes"]),
                                     TransferReport.from_dict(e["report"]), e.get("variant", "")))
    table = aggregate_grid(entries)
    print({"csv": table.to_csv, "json": table.to_json, "text_table": table.to_text}[args.format](), end="")


# -- blending

def _read_image(path, resolution):
    from purebox.corpus import ImageSample, load_pixels

    return ImageSample(load_pixels(path, resolution), -1, str(path))


def _write_image(sample, path):
    from purebox.corpus import encode_png

    Path(path).write_bytes(encode_png(sample.pixels))


def cmd_blend_naive(args):
    from purebox.blendquery import naive_blend

    out = naive_blend(_read_image(args.a, args.resolution), _read_image(args.b, args.resolution), args.alpha)
    _write_image(out, args.out)


def cmd_blend_robust(args):
    from purebox.blendquery import BlendConfig, robust_blend
    from purebox.zoo import ClassifierHandle

    model = ClassifierHandle.load(args.model)
    cfg = BlendConfig(method="robust", pgd_steps=args.pgd_steps)
    _write_image(robust_blend(model, _read_image(args.image, args.resolution), args.target_label, args.eps, cfg),
                 args.out)


def cmd_blend_harvest(args):
    from purebox.blendquery import BlendConfig, QueryLedger, harvest_boundary_set
    from purebox.zoo import ClassifierHandle

    sources, _ = _load_set(args.corpus, "train", args.classes, args.resolution)
    robust = ClassifierHandle.load(args.robust_model) if args.robust_model else None
    cfg = BlendConfig(method=args.method, eps0=args.eps0, max_recursions=args.max_recursions)
    ledger = QueryLedger(args.budget)
    oracle = _oracle(args)
    res = harvest_boundary_set(sources, oracle, cfg, args.n_per_class, ledger, robust_model=robust,
                               partners=sources if args.method == "naive" else None, seed=args.seed,
                               search=args.search)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.save(out / "images", oracle.metadata.get("class_map"))
    torch.save({"images": res.dataset.images, "labels": res.dataset.labels, "refs": res.dataset.refs},
               out / "boundary.pt")
    _print_json({"pairs": len(res.pairs), "skipped": res.skipped, **ledger.to_dict()})


def cmd_blend_refine(args):
    from purebox.blendquery import refine_substitute
    from purebox.corpus import LabeledSet
    from purebox.zoo import ClassifierHandle

    sm = ClassifierHandle.load(args.model)
    blob = torch.load(Path(args.boundary) / "boundary.pt", weights_only=True)
    boundary = LabeledSet(blob["images"], blob["labels"], list(blob["refs"]))
    train, _ = _load_set(args.corpus, "train", sm.num_classes, args.resolution)
    val, _ = _load_set(args.corpus, "val", sm.num_classes, args.resolution)
    refined = refine_substitute(sm, boundary, train, _train_config(args), val)
    refined.save(args.out)
    print(f"refined val accuracy {refined.best_val_accuracy:.4f}")


# -- orchestration

def cmd_run(args):
    from purebox.orchestrate import load_config, run_experiment

    path = args.experiment or args.config
    if not path:
        raise ConfigInvalid("config", "an experiment file is required")
    cfg = load_config(path)
    if args.run_id:
        cfg.run_id = args.run_id
    record = run_experiment(cfg, home=args.home)
    print(f"run {record.run_id} {record.status}: {len(record.entries)} result(s), "
          f"{record.cache['cache_hits']} cached / {record.cache['built']} built")


def cmd_report(args):
    from purebox.orchestrate import RunRecord, default_home, emit_report

    home = Path(args.home) if args.home else default_home()
    if args.run_ids:
        paths = [home / "runs" / r / "record.json" for r in args.run_ids]
    else:
        paths = sorted(p for p in (home / "runs").glob(f"{args.runs}/record.json"))
    records = [RunRecord.load(p) for p in paths]
    fmt = "text_table" if args.format == "table" else args.format
    print(emit_report(records, fmt), end="")


# -- parser

class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose required options may instead come from ``--config``."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.required_dests: list[str] = []

    def add_argument(self, *args, required_opt=False, **kw):
        action = super().add_argument(*args, **kw)
        if required_opt:
            self.required_dests.append(action.dest)
        return action

    def add_command(self, subparsers, name, **kw):
        p = subparsers.add_parser(name, **kw)
        p.add_argument("--config", help="YAML file of option values; explicit flags win")
        p.set_defaults(_parser=p)
        return p


def _merge_config(args) -> None:
    import yaml

    p = args._parser
    if getattr(args, "config", None) and args.group != "run":
        try:
            values = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigInvalid("config", str(exc)) from None
        if not isinstance(values, dict):
            raise ConfigInvalid("config", "expected a mapping of option names to values")
        for key, value in values.items():
            dest = key.replace("-", "_")
            if not hasattr(args, dest) or dest.startswith("_"):
                raise ConfigInvalid(key, f"unknown option for '{args.group} {getattr(args, 'cmd', '')}'")
            if getattr(args, dest) == p.get_default(dest):
                setattr(args, dest, value)
    missing = [d for d in p.required_dests if getattr(args, d, None) is None]
    if missing:
        raise ConfigInvalid(missing[0], "required (flag or --config entry)")
    if any(hasattr(args, k) for k in ("target", "target_cmd", "target_url")):
        chosen = [k for k in ("target", "target_cmd", "target_url") if getattr(args, k, None)]
        if len(chosen) != 1:
            raise ConfigInvalid("target", "give exactly one of --target, --target-cmd, --target-url")

def _add_resolution(p, default=32):
    p.add_argument("--resolution", type=int, default=default)


def _add_training(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--decay-period", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)


def _add_target(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--target", help="classifier checkpoint directory")
    g.add_argument("--target-cmd", help="command speaking the wire protocol on stdin/stdout")
    g.add_argument("--target-url", help="HTTP endpoint speaking the wire protocol")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="purebox", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    groups = ap.add_subparsers(dest="group", required=True)

    corpus = groups.add_parser("corpus").add_subparsers(dest="cmd", required=True)
    p = ap.add_command(corpus, "acquire")
    p.add_argument("--source", choices=["synthetic", "local", "http"], default="synthetic")
    p.add_argument("--classes", default="10", help="count (first k) or comma-separated class ids")
    p.add_argument("--limit", type=int, default=300)
    p.add_argument("--root", help="directory for --source local")
    p.add_argument("--index-url", help="listing URL template with {class_id} for --source http")
    p.add_argument("--rate-limit", type=float, default=5.0)
    p.add_argument("--stream", default="attacker")
    p.add_argument("--amplitude", type=float, default=0.18, help="synthetic class-signal strength")
    p.add_argument("--noise", type=float, default=0.08, help="synthetic pixel noise")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required_opt=True)
    _add_resolution(p)
    p.set_defaults(fn=cmd_corpus_acquire)
    p = ap.add_command(corpus, "curate")
    p.add_argument("--manifest", required_opt=True)
    p.add_argument("--verdicts", required=True, help="hash,keep CSV")
    p.add_argument("--accept-all", action="store_true", help="write an all-keep verdict file first")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_corpus_curate)
    p = ap.add_command(corpus, "split")
    p.add_argument("--manifest", required_opt=True)
    p.add_argument("--train", type=int, required_opt=True)
    p.add_argument("--val", type=int, required_opt=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_corpus_split)

    zoo = groups.add_parser("zoo").add_subparsers(dest="cmd", required=True)
    for name in ("train", "train-robust"):
        p = ap.add_command(zoo, name)
        p.add_argument("--corpus", required_opt=True)
        p.add_argument("--family", default="small_cnn")
        p.add_argument("--classes", type=int, default=None, help="use the first k corpus classes")
        p.add_argument("--binary-positive")
        p.add_argument("--width-scale", type=float, default=1.0)
        p.add_argument("--out", required_opt=True)
        _add_training(p)
        _add_resolution(p)
        if name == "train-robust":
            p.add_argument("--robust-eps", type=float, default=15 / 255)
            p.add_argument("--pgd-steps", type=int, default=7)
        else:
            p.set_defaults(robust_eps=None)
        p.set_defaults(fn=cmd_zoo_train)
    p = ap.add_command(zoo, "eval")
    p.add_argument("--model", required_opt=True)
    p.add_argument("--corpus", required_opt=True)
    p.add_argument("--split", default="eval")
    _add_resolution(p)
    p.set_defaults(fn=cmd_zoo_eval)
    p = ap.add_command(zoo, "serve", help="answer wire-protocol label queries for a checkpoint")
    p.add_argument("--model", required_opt=True)
    p.add_argument("--port", type=int, help="serve HTTP on this port instead of stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=cmd_zoo_serve)

    gen = groups.add_parser("gen").add_subparsers(dest="cmd", required=True)
    p = ap.add_command(gen, "train")
    p.add_argument("--models", nargs="+", required_opt=True)
    p.add_argument("--corpus", required_opt=True)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--variant", choices=["heavy", "light"], default="light")
    p.add_argument("--noise", choices=["fixed", "distributional"], default="distributional")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--budget", type=float, default=10 / 255)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--gen-lr", type=float, default=2e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required_opt=True)
    _add_resolution(p)
    p.set_defaults(fn=cmd_gen_train)
    p = ap.add_command(gen, "emit")
    p.add_argument("--generator", required_opt=True)
    p.add_argument("--noise", choices=["fixed", "distributional"], default="distributional")
    p.add_argument("--noise-seed", type=int, default=0, help="seed of the frozen input for --noise fixed")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--budget", type=float)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required_opt=True)
    _add_resolution(p)
    p.set_defaults(fn=cmd_gen_emit)

    tr = groups.add_parser("transfer").add_subparsers(dest="cmd", required=True)
    p = ap.add_command(tr, "eval")
    p.add_argument("--perturbations", required_opt=True)
    p.add_argument("--corpus", required_opt=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--classes", type=int, default=None)
    _add_target(p)
    _add_resolution(p)
    p.set_defaults(fn=cmd_transfer_eval)
    p = ap.add_command(tr, "grid")
    p.add_argument("entries", nargs="+", help="JSON files with lists of {ensemble, n_sms, n_classes, variant, report}")
    p.add_argument("--format", choices=["csv", "json", "text_table"], default="text_table")
    p.set_defaults(fn=cmd_transfer_grid)

    bl = groups.add_parser("blend").add_subparsers(dest="cmd", required=True)
    p = ap.add_command(bl, "naive")
    p.add_argument("--a", required_opt=True)
    p.add_argument("--b", required_opt=True)
    p.add_argument("--alpha", type=float, required_opt=True)
    p.add_argument("--out", required_opt=True)
    _add_resolution(p)
    p.set_defaults(fn=cmd_blend_naive)
    p = ap.add_command(bl, "robust")
    p.add_argument("--model", required_opt=True)
    p.add_argument("--image", required_opt=True)
    p.add_argument("--target-label", type=int, required_opt=True)
    p.add_argument("--eps", type=float, default=15 / 255)
    p.add_argument("--pgd-steps", type=int, default=40)
    p.add_argument("--out", required_opt=True)
    _add_resolution(p)
    p.set_defaults(fn=cmd_blend_robust)
    p = ap.add_command(bl, "harvest")
    p.add_argument("--corpus", required_opt=True)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--method", choices=["naive", "robust"], default="robust")
    p.add_argument("--robust-model")
    p.add_argument("--eps0", type=float)
    p.add_argument("--max-recursions", type=int, default=6)
    p.add_argument("--n-per-class", type=int, default=20)
    p.add_argument("--budget", type=int, help="total query cap")
    p.add_argument("--search", choices=["bisect", "sweep"], default="bisect")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required_opt=True)
    _add_target(p)
    _add_resolution(p)
    p.set_defaults(fn=cmd_blend_harvest)
    p = ap.add_command(bl, "refine")
    p.add_argument("--model", required_opt=True)
    p.add_argument("--boundary", required=True, help="directory written by 'blend harvest'")
    p.add_argument("--corpus", required_opt=True)
    p.add_argument("--out", required_opt=True)
    _add_training(p)
    _add_resolution(p)
    p.set_defaults(fn=cmd_blend_refine)

    p = ap.add_command(groups, "run", help="run an experiment config")
    p.add_argument("experiment", nargs="?", help="experiment YAML (same as --config)")
    p.add_argument("--run-id")
    p.add_argument("--home", default=os.environ.get("PUREBOX_HOME"))
    p.set_defaults(fn=cmd_run)
    p = ap.add_command(groups, "report", help="grid tables from stored runs")
    p.add_argument("run_ids", nargs="*")
    p.add_argument("--runs", default="*", help="glob over run ids")
    p.add_argument("--format", choices=["csv", "json", "text_table", "table"], default="text_table")
    p.add_argument("--home", default=os.environ.get("PUREBOX_HOME"))
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        _merge_config(args)
        args.fn(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PureboxError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
