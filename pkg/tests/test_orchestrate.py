import csv
import io
import json

import pytest
import yaml

from purebox.corpus import CANONICAL_CLASSES
from purebox.errors import ConfigInvalid, EmptyRecords, StageFailed
from purebox.orchestrate import (
    CorpusParams,
    EnsembleParams,
    ExperimentConfig,
    GeneratorParams,
    Lab,
    ModelParams,
    RunRecord,
    TargetParams,
    TrainParams,
    TransferParams,
    config_from_dict,
    emit_report,
    load_config,
    run_experiment,
    validate,
)

IDS = [c.class_id for c in CANONICAL_CLASSES[:4]]


def small_config(run_id="small", **overrides) -> ExperimentConfig:
    """Four 16x16 classes, two-epoch models and a few generator steps: seconds, not minutes."""
    corpus = dict(classes=IDS, per_class_train=30, per_class_val=10, per_class_eval=10, resolution=16,
                  amplitude=0.25, noise=0.05)
    cfg = ExperimentConfig(
        run_id=run_id,
        attacker_corpus=CorpusParams(**corpus),
        target_corpus=CorpusParams(**{**corpus, "classes": IDS[:3] + [CANONICAL_CLASSES[12].class_id]},
                                   stream="target"),
        train=TrainParams(initial_lr=0.05, max_epochs=2, decay_period_epochs=2, batch_size=32),
        ensembles=[EnsembleParams("one", [ModelParams("small_cnn", 3)]),
                   EnsembleParams("bin", [ModelParams("small_cnn", 2, binary_positive=IDS[0])])],
        targets=[TargetParams("tm", "small_cnn", 4), TargetParams("tm_bin", "small_cnn", 2, binary_positive=IDS[1])],
        generator=GeneratorParams(heavy_base_filters=8, heavy_res_blocks=1, iters=3, batch_size=8),
        transfer=TransferParams(n_perturbations=2, eval_classes=3),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="module")
def home(tmp_path_factory):
    return tmp_path_factory.mktemp("home")


@pytest.fixture(scope="module")
def first_run(home):
    return run_experiment(small_config(), lab=Lab(home))


# -- configuration

def test_digest_is_deterministic_and_ignores_run_id():
    a, b = small_config("x"), small_config("y")
    assert a.digest() == b.digest()
    assert a.canonical() == config_from_dict(json.loads(json.dumps(a.to_dict()))).canonical()


def test_digest_changes_with_any_field():
    base = small_config().digest()
    cfg = small_config()
    cfg.generator.iters += 1
    assert cfg.digest() != base
    cfg = small_config()
    cfg.targets[0].seed_offset = 7
    assert cfg.digest() != base


def test_yaml_roundtrip(tmp_path):
    cfg = small_config()
    path = tmp_path / "c.yaml"
    path.write_text(cfg.to_yaml())
    assert load_config(path).to_dict() == cfg.to_dict()


def test_missing_checkpoint_is_config_invalid(tmp_path):
    cfg = small_config(targets=[TargetParams("tm", checkpoint=str(tmp_path / "nope"))])
    with pytest.raises(ConfigInvalid) as info:
        validate(cfg)
    assert info.value.field == "targets[0].checkpoint"


@pytest.mark.parametrize("raw, field", [
    ({"run_id": "r", "bogus": 1}, "bogus"),
    ({"run_id": "r", "seed": "zero"}, "seed"),
    ({"run_id": "r", "generator": {"variants": ["medium"]}}, "generator.variants"),
    ({"run_id": "r", "pipeline": "other"}, "pipeline"),
    ({"run_id": "r", "train": {"lr": 0.1}}, "train.lr"),
])
def test_bad_config_fields_are_named(raw, field):
    with pytest.raises(ConfigInvalid) as info:
        validate(config_from_dict(raw))
    assert info.value.field == field


def test_pipeline_needs_eval_split_on_target_side(tmp_path):
    cfg = small_config(pipeline="prior_contaminated")
    cfg.attacker_corpus.per_class_eval = 0
    with pytest.raises(ConfigInvalid):
        run_experiment(cfg, home=tmp_path)
    assert not (tmp_path / "runs").exists()


# -- runs and caching

def test_run_record_contents(first_run, home):
    assert first_run.status == "ok"
    targets = {e["target"] for e in first_run.entries}
    assert targets == {"tm", "tm_bin"}
    assert len(first_run.entries) == 2 * 2  # ensembles x targets, one variant and noise kind
    for e in first_run.entries:
        assert e["report"]["n_perturbations"] == 2
    saved = RunRecord.load(home / "runs" / "small" / "record.json")
    assert saved.to_json() == first_run.to_json()
    index = json.loads((home / "runs" / "index.json").read_text())
    assert index["small"]["status"] == "ok"


def test_second_run_rebuilds_nothing(first_run, home):
    again = run_experiment(small_config("small-again"), lab=Lab(home))
    assert again.cache["built"] == 0
    assert again.cache["cache_hits"] > 0
    assert [e["report"] for e in again.entries] == [e["report"] for e in first_run.entries]


def test_shared_lab_counts_each_run_separately(first_run, home):
    lab = Lab(home)
    run_experiment(small_config("shared-a"), lab=lab)
    b = run_experiment(small_config("shared-b"), lab=lab)
    assert len(b.cache["events"]) == len(lab.events) // 2
    assert b.cache["built"] == 0


def test_prior_contaminated_uses_one_corpus(home):
    rec = run_experiment(small_config("prior", pipeline="prior_contaminated"), lab=Lab(home))
    assert rec.artifacts["corpus/substitute"] == rec.artifacts["corpus/target"]


def test_reversed_swaps_corpora(home, first_run):
    rec = run_experiment(small_config("rev", pipeline="reversed_transfer"), lab=Lab(home))
    assert rec.artifacts["corpus/substitute"] == first_run.artifacts["corpus/target"]
    assert rec.artifacts["corpus/target"] == first_run.artifacts["corpus/substitute"]


def test_failed_stage_is_named_and_recorded(tmp_path):
    cfg = small_config("broken", ensembles=[EnsembleParams("x", [ModelParams("small_cnn", 2,
                                                                             binary_positive="n00000000")])])
    with pytest.raises(StageFailed) as info:
        run_experiment(cfg, home=tmp_path)
    assert info.value.stage == "substitutes"
    rec = RunRecord.load(tmp_path / "runs" / "broken" / "record.json")
    assert rec.status == "failed" and "substitutes" in rec.error


# -- reports

def test_report_text_table(first_run):
    text = emit_report([first_run], "text_table")
    assert "target=tm phase=baseline" in text and "target=tm_bin phase=baseline" in text
    assert text.count("| one ") == 2


def test_report_json_roundtrip(first_run):
    out = json.loads(emit_report([first_run], "json"))
    drops = {(t["target"], r["ensemble"]): r["mean_drop"] for t in out["tables"] for r in t["rows"]}
    for e in first_run.entries:
        assert drops[(e["target"], e["ensemble"])] == e["report"]["accuracy_drop"]


def test_report_csv_roundtrip(first_run):
    rows = list(csv.DictReader(io.StringIO(emit_report([first_run], "csv"))))
    assert len(rows) == 4
    for e in first_run.entries:
        match = [r for r in rows if r["target"] == e["target"] and r["ensemble"] == e["ensemble"]]
        assert float(match[0]["mean_drop"]) == e["report"]["accuracy_drop"]


def test_report_nine_rows():
    entries = []
    for s in (1, 2, 3):
        for c in (2, 14, 25):
            rep = {"clean_accuracy": 1.0, "adversarial_accuracy": 0.5, "accuracy_drop": 50.0, "fooling_rate": 0.5,
                   "n_images": 4, "n_perturbations": 1, "config_digest": "", "eval_digest": "e"}
            entries.append({"phase": "baseline", "ensemble": f"{s}x{c}", "n_sms": s, "n_classes": c,
                            "variant": "light", "noise": "distributional", "target": "tm", "report": rep})
    rec = RunRecord("grid", "d", "transfer", entries=entries)
    table = emit_report([rec], "text_table").strip().splitlines()
    assert len(table) == 1 + 2 + 9


def test_report_without_records():
    with pytest.raises(EmptyRecords):
        emit_report([], "json")
    with pytest.raises(EmptyRecords):
        emit_report([RunRecord("r", "d", "transfer")], "csv")


def test_config_yaml_is_plain(tmp_path):
    data = yaml.safe_load(small_config().to_yaml())
    assert data["generator"]["iters"] == 3 and data["targets"][1]["binary_positive"] == IDS[1]
