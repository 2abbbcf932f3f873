import json
import subprocess
import sys

import pytest
import yaml

from purebox.cli import main
from test_orchestrate import small_config


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A four-class corpus with a trained classifier, built through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    corpus = d / "corpus"
    assert main(["corpus", "acquire", "--classes", "4", "--limit", "40", "--resolution", "16",
                 "--amplitude", "0.25", "--noise", "0.05", "--out", str(corpus)]) == 0
    assert main(["corpus", "curate", "--manifest", str(corpus / "manifest.json"), "--accept-all",
                 "--verdicts", str(d / "verdicts.csv")]) == 0
    assert main(["corpus", "split", "--manifest", str(corpus / "manifest.json"), "--train", "24",
                 "--val", "8"]) == 0
    assert main(["zoo", "train", "--corpus", str(corpus), "--resolution", "16", "--family", "res_like_A", "--epochs", "6", "--lr", "0.05",
                 "--batch-size", "32", "--out", str(d / "sm")]) == 0
    return d


def test_version_and_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    with pytest.raises(SystemExit) as info:
        main(["corpus"])
    assert info.value.code == 2


def test_corpus_layout(work):
    manifest = json.loads((work / "corpus" / "manifest.json").read_text())
    assert manifest
    assert len(list((work / "corpus" / "images").rglob("*.png"))) == 4 * 40


def test_zoo_eval_prints_accuracy(work, capsys):
    assert main(["zoo", "eval", "--model", str(work / "sm"), "--corpus", str(work / "corpus"),
                 "--resolution", "16"]) == 0
    assert float(capsys.readouterr().out.strip()) >= 0.8


def test_generator_to_transfer_chain(work, capsys):
    gen, perts = work / "gen", work / "perts"
    assert main(["gen", "train", "--models", str(work / "sm"), "--corpus", str(work / "corpus"), "--classes", "4",
                 "--resolution", "16", "--iters", "2", "--batch-size", "8", "--out", str(gen)]) == 0
    assert main(["gen", "emit", "--generator", str(gen), "--n", "3", "--resolution", "16", "--out", str(perts)]) == 0
    assert len(list(perts.glob("*.f32"))) == 3
    capsys.readouterr()
    assert main(["transfer", "eval", "--perturbations", str(perts), "--corpus", str(work / "corpus"),
                 "--target", str(work / "sm"), "--resolution", "16"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_perturbations"] == 3
    assert report["accuracy_drop"] == pytest.approx(100 * (report["clean_accuracy"] - report["adversarial_accuracy"]))


def test_transfer_eval_through_subprocess_target(work, capsys):
    perts = work / "zero"
    perts.mkdir()
    from purebox.genattack import Perturbation

    Perturbation.zeros((3, 16, 16)).save(perts / "delta_000.f32")
    serve = f"{sys.executable} -m purebox.cli zoo serve --model {work / 'sm'}"
    assert main(["transfer", "eval", "--perturbations", str(perts), "--corpus", str(work / "corpus"),
                 "--target-cmd", serve, "--resolution", "16"]) == 0
    assert json.loads(capsys.readouterr().out)["accuracy_drop"] == 0.0


def test_options_from_config_file(work, tmp_path, capsys):
    opts = tmp_path / "eval.yaml"
    opts.write_text(yaml.safe_dump({"model": str(work / "sm"), "corpus": str(work / "corpus"), "resolution": 16}))
    assert main(["zoo", "eval", "--config", str(opts)]) == 0
    flag = float(capsys.readouterr().out)
    assert main(["zoo", "eval", "--config", str(opts), "--split", "val"]) == 0
    assert 0 <= flag <= 1 and float(capsys.readouterr().out) >= 0


def test_missing_required_option_is_config_error(capsys):
    assert main(["zoo", "eval", "--model", "x"]) == 2
    assert "corpus" in capsys.readouterr().err


def test_unknown_config_key_is_config_error(tmp_path, capsys):
    opts = tmp_path / "bad.yaml"
    opts.write_text("model: x\nflavour: sweet\n")
    assert main(["zoo", "eval", "--config", str(opts), "--corpus", "y"]) == 2
    assert "flavour" in capsys.readouterr().err


def test_two_targets_is_config_error(work):
    assert main(["transfer", "eval", "--perturbations", "p", "--corpus", "c", "--target", "a"]) == 1
    assert main(["blend", "harvest", "--corpus", str(work / "corpus"), "--out", "o"]) == 2


def test_missing_files_exit_one(tmp_path):
    assert main(["zoo", "eval", "--model", str(tmp_path / "none"), "--corpus", str(tmp_path)]) == 1


def test_blend_harvest_and_refine(work, capsys):
    out = work / "harvest"
    assert main(["blend", "harvest", "--corpus", str(work / "corpus"), "--classes", "4", "--method", "naive",
                 "--n-per-class", "2", "--target", str(work / "sm"), "--resolution", "16", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["total_queries"] == sum(summary["per_sample"].values())
    assert 0 < summary["pairs"] <= 8
    assert len(list((out / "images").rglob("*.json"))) == 2 * summary["pairs"]
    assert main(["blend", "refine", "--model", str(work / "sm"), "--boundary", str(out), "--corpus",
                 str(work / "corpus"), "--epochs", "1", "--lr", "0.01", "--resolution", "16",
                 "--out", str(work / "refined")]) == 0
    assert (work / "refined" / "record.json").is_file()


def test_run_and_report(tmp_path, capsys):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(small_config("cli-run").to_yaml())
    home = tmp_path / "home"
    assert main(["run", str(cfg), "--home", str(home)]) == 0
    assert "cli-run ok" in capsys.readouterr().out
    assert main(["report", "--home", str(home), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("target,phase,ensemble") and len(lines) == 5
    assert main(["report", "cli-run", "--home", str(home), "--format", "table"]) == 0
    assert "target=tm phase=baseline" in capsys.readouterr().out


def test_run_invalid_config_exits_two(tmp_path):
    raw = small_config("bad").to_dict()
    raw["generator"]["variants"] = ["medium"]
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(raw))
    assert main(["run", str(path), "--home", str(tmp_path)]) == 2


def test_run_stage_failure_exits_three(tmp_path, capsys):
    raw = small_config("broken").to_dict()
    raw["ensembles"][0]["members"][0]["binary_positive"] = "n00000000"
    path = tmp_path / "broken.yaml"
    path.write_text(yaml.safe_dump(raw))
    assert main(["run", "--config", str(path), "--home", str(tmp_path)]) == 3
    assert "substitutes" in capsys.readouterr().err


def test_report_with_no_runs_exits_one(tmp_path):
    (tmp_path / "runs").mkdir()
    assert main(["report", "--home", str(tmp_path)]) == 1


def test_console_script_installed():
    proc = subprocess.run(["purebox", "--help"], capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and "corpus" in proc.stdout
