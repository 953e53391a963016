import json
import subprocess
import sys

import pytest

from segqa import cli, config
from segqa.errors import ValidationError

TINY = {
    "data": {"count": 30, "image_size": 32,
             "corpus": {"bins": 3, "per_bin": {"train": 4, "val": 2, "test": 2}}},
    "models": {"recnet": {"depth": 2, "base_width": 4},
               "regnet": {"widths": [4, 8, 8, 8, 8], "hidden": [16, 8]}},
    "train": {"recnet": {"epochs": 1}, "regnet": {"epochs": 1}},
    "attack": {"epsilons": [0.0, 0.1]},
    "eval": {"plots": False},
}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="module")
def tiny_run(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    for cmd in ("synth", "corpus", "train-rec", "train-reg", "attack", "report"):
        assert cli.main([cmd, "--config", str(tiny_config), "--out", str(out)]) == 0, cmd
    return out


def test_chain_produces_run_layout(tiny_run):
    for rel in ("config.json", "data/manifest.json", "corpus/manifest.json", "recnet/best/model.json",
                "regnet_proposed/best/model.json", "regnet_baseline/best/model.json",
                "attack/sweep_proposed_input_image.csv", "attack/sweep_proposed_difference_image.csv",
                "attack/sweep_baseline_input_image.csv", "report/report.json", "report/report.md"):
        assert (tiny_run / rel).exists(), rel
    for cmd in ("synth", "corpus", "train-rec", "train-reg", "attack", "report"):
        m = json.loads((tiny_run / "manifests" / f"{cmd}.json").read_text())
        assert m["command"] == cmd and m["seed"] == 0 and m["outputs"]
    assert not (tiny_run / "attack" / "sweep_baseline_difference_image.csv").exists()


def test_report_records_provenance(tiny_run):
    report = json.loads((tiny_run / "report" / "report.json").read_text())
    prov = report["provenance"]
    assert prov["seed"] == 0 and len(prov["config_hash"]) == 64
    assert set(prov["checkpoints"]) == {"recnet", "regnet_proposed", "regnet_baseline"}
    assert len(prov["sweeps"]) == 3
    assert {r["epsilon"] for r in report["rows"]} == {0.0, 0.1}


def test_report_rerun_is_byte_identical(tiny_run, capsys):
    before = {n: (tiny_run / "report" / n).read_bytes() for n in ("report.json", "report.csv", "report.md")}
    assert cli.main(["report", "--out", str(tiny_run)]) == 0
    assert "| baseline | input_image |" in capsys.readouterr().out
    for n, data in before.items():
        assert (tiny_run / "report" / n).read_bytes() == data


def test_proposed_regressor_without_recnet_fails(tiny_config, tmp_path, capsys):
    assert cli.main(["synth", "--config", str(tiny_config), "--out", str(tmp_path)]) == 0
    assert cli.main(["corpus", "--out", str(tmp_path)]) == 0
    code = cli.main(["train-reg", "--mode", "proposed", "--out", str(tmp_path)])
    assert code != 0
    assert "train-rec" in capsys.readouterr().err


def test_attack_before_corpus_names_producer(tmp_path, tiny_config, capsys):
    assert cli.main(["attack", "--config", str(tiny_config), "--out", str(tmp_path)]) != 0
    assert "segqa corpus" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"attack": {"epsilon": [0.1]}}))
    assert cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "r")]) != 0
    assert "epsilon" in capsys.readouterr().err
    with pytest.raises(ValidationError):
        config.load(bad)


def test_unsorted_epsilons_rejected(capsys, tmp_path):
    assert cli.main(["synth", "--epsilons", "0.1,0.05", "--out", str(tmp_path)]) != 0
    assert "sorted" in capsys.readouterr().err


def test_config_digest_ignores_output_location():
    a = config.load(overrides={"out": "x"})
    b = config.load(overrides={"out": "y"})
    assert config.digest(a) == config.digest(b)
    assert config.digest(a) != config.digest(config.load(overrides={"seed": 1}))


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "segqa", "--help"], capture_output=True, text=True, check=True)
    for cmd in ("synth", "ingest", "corpus", "train-rec", "train-reg", "attack", "report"):
        assert cmd in out.stdout
