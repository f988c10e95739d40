"""Command-line interface and config parsing."""
import json
import os

import pytest

from tagpoison.cli import main
from tagpoison.config import spec_from_dict
from tagpoison.errors import ConfigError

TINY_CONFIG = {
    "dataset": {"synthetic": {
        "num_classes": 2, "nodes_per_class": 25, "p_intra": 0.25,
        "p_inter": 0.02, "class_vocab_size": 5, "shared_vocab_size": 3,
        "words_per_text": 3, "seed": 0}},
    "attack": {"target_label": 0, "budget_fraction": 0.1,
               "joint_epochs": 15, "roundtrip_period": 5},
    "seed": 0,
    "repetitions": 1,
    "model": {"hidden": 16, "gen_hidden": 32},
    "optimizer": {"max_epochs": 30, "patience": 10},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


def test_spec_from_dict_full_round_trip():
    spec = spec_from_dict(TINY_CONFIG)
    assert spec.attack.budget_fraction == 0.1
    assert spec.hidden == 16
    assert spec.base_seed == 0
    assert spec.repetitions == 1


def test_spec_from_dict_rejects_unknown_fields():
    with pytest.raises(ConfigError, match="unknown config field"):
        spec_from_dict({**TINY_CONFIG, "bogus": 1})
    bad = {**TINY_CONFIG, "attack": {"no_such": 1}}
    with pytest.raises(ConfigError, match="unknown field"):
        spec_from_dict(bad)
    with pytest.raises(ConfigError, match="'seed' is required"):
        spec_from_dict({"dataset": TINY_CONFIG["dataset"]})
    with pytest.raises(ConfigError, match="'dataset'"):
        spec_from_dict({"seed": 0})


def test_cli_synth_writes_dataset(config_path, tmp_path):
    out = str(tmp_path / "data")
    assert main(["synth", "--config", config_path, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "nodes.jsonl"))
    assert os.path.exists(os.path.join(out, "edges.tsv"))


def test_cli_run_writes_reports(config_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    assert main(["run", "--config", config_path, "--out", out]) == 0
    report_path = os.path.join(out, "report.json")
    assert os.path.exists(report_path)
    assert os.path.exists(os.path.join(out, "report.txt"))
    with open(report_path, encoding="utf-8") as f:
        report = json.load(f)
    assert report["format"] == "tagpoison-report.v1"
    assert len(report["runs"]) == 1


def test_cli_run_seed_override_changes_hash(config_path, tmp_path):
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    main(["run", "--config", config_path, "--out", out_a])
    main(["run", "--config", config_path, "--seed", "1", "--out", out_b])
    with open(os.path.join(out_a, "report.json")) as f:
        ha = json.load(f)["config_hash"]
    with open(os.path.join(out_b, "report.json")) as f:
        hb = json.load(f)["config_hash"]
    assert ha != hb


def test_cli_ablate_and_sweep(config_path, tmp_path):
    out = str(tmp_path / "abl")
    assert main(["ablate", "--config", config_path, "--out", out,
                 "--variants", "no-fs"]) == 0
    assert os.path.exists(os.path.join(out, "no-fs", "report.json"))
    out = str(tmp_path / "sweep")
    assert main(["sweep", "--config", config_path, "--out", out,
                 "--axis", "budget", "--values", "0.1,0.2"]) == 0
    assert os.path.exists(os.path.join(out, "budget_0.1", "report.json"))
    assert os.path.exists(os.path.join(out, "budget_0.2", "report.json"))


def test_cli_defend(config_path, tmp_path):
    data = str(tmp_path / "data")
    main(["synth", "--config", config_path, "--out", data])
    out = str(tmp_path / "defended")
    assert main(["defend", "--nodes", os.path.join(data, "nodes.jsonl"),
                 "--edges", os.path.join(data, "edges.tsv"),
                 "--out", out, "--defense", "prune"]) == 0
    assert os.path.exists(os.path.join(out, "defense_audit.jsonl"))
    assert os.path.exists(os.path.join(out, "edges.tsv"))
    out2 = str(tmp_path / "od")
    assert main(["defend", "--nodes", os.path.join(data, "nodes.jsonl"),
                 "--edges", os.path.join(data, "edges.tsv"),
                 "--out", out2, "--defense", "od", "--od-k", "3"]) == 0
    assert os.path.exists(os.path.join(out2, "defense_audit.jsonl"))


def test_cli_report_renders_table(config_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    main(["run", "--config", config_path, "--out", out])
    capsys.readouterr()
    assert main(["report", os.path.join(out, "report.json")]) == 0
    table = capsys.readouterr().out
    assert table.startswith("seed\t")


def test_cli_usage_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    missing = str(tmp_path / "missing.json")
    assert main(["run", "--config", missing]) == 2
    ok = tmp_path / "ok.json"
    ok.write_text(json.dumps({**TINY_CONFIG, "defense": "bogus"}))
    assert main(["run", "--config", str(ok)]) == 2
