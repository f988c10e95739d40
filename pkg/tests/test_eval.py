"""Metrics, experiment runner, reports, sweeps, ablations."""
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagpoison.attack import AttackConfig
from tagpoison.codec import train_bigram_lm
from tagpoison.errors import ConfigError, MetricError
from tagpoison.evaluation import (ExperimentReport, ExperimentSpec,
                                  compute_asr, compute_ca,
                                  compute_stealth_stats, emit_report,
                                  load_graph_for_spec, load_report,
                                  render_table, run_ablation, run_experiment,
                                  run_single, run_sweep)
from tagpoison.defense import OdConfig
from tagpoison.models import OptimizerConfig

TINY_FIXTURE = {"num_classes": 2, "nodes_per_class": 25, "p_intra": 0.25,
                "p_inter": 0.02, "class_vocab_size": 5, "shared_vocab_size": 3,
                "words_per_text": 3, "seed": 0}


def tiny_spec(**kw):
    base = dict(
        dataset={"synthetic": TINY_FIXTURE},
        attack=AttackConfig(target_label=0, budget_fraction=0.1,
                            joint_epochs=20, roundtrip_period=5),
        repetitions=1,
        hidden=16, gen_hidden=32,
        optimizer=OptimizerConfig(max_epochs=40, patience=10))
    base.update(kw)
    return ExperimentSpec(**base)


def test_compute_asr_matches_confusion_matrix():
    preds = np.array([0, 0, 1, 2, 0, 0])
    truth = np.array([0, 1, 1, 2, 2, 1])
    asr, hits, eligible = compute_asr(preds, truth, target_label=0)
    # independent recomputation from the confusion matrix
    cm = np.zeros((3, 3), dtype=int)
    for p, t in zip(preds, truth):
        cm[t, p] += 1
    eligible_cm = cm.sum() - cm[0].sum()
    hits_cm = cm[1:, 0].sum()
    assert (hits, eligible) == (hits_cm, eligible_cm) == (3, 5)
    assert asr == hits_cm / eligible_cm


def test_compute_asr_needs_eligible_nodes():
    with pytest.raises(MetricError):
        compute_asr(np.array([0]), np.array([0]), 0)


def test_compute_ca_matches_direct_count():
    preds = np.array([0, 1, 1, 0])
    truth = np.array([0, 1, 0, 0])
    ca, correct, total = compute_ca(preds, truth)
    assert (correct, total) == (3, 4) and ca == 0.75
    with pytest.raises(MetricError):
        compute_ca(np.array([]), np.array([]))


@settings(max_examples=30)
@given(st.integers(2, 4), st.integers(1, 40), st.integers(0, 10_000))
def test_asr_ca_probability_bounds(nc, n, seed):
    rng = np.random.default_rng(seed)
    preds = rng.integers(0, nc, size=n)
    truth = rng.integers(0, nc, size=n)
    if (truth != 0).sum() == 0:
        truth[0] = 1
    asr, hits, eligible = compute_asr(preds, truth, 0)
    assert 0.0 <= asr <= 1.0 and hits <= eligible
    ca, correct, total = compute_ca(preds, truth)
    assert 0.0 <= ca <= 1.0 and correct <= total == n


def test_compute_stealth_stats_skips_short_texts():
    lm = train_bigram_lm(["a b c", "b c a"])
    stats = compute_stealth_stats(lm, ["a b", "c"], ["a b c"])
    assert stats["ppl_skipped"] == 1
    assert stats["len_poisoned_mean"] == 1.5
    assert stats["ppl_clean_mean"] > 0
    with pytest.raises(MetricError):
        compute_stealth_stats(lm, ["x"], ["y"])


def test_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec(dataset={"bogus": {}}).validate()
    with pytest.raises(ConfigError):
        tiny_spec(defense="firewall").validate()
    with pytest.raises(ConfigError):
        tiny_spec(target_kind="transformer").validate()
    with pytest.raises(ConfigError):
        tiny_spec(selection="magic").validate()
    tiny_spec().validate()


def test_config_hash_tracks_content():
    a, b = tiny_spec(), tiny_spec()
    assert a.config_hash() == b.config_hash()
    c = tiny_spec(base_seed=1)
    assert a.config_hash() != c.config_hash()


def test_run_single_without_attack_reports_clean_baseline():
    spec = tiny_spec(attack=None)
    graph = load_graph_for_spec(spec)
    row, audits = run_single(graph, spec, seed=0)
    assert row["asr"] is None
    assert row["ca"] == row["clean_ca"] > 0.5
    assert audits["topology_invariant"] and audits["append_prefix_ok"]


def test_run_single_with_attack_populates_audits():
    spec = tiny_spec()
    graph = load_graph_for_spec(spec)
    row, audits = run_single(graph, spec, seed=0)
    assert 0.0 <= row["asr"] <= 1.0
    assert audits["budget"] >= 1
    assert audits["coverage_classes"] == 2
    assert audits["topology_invariant"]


def test_run_experiment_aggregates_and_audits():
    spec = tiny_spec(repetitions=2)
    report = run_experiment(spec)
    assert len(report.runs) == 2
    assert report.errors == [] and not report.partial
    assert report.audits["all_topology_invariant"]
    agg = report.aggregate["asr"]
    values = [r["asr"] for r in report.runs]
    assert agg["mean"] == pytest.approx(float(np.mean(values)))
    assert agg["n"] == 2


def test_run_single_defenses_smoke():
    for defense in ("prune", "od"):
        spec = tiny_spec(defense=defense, od=OdConfig(k=3))
        graph = load_graph_for_spec(spec)
        row, audits = run_single(graph, spec, seed=1)
        assert 0.0 <= row["ca"] <= 1.0
        key = "pruned_edges" if defense == "prune" else "flagged_nodes"
        assert audits[key] >= 0


def test_run_ablation_variants_change_the_spec():
    base = tiny_spec()
    with pytest.raises(ConfigError):
        run_ablation(base, "no-such-variant")
    with pytest.raises(ConfigError):
        run_ablation(tiny_spec(attack=None), "no-ns")
    report = run_ablation(base, "no-fs")
    assert report.config["attack"]["lam"] == 0.0
    # the original spec is untouched
    assert base.attack.lam == 0.5


def test_run_sweep_axes():
    base = tiny_spec()
    with pytest.raises(ConfigError):
        run_sweep(base, "bogus-axis", [1])
    series = run_sweep(base, "budget", [0.1, 0.2])
    assert [v for v, _ in series] == [0.1, 0.2]
    assert series[0][1].config["attack"]["budget_fraction"] == 0.1
    assert series[1][1].config["attack"]["budget_fraction"] == 0.2


def test_report_round_trip_and_render(tmp_path):
    report = run_experiment(tiny_spec())
    machine, human = emit_report(report, tmp_path / "out")
    loaded = load_report(machine)
    assert loaded.to_dict() == report.to_dict()
    table = render_table(loaded)
    assert table.startswith("seed\t")
    assert report.config_hash in table
    with open(machine, encoding="utf-8") as f:
        d = json.load(f)
    d["format"] = "bogus"
    with pytest.raises(ConfigError):
        ExperimentReport.from_dict(d)


def test_run_experiment_records_failed_repetitions():
    # an attack config that fails validation inside run_single marks the
    # report partial instead of raising
    spec = tiny_spec(attack=AttackConfig(target_label=5))
    report = run_experiment(spec)
    assert report.partial
    assert report.runs == []
    assert all("ConfigError" in e["error"] for e in report.errors)
