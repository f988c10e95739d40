"""Metrics, the experiment runner, sweeps, ablations, and report emission."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import graph as g
from .attack import (AttackConfig, apply_trigger_at_test, build_poisoned_graph,
                     joint_train, make_poison_plan, score_uncertainty,
                     select_top_k, train_surrogate, warm_start_shadow,
                     MODE_APPEND)
from .autodiff import Tensor
from .codec import (build_vocab, encode_all, perplexity, tokenize,
                    train_bigram_lm, DEFAULT_VOCAB_SIZE)
from .defense import OdConfig, PruneConfig, detect_outliers, prune_edges
from .errors import ConfigError, MetricError
from .graph import (ROLE_LABELED, ROLE_TEST_CLEAN, ROLE_TEST_TARGET,
                    ROLE_UNLABELED, ROLE_VALIDATION, SyntheticSpec)
from .models import (DEFAULT_DROPOUT, DEFAULT_GEN_HIDDEN, DEFAULT_HIDDEN,
                     GcnModel, MlpGenerator, OptimizerConfig, SageModel,
                     gcn_forward, sage_forward, train_node_classifier)

REPORT_FORMAT = "tagpoison-report.v1"

ABLATION_VARIANTS = ("full", "no-ns", "no-ne", "no-fs")
SWEEP_AXES = ("budget", "trigger_length")

METRIC_FIELDS = ("asr", "ca", "clean_ca", "ppl_poisoned_mean", "ppl_clean_mean",
                 "len_poisoned_mean", "len_clean_mean", "delta_violations")


@dataclass
class Metrics:
    asr: float | None
    asr_hits: int
    asr_eligible: int
    ca: float
    ca_correct: int
    ca_total: int
    clean_ca: float
    ppl_poisoned_mean: float | None
    ppl_clean_mean: float | None
    len_poisoned_mean: float | None
    len_clean_mean: float | None
    ppl_skipped: int
    delta_violations: int

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ExperimentSpec:
    dataset: dict                      # {"synthetic": {...}} or {"nodes":, "edges":}
    attack: AttackConfig | None = None
    defense: str = "none"              # none | prune | od
    prune: PruneConfig = field(default_factory=PruneConfig)
    od: OdConfig = field(default_factory=OdConfig)
    target_kind: str = "gcn"           # gcn | sage
    repetitions: int = 5
    base_seed: int = 0
    test_fraction: float = 0.20
    labeled_fraction: float = 0.10
    val_fraction: float = 0.10
    hidden: int = DEFAULT_HIDDEN
    gen_hidden: int = DEFAULT_GEN_HIDDEN
    dropout: float = DEFAULT_DROPOUT
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    vocab_size: int = DEFAULT_VOCAB_SIZE
    lm_k: float = 1.0
    selection: str = "uncertainty"     # uncertainty | random   (no-NS ablation)
    gen_input: str = "hidden"          # hidden | bow           (no-NE ablation)

    def validate(self):
        keys = set(self.dataset)
        if not (keys == {"synthetic"} or keys == {"nodes", "edges"}):
            raise ConfigError("dataset must give either a synthetic spec or "
                              "nodes/edges paths")
        if self.defense not in ("none", "prune", "od"):
            raise ConfigError(f"unknown defense {self.defense!r}")
        if self.target_kind not in ("gcn", "sage"):
            raise ConfigError(f"unknown target model {self.target_kind!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.selection not in ("uncertainty", "random"):
            raise ConfigError(f"unknown selection strategy {self.selection!r}")
        if self.gen_input not in ("hidden", "bow"):
            raise ConfigError(f"unknown generator input {self.gen_input!r}")

    def to_config_dict(self):
        d = dataclasses.asdict(self)
        return d

    def config_hash(self):
        canonical = json.dumps(self.to_config_dict(), sort_keys=True,
                               separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    runs: list                # per-seed metric dicts (includes "seed")
    aggregate: dict           # metric -> {"mean":, "std":}
    audits: dict
    errors: list
    partial: bool

    def to_dict(self):
        return {"format": REPORT_FORMAT, "config": self.config,
                "config_hash": self.config_hash, "runs": self.runs,
                "aggregate": self.aggregate, "audits": self.audits,
                "errors": self.errors, "partial": self.partial}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != REPORT_FORMAT:
            raise ConfigError(f"unsupported report format {d.get('format')!r}")
        return cls(d["config"], d["config_hash"], d["runs"], d["aggregate"],
                   d["audits"], d["errors"], d["partial"])


def compute_asr(predictions, true_labels, target_label):
    """Fraction of trigger-bearing nodes predicted as the target class,
    over nodes whose true label differs from it. Returns (asr, hits, eligible)."""
    predictions = np.asarray(predictions)
    true_labels = np.asarray(true_labels)
    eligible = true_labels != target_label
    n = int(eligible.sum())
    if n == 0:
        raise MetricError("no trigger-eligible nodes (all carry the target label)")
    hits = int((predictions[eligible] == target_label).sum())
    return hits / n, hits, n


def compute_ca(predictions, true_labels):
    """Plain accuracy; returns (ca, correct, total)."""
    predictions = np.asarray(predictions)
    true_labels = np.asarray(true_labels)
    if len(true_labels) == 0:
        raise MetricError("empty clean test set")
    correct = int((predictions == true_labels).sum())
    return correct / len(true_labels), correct, len(true_labels)


def compute_stealth_stats(lm, poisoned_texts, clean_texts):
    """Mean perplexity and token count per text set; short texts skipped."""
    def summarize(texts):
        ppls, lens, skipped = [], [], 0
        for t in texts:
            toks = tokenize(t)
            lens.append(len(toks))
            if len(toks) < 2:
                skipped += 1
                continue
            ppls.append(perplexity(lm, t))
        return ppls, lens, skipped

    ppl_p, len_p, skip_p = summarize(poisoned_texts)
    ppl_c, len_c, skip_c = summarize(clean_texts)
    if not ppl_p and not ppl_c:
        raise MetricError("all texts too short for perplexity")
    return {"ppl_poisoned_mean": float(np.mean(ppl_p)) if ppl_p else None,
            "ppl_clean_mean": float(np.mean(ppl_c)) if ppl_c else None,
            "len_poisoned_mean": float(np.mean(len_p)) if len_p else None,
            "len_clean_mean": float(np.mean(len_c)) if len_c else None,
            "ppl_skipped": skip_p + skip_c}


def load_graph_for_spec(spec):
    if "synthetic" in spec.dataset:
        return g.generate_synthetic(SyntheticSpec(**spec.dataset["synthetic"]))
    return g.load_dataset(spec.dataset["nodes"], spec.dataset["edges"])


def _make_forward(kind, graph):
    if kind == "gcn":
        adj = g.normalized_adjacency(graph)

        def fwd(model, x_t, tape=None, train=False, rng=None):
            return gcn_forward(model, adj, x_t, tape, train, rng)[0]
    else:
        adj = g.mean_adjacency(graph)

        def fwd(model, x_t, tape=None, train=False, rng=None):
            return sage_forward(model, adj, x_t, tape, train, rng)
    return fwd


def _init_target(kind, rng, in_dim, num_classes, hidden, dropout):
    cls = GcnModel if kind == "gcn" else SageModel
    return cls.init(rng, in_dim, num_classes, hidden, dropout)


def _train_target(spec, graph, x, labels, labeled_idx, val_idx, seed):
    fwd = _make_forward(spec.target_kind, graph)
    rng = np.random.default_rng(seed)
    model = _init_target(spec.target_kind, rng, x.shape[1], graph.num_classes,
                         spec.hidden, spec.dropout)
    model, val_acc = train_node_classifier(fwd, model, x, labels, labeled_idx,
                                           val_idx, spec.optimizer, seed)
    return model, val_acc


def _predict(spec, graph, model, x):
    fwd = _make_forward(spec.target_kind, graph)
    return fwd(model, Tensor(x)).data.argmax(axis=1)


def run_single(graph, spec, seed):
    """One seeded repetition of the full pipeline. Returns (metrics dict, audits)."""
    split = g.make_split(graph, spec.test_fraction, spec.labeled_fraction,
                         spec.val_fraction, seed=[seed, 1])
    train_graph, index_map = g.induced_training_graph(graph, split)
    kept_old = np.flatnonzero(index_map >= 0)
    roles_sub = split.roles[kept_old]
    labeled_idx = np.flatnonzero(roles_sub == ROLE_LABELED)
    unlabeled_idx = np.flatnonzero(roles_sub == ROLE_UNLABELED)
    val_idx = np.flatnonzero(roles_sub == ROLE_VALIDATION)
    test_clean = split.ids_with_role(ROLE_TEST_CLEAN)
    test_target = split.ids_with_role(ROLE_TEST_TARGET)

    vocab = build_vocab(train_graph.texts, spec.vocab_size)
    lm = train_bigram_lm(train_graph.texts, spec.lm_k)
    x_train = encode_all(train_graph.texts, vocab)
    adj_train = g.normalized_adjacency(train_graph)

    x_full_clean = encode_all(graph.texts, vocab)

    # clean-model baseline on the unpoisoned graph, same split and seed
    clean_model, _ = _train_target(spec, train_graph, x_train, train_graph.labels,
                                   labeled_idx, val_idx, seed=[seed, 5])
    clean_pred = _predict(spec, graph, clean_model, x_full_clean)
    clean_ca, clean_correct, clean_total = compute_ca(clean_pred[test_clean],
                                                      graph.labels[test_clean])

    audits = {"topology_invariant": True, "append_prefix_ok": True,
              "coverage_classes": None, "budget": None,
              "pruned_edges": None, "flagged_nodes": None}

    if spec.attack is None:
        metrics = Metrics(None, 0, 0, clean_ca, clean_correct, clean_total,
                          clean_ca, None, None, None, None, 0, 0)
        return metrics.to_dict() | {"seed": seed}, audits

    cfg = spec.attack
    cfg.validate(graph.num_classes)

    surrogate, _ = train_surrogate(adj_train, x_train, train_graph.labels,
                                   labeled_idx, val_idx, spec.optimizer,
                                   [seed, 3], spec.hidden, spec.dropout,
                                   graph.num_classes)
    if spec.selection == "uncertainty":
        scores = score_uncertainty(surrogate, adj_train, x_train, unlabeled_idx)
        v_p = select_top_k(scores, train_graph.labels, cfg.budget_fraction,
                           cfg.resolved_coverage(graph.num_classes))
    else:
        rng = np.random.default_rng([seed, 7])
        k = max(1, int(cfg.budget_fraction * len(unlabeled_idx)))
        v_p = sorted(rng.choice(unlabeled_idx, size=k, replace=False).tolist())

    shadow = warm_start_shadow(surrogate)
    gen_dim = spec.hidden if spec.gen_input == "hidden" else vocab.size
    generator = MlpGenerator.init(np.random.default_rng([seed, 4]), gen_dim,
                                  vocab.size, spec.gen_hidden)
    shadow, generator = joint_train(shadow, generator, adj_train, x_train,
                                    train_graph.texts, train_graph.labels,
                                    labeled_idx, v_p, cfg, vocab,
                                    spec.optimizer, [seed, 6],
                                    gen_input=spec.gen_input)
    # plan triggers come from the surrogate so train- and test-time triggers
    # share the same representation source
    plan = make_poison_plan(generator, surrogate, adj_train, x_train,
                            train_graph.texts, train_graph.labels, v_p, cfg,
                            vocab, gen_input=spec.gen_input)
    poisoned_graph = build_poisoned_graph(train_graph, plan)

    # harness checks: topology invariance and append-prefix contract
    audits["topology_invariant"] = (
        g.adjacency_checksum(poisoned_graph) == g.adjacency_checksum(train_graph))
    if cfg.mode == MODE_APPEND:
        audits["append_prefix_ok"] = all(
            pt.startswith(train_graph.texts[nid])
            for nid, pt in zip(plan.node_ids, plan.poisoned_texts))
    audits["budget"] = len(plan)
    audits["coverage_classes"] = len({int(c) for c in plan.original_labels})

    # optional defense before target training
    training_graph = poisoned_graph
    x_pois = encode_all(poisoned_graph.texts, vocab)
    masked = np.zeros(poisoned_graph.num_nodes, dtype=bool)
    if spec.defense == "prune":
        training_graph, removed = prune_edges(poisoned_graph, x_pois, spec.prune)
        audits["pruned_edges"] = len(removed)
    elif spec.defense == "od":
        train_ids = np.concatenate([labeled_idx, np.asarray(v_p, dtype=np.int64)])
        flagged = detect_outliers(x_pois, np.unique(train_ids), spec.od)
        for nid, _ in flagged:
            masked[nid] = True
        audits["flagged_nodes"] = len(flagged)

    target_labeled = np.unique(np.concatenate(
        [labeled_idx, np.asarray(v_p, dtype=np.int64)]))
    target_labeled = target_labeled[~masked[target_labeled]]
    target, _ = _train_target(spec, training_graph, x_pois,
                              poisoned_graph.labels, target_labeled, val_idx,
                              seed=[seed, 5])

    # evaluation graph: full original topology; poisoned texts substituted
    texts_eval = list(graph.texts)
    for nid, text in zip(plan.node_ids, plan.poisoned_texts):
        texts_eval[int(kept_old[nid])] = text
    x_eval = encode_all(texts_eval, vocab)

    ca_pred = _predict(spec, graph, target, x_eval)
    ca, ca_correct, ca_total = compute_ca(ca_pred[test_clean],
                                          graph.labels[test_clean])

    adj_full = g.normalized_adjacency(graph)
    rows, _ = apply_trigger_at_test(generator, surrogate, adj_full, x_eval,
                                    texts_eval, test_target, cfg, vocab,
                                    gen_input=spec.gen_input)
    x_asr = x_eval.copy()
    x_asr[test_target] = rows
    asr_pred = _predict(spec, graph, target, x_asr)
    asr, hits, eligible = compute_asr(asr_pred[test_target],
                                      graph.labels[test_target],
                                      cfg.target_label)

    stealth = compute_stealth_stats(lm, plan.poisoned_texts,
                                    [train_graph.texts[nid] for nid in plan.node_ids])
    violations = 0
    if cfg.delta_audit is not None:
        violations = int((plan.cosines < cfg.delta_audit).sum())

    metrics = Metrics(asr, hits, eligible, ca, ca_correct, ca_total, clean_ca,
                      stealth["ppl_poisoned_mean"], stealth["ppl_clean_mean"],
                      stealth["len_poisoned_mean"], stealth["len_clean_mean"],
                      stealth["ppl_skipped"], violations)
    return metrics.to_dict() | {"seed": seed}, audits


def _aggregate(runs):
    agg = {}
    for name in METRIC_FIELDS:
        values = [r[name] for r in runs if r.get(name) is not None]
        if not values:
            continue
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        agg[name] = {"mean": mean, "std": std, "n": len(values)}
    return agg


def run_experiment(spec):
    spec.validate()
    graph = load_graph_for_spec(spec)
    runs, errors, audit_rows = [], [], []
    for r in range(spec.repetitions):
        seed = spec.base_seed + r
        try:
            row, audits = run_single(graph, spec, seed)
            runs.append(row)
            audit_rows.append(audits | {"seed": seed})
        except Exception as exc:  # noqa: BLE001 - a failed rep is recorded
            errors.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    audits = {"runs": audit_rows,
              "all_topology_invariant": all(a["topology_invariant"] for a in audit_rows),
              "all_append_prefix_ok": all(a["append_prefix_ok"] for a in audit_rows)}
    return ExperimentReport(spec.to_config_dict(), spec.config_hash(), runs,
                            _aggregate(runs), audits, errors, bool(errors))


def run_ablation(spec, variant):
    """Single-substitution variants of the full pipeline."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; "
                          f"expected one of {ABLATION_VARIANTS}")
    spec = dataclasses.replace(spec)
    if spec.attack is None:
        raise ConfigError("ablation requires an attack config")
    if variant == "no-ns":
        spec = dataclasses.replace(spec, selection="random")
    elif variant == "no-ne":
        spec = dataclasses.replace(spec, gen_input="bow")
    elif variant == "no-fs":
        spec = dataclasses.replace(spec, attack=dataclasses.replace(spec.attack, lam=0.0))
    return run_experiment(spec)


def run_sweep(spec, axis, values):
    """One run_experiment per value along the given axis."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if spec.attack is None:
        raise ConfigError("sweep requires an attack config")
    series = []
    for value in values:
        if axis == "budget":
            varied = dataclasses.replace(spec, attack=dataclasses.replace(
                spec.attack, budget_fraction=float(value)))
        else:
            varied = dataclasses.replace(spec, attack=dataclasses.replace(
                spec.attack, max_trigger_tokens=int(value)))
        series.append((value, run_experiment(varied)))
    return series


def render_table(report):
    """Human-readable fixed-width table of per-seed rows and aggregates."""
    cols = ("seed",) + METRIC_FIELDS
    lines = ["\t".join(cols)]
    for row in report.runs:
        lines.append("\t".join(_fmt(row.get(c)) for c in cols))
    agg_cells = ["mean"]
    for c in METRIC_FIELDS:
        entry = report.aggregate.get(c)
        agg_cells.append(_fmt(entry["mean"]) if entry else "-")
    lines.append("\t".join(agg_cells))
    lines.append(f"config_hash\t{report.config_hash}")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def emit_report(report, out_dir):
    """Write the machine report (JSON) and a human-readable table."""
    os.makedirs(out_dir, exist_ok=True)
    machine = os.path.join(out_dir, "report.json")
    human = os.path.join(out_dir, "report.txt")
    with open(machine, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    with open(human, "w", encoding="utf-8") as f:
        f.write(render_table(report))
    return machine, human


def load_report(path):
    with open(path, encoding="utf-8") as f:
        return ExperimentReport.from_dict(json.load(f))
