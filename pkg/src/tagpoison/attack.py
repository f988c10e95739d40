"""Poison-text backdoor attack: surrogate training, uncertainty-guided node
selection, joint generator/shadow optimization, trigger injection, and
poisoned-graph construction."""
from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .codec import decode, encode
from .errors import ConfigError, DatasetError
from .graph import TextAttributedGraph
from .models import (AdamOptimizer, GcnModel, gcn_forward, generator_forward,
                     train_node_classifier, zero_grads)

MODE_OVERWRITE = "overwrite"
MODE_APPEND = "append"

DEFAULT_MAX_TOKENS = {MODE_OVERWRITE: 1024, MODE_APPEND: 512}


@dataclass
class AttackConfig:
    target_label: int = 0
    budget_fraction: float = 0.01
    coverage: int | None = None          # defaults to the number of classes
    lam: float = 0.5
    mode: str = MODE_OVERWRITE
    max_trigger_tokens: int | None = None  # defaults by mode (1024 / 512)
    joint_epochs: int = 300
    roundtrip_period: int = 10
    delta_audit: float | None = None
    seed: int = 0

    def validate(self, num_classes):
        if not (0.0 < self.budget_fraction < 1.0):
            raise ConfigError("budget_fraction must lie in (0, 1)")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not (0 <= self.target_label < num_classes):
            raise ConfigError("target_label out of range")
        if self.mode not in (MODE_OVERWRITE, MODE_APPEND):
            raise ConfigError(f"unknown injection mode {self.mode!r}")
        cov = self.coverage if self.coverage is not None else num_classes
        if cov < 1:
            raise ConfigError("coverage must be >= 1")

    def resolved_coverage(self, num_classes):
        return self.coverage if self.coverage is not None else num_classes

    def resolved_max_tokens(self):
        if self.max_trigger_tokens is not None:
            return self.max_trigger_tokens
        return DEFAULT_MAX_TOKENS[self.mode]


@dataclass
class PoisonPlan:
    node_ids: np.ndarray
    original_labels: np.ndarray
    trigger_texts: list
    poisoned_texts: list
    poisoned_embeddings: np.ndarray
    cosines: np.ndarray
    target_label: int
    mode: str

    def __len__(self):
        return len(self.node_ids)


def train_surrogate(adj_norm, x, labels, labeled_idx, val_idx, cfg, seed,
                    hidden, dropout, num_classes):
    """Two-layer GCN trained on the labeled nodes with early stopping."""
    rng = np.random.default_rng(seed)
    model = GcnModel.init(rng, x.shape[1], num_classes, hidden, dropout)

    def fwd(m, x_t, tape, train, drng):
        return gcn_forward(m, adj_norm, x_t, tape, train, drng)[0]

    model, val_acc = train_node_classifier(fwd, model, x, labels,
                                           labeled_idx, val_idx, cfg, seed)
    return model, val_acc


def score_uncertainty(surrogate, adj_norm, x, unlabeled_idx):
    """Predictive-distribution entropy per unlabeled node (eval mode)."""
    logits, _ = gcn_forward(surrogate, adj_norm, Tensor(x))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    return [(int(i), ad.entropy(probs[i])) for i in unlabeled_idx]


def select_top_k(scores, labels, budget_fraction, gamma):
    """Greedy budgeted selection with class-coverage repair.

    Sort by entropy descending (ties by node id ascending) and take the
    first floor(budget_fraction * |scored|) nodes (minimum 1). While fewer
    than gamma ground-truth classes are covered, evict the lowest-entropy
    selected node whose class appears at least twice in the selection and
    admit the highest-entropy unselected node of an uncovered class.
    """
    if not scores:
        raise ConfigError("no scored nodes to select from")
    ent = {nid: e for nid, e in scores}
    order = sorted(ent, key=lambda nid: (-ent[nid], nid))
    k = int(budget_fraction * len(scores))
    if k < 1:
        warnings.warn("poisoning budget rounded to zero; raised to 1 node")
        k = 1
    classes_present = {int(labels[nid]) for nid in ent}
    gamma_eff = min(gamma, len(classes_present))
    if gamma > len(classes_present):
        warnings.warn(f"coverage {gamma} exceeds the {len(classes_present)} "
                      "classes present; clipped")
    selected = order[:k]
    pool = order[k:]
    while True:
        covered = {int(labels[nid]) for nid in selected}
        if len(covered) >= gamma_eff:
            break
        admit = next((nid for nid in pool if int(labels[nid]) not in covered), None)
        mult = Counter(int(labels[nid]) for nid in selected)
        evictable = [nid for nid in selected if mult[int(labels[nid])] >= 2]
        if admit is None or not evictable:
            warnings.warn("class coverage constraint infeasible at this budget; "
                          "coverage maximized")
            break
        evict = min(evictable, key=lambda nid: (ent[nid], nid))
        selected = [nid for nid in selected if nid != evict] + [admit]
        pool = [nid for nid in pool if nid != admit]
    return sorted(selected)


def inject(original, trigger, mode):
    """Overwrite replaces the text; append concatenates with a single space."""
    if mode == MODE_OVERWRITE:
        return trigger
    if mode == MODE_APPEND:
        return f"{original} {trigger}" if trigger else original
    raise ConfigError(f"unknown injection mode {mode!r}")


def _poison_rows(tape, p, x_orig_rows, mode):
    """Feature-space poisoned rows for the given mode.

    Append concatenation is modeled during optimization as the unit-
    normalized sum of original and generated embeddings (exact for
    disjoint-support BOW up to normalization).
    """
    if mode == MODE_OVERWRITE:
        return p
    return ad.unit_rows(tape, ad.add(tape, Tensor(x_orig_rows), p))


def joint_train(shadow, generator, adj_norm, x_clean, texts, labels,
                labeled_idx, v_p, cfg, vocab, opt_cfg, seed,
                gen_input="hidden"):
    """Alternating shadow / generator optimization.

    Per epoch: (a) node representations from the shadow on the running
    feature matrix; (b) shadow step on clean + attack cross-entropy;
    (c) generator step on attack + clean + lam * similarity; (d) every
    roundtrip_period epochs, project the generated embeddings through
    decode -> re-encode so they stay realizable as text.
    Early-stops when the total objective plateaus for opt_cfg.patience
    epochs. Returns (shadow, generator).
    """
    v_p = np.asarray(v_p, dtype=np.int64)
    if len(v_p) == 0:
        raise ConfigError("empty poisoned node set")
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    rng = np.random.default_rng(seed)
    x_orig_p = x_clean[v_p].copy()
    x_current = x_clean.copy()
    y_t = np.full(len(v_p), cfg.target_label, dtype=np.int64)
    max_tokens = cfg.resolved_max_tokens()
    shadow_opt = AdamOptimizer(opt_cfg)
    gen_opt = AdamOptimizer(opt_cfg)
    best = np.inf
    stale = 0
    projected = False

    def quantized_rows(tape, p):
        # Forward on the decode -> re-encode embedding each trigger would
        # actually produce; backward passes the gradient straight through
        # to the generator output.
        rows = np.stack([
            encode(inject(texts[nid], decode(p.data[j], vocab, max_tokens),
                          cfg.mode), vocab)
            for j, nid in enumerate(v_p)])
        out = Tensor(rows)

        def bwd(g):
            if p.grad is None:
                p.grad = g.copy()
            else:
                p.grad = p.grad + g
        tape.record(out, bwd)
        return out

    def losses(tape, gen_in):
        p = generator_forward(generator, Tensor(gen_in), tape)
        if projected:
            rows = quantized_rows(tape, p)
        else:
            rows = _poison_rows(tape, p, x_orig_p, cfg.mode)
        x_prime = ad.row_scatter(tape, x_current, v_p, rows)
        logits, _ = gcn_forward(shadow, adj_norm, x_prime, tape, True, rng)
        l_atk = ad.cross_entropy(tape, ad.gather_rows(tape, logits, v_p), y_t)
        l_clean = ad.cross_entropy(tape, ad.gather_rows(tape, logits, labeled_idx),
                                   labels[labeled_idx])
        l_sim = ad.cosine_sim_loss(tape, p, Tensor(x_orig_p))
        return p, l_atk, l_clean, l_sim

    for epoch in range(cfg.joint_epochs):
        if gen_input == "hidden":
            _, hidden = gcn_forward(shadow, adj_norm, Tensor(x_current))
            gen_in = hidden.data[v_p]
        else:
            gen_in = x_clean[v_p]
        # shadow step
        tape = Tape()
        _, l_atk, l_clean, _ = losses(tape, gen_in)
        loss = ad.add(tape, l_clean, l_atk)
        zero_grads(shadow.params())
        zero_grads(generator.params())
        tape.backward(loss)
        shadow_opt.step(shadow.params())
        # generator step
        tape = Tape()
        p, l_atk, l_clean, l_sim = losses(tape, gen_in)
        total = ad.add(tape, ad.add(tape, l_atk, l_clean), ad.scale(tape, l_sim, cfg.lam))
        zero_grads(shadow.params())
        zero_grads(generator.params())
        tape.backward(total)
        gen_opt.step(generator.params())
        # straight-through projection to text-realizable embeddings
        if (epoch + 1) % cfg.roundtrip_period == 0:
            projected = True
            for j, nid in enumerate(v_p):
                trig = decode(p.data[j], vocab, max_tokens)
                x_current[nid] = encode(inject(texts[nid], trig, cfg.mode), vocab)
        value = float(total.data)
        if value < best - 1e-12:
            best = value
            stale = 0
        else:
            stale += 1
            if stale > opt_cfg.patience:
                break
    return shadow, generator


def generate_trigger(generator, gen_in, vocab, max_tokens):
    """Generator embedding for one or more nodes, decoded to trigger text."""
    gen_in = np.atleast_2d(np.asarray(gen_in, dtype=np.float64))
    p = generator_forward(generator, Tensor(gen_in)).data
    texts = [decode(row, vocab, max_tokens) for row in p]
    return p, texts


def make_poison_plan(generator, shadow, adj_norm, x_clean, texts, labels,
                     v_p, cfg, vocab, gen_input="hidden"):
    """Final triggers, poisoned texts, and re-encoded embeddings for V_p."""
    v_p = np.asarray(v_p, dtype=np.int64)
    if gen_input == "hidden":
        _, hidden = gcn_forward(shadow, adj_norm, Tensor(x_clean))
        gen_in = hidden.data[v_p]
    else:
        gen_in = x_clean[v_p]
    _, triggers = generate_trigger(generator, gen_in, vocab, cfg.resolved_max_tokens())
    poisoned_texts = [inject(texts[nid], trig, cfg.mode)
                      for nid, trig in zip(v_p, triggers)]
    embeddings = np.stack([encode(t, vocab) for t in poisoned_texts])
    orig = x_clean[v_p]
    cosines = np.zeros(len(v_p))
    for j in range(len(v_p)):
        na, nb = np.linalg.norm(orig[j]), np.linalg.norm(embeddings[j])
        if na > 0 and nb > 0:
            cosines[j] = float(orig[j] @ embeddings[j] / (na * nb))
    return PoisonPlan(v_p, np.asarray(labels)[v_p].copy(), triggers,
                      poisoned_texts, embeddings, cosines,
                      cfg.target_label, cfg.mode)


def build_poisoned_graph(graph, plan):
    """Replace texts and labels of the planned nodes; topology untouched."""
    if len(plan) and (plan.node_ids.min() < 0 or plan.node_ids.max() >= graph.num_nodes):
        raise DatasetError("poison plan references a node outside the graph")
    texts = list(graph.texts)
    labels = graph.labels.copy()
    for nid, text in zip(plan.node_ids, plan.poisoned_texts):
        texts[nid] = text
        labels[nid] = plan.target_label
    return TextAttributedGraph(graph.num_nodes, graph.offsets, graph.neighbors,
                               tuple(texts), labels, graph.num_classes)


def apply_trigger_at_test(generator, surrogate, adj_full_norm, x_full, texts,
                          test_target_ids, cfg, vocab, gen_input="hidden"):
    """Trigger each test-target node on the full evaluation graph.

    Representations come from the surrogate (the attacker has no access to
    the target model). Returns (re-encoded feature rows, triggered texts).
    """
    ids = np.asarray(test_target_ids, dtype=np.int64)
    if gen_input == "hidden":
        _, hidden = gcn_forward(surrogate, adj_full_norm, Tensor(x_full))
        gen_in = hidden.data[ids]
    else:
        gen_in = x_full[ids]
    _, triggers = generate_trigger(generator, gen_in, vocab, cfg.resolved_max_tokens())
    triggered_texts = [inject(texts[nid], trig, cfg.mode)
                       for nid, trig in zip(ids, triggers)]
    rows = np.stack([encode(t, vocab) for t in triggered_texts])
    return rows, triggered_texts


def warm_start_shadow(surrogate):
    """Fresh shadow model initialized from the surrogate's parameters."""
    return GcnModel(Tensor(surrogate.w1.data.copy()),
                    Tensor(surrogate.w2.data.copy()),
                    surrogate.dropout)


def export_plan(plan, path):
    """Line-delimited audit export of the poison plan."""
    with open(path, "w", encoding="utf-8") as f:
        for j in range(len(plan)):
            rec = {"node_id": int(plan.node_ids[j]),
                   "original_label": int(plan.original_labels[j]),
                   "assigned_label": int(plan.target_label),
                   "mode": plan.mode,
                   "trigger_text": plan.trigger_texts[j],
                   "poisoned_text": plan.poisoned_texts[j],
                   "cosine_to_original": float(plan.cosines[j])}
            f.write(json.dumps(rec) + "\n")
