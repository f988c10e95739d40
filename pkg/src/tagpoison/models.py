"""GCN / mean-aggregation SAGE classifiers, the MLP trigger generator,
the gradient-descent optimizer, and the node-classifier training loop."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, DatasetError

DEFAULT_HIDDEN = 512
DEFAULT_GEN_HIDDEN = 1024
DEFAULT_DROPOUT = 0.5

CHECKPOINT_FORMAT = "tagpoison-checkpoint.v1"


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    weight_decay: float = 0.0005
    max_epochs: int = 300
    patience: int = 50


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


@dataclass
class GcnModel:
    w1: Tensor
    w2: Tensor
    dropout: float = DEFAULT_DROPOUT

    @classmethod
    def init(cls, rng, in_dim, num_classes, hidden=DEFAULT_HIDDEN, dropout=DEFAULT_DROPOUT):
        return cls(glorot(rng, in_dim, hidden), glorot(rng, hidden, num_classes), dropout)

    def params(self):
        return {"w1": self.w1, "w2": self.w2}


@dataclass
class SageModel:
    w_self1: Tensor
    w_nbr1: Tensor
    w_self2: Tensor
    w_nbr2: Tensor
    dropout: float = DEFAULT_DROPOUT

    @classmethod
    def init(cls, rng, in_dim, num_classes, hidden=DEFAULT_HIDDEN, dropout=DEFAULT_DROPOUT):
        return cls(glorot(rng, in_dim, hidden), glorot(rng, in_dim, hidden),
                   glorot(rng, hidden, num_classes), glorot(rng, hidden, num_classes),
                   dropout)

    def params(self):
        return {"w_self1": self.w_self1, "w_nbr1": self.w_nbr1,
                "w_self2": self.w_self2, "w_nbr2": self.w_nbr2}


@dataclass
class MlpGenerator:
    w1: Tensor
    w2: Tensor

    @classmethod
    def init(cls, rng, in_dim, out_dim, hidden=DEFAULT_GEN_HIDDEN):
        return cls(glorot(rng, in_dim, hidden), glorot(rng, hidden, out_dim))

    def params(self):
        return {"w1": self.w1, "w2": self.w2}


def gcn_forward(model, adj_norm, x, tape=None, train_mode=False, rng=None):
    """Two GCN layers; returns (logits, hidden). Dropout only in train mode."""
    h = ad.relu(tape, ad.matmul(tape, ad.spmm(tape, adj_norm, x), model.w1))
    hidden = h
    if train_mode and model.dropout > 0.0:
        h = ad.dropout(tape, h, model.dropout, rng)
    logits = ad.matmul(tape, ad.spmm(tape, adj_norm, h), model.w2)
    return logits, hidden


def sage_forward(model, mean_adj, x, tape=None, train_mode=False, rng=None):
    """Two layers of relu(W_self h + W_nbr mean_neighbors(h)); returns logits."""
    h = ad.relu(tape, ad.add(tape,
                             ad.matmul(tape, x, model.w_self1),
                             ad.matmul(tape, ad.spmm(tape, mean_adj, x), model.w_nbr1)))
    if train_mode and model.dropout > 0.0:
        h = ad.dropout(tape, h, model.dropout, rng)
    logits = ad.add(tape,
                    ad.matmul(tape, h, model.w_self2),
                    ad.matmul(tape, ad.spmm(tape, mean_adj, h), model.w_nbr2))
    return logits


def generator_forward(gen, h, tape=None):
    return ad.matmul(tape, ad.relu(tape, ad.matmul(tape, h, gen.w1)), gen.w2)


def gd_step(params, cfg):
    """Plain gradient descent with decoupled weight decay."""
    for p in params.values():
        if p.grad is None:
            continue
        p.data = p.data - cfg.learning_rate * (p.grad + cfg.weight_decay * p.data)


class AdamOptimizer:
    """Adam with decoupled weight decay; used by the training loops.

    Plain GD at the default learning rate stalls long before the
    classifiers fit, so the loops drive this instead of gd_step.
    """

    def __init__(self, cfg, beta1=0.9, beta2=0.999, eps=1e-8):
        self.cfg = cfg
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = 0

    def step(self, params):
        self._t += 1
        lr, wd = self.cfg.learning_rate, self.cfg.weight_decay
        for name, p in params.items():
            if p.grad is None:
                continue
            m = self._m.get(name, 0.0)
            v = self._v.get(name, 0.0)
            m = self.beta1 * m + (1 - self.beta1) * p.grad
            v = self.beta2 * v + (1 - self.beta2) * p.grad ** 2
            self._m[name] = m
            self._v[name] = v
            m_hat = m / (1 - self.beta1 ** self._t)
            v_hat = v / (1 - self.beta2 ** self._t)
            p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + self.eps) + wd * p.data)


def zero_grads(params):
    for p in params.values():
        p.grad = None


def snapshot_params(params):
    return {name: p.data.copy() for name, p in params.items()}


def restore_params(params, snap):
    for name, p in params.items():
        p.data = snap[name].copy()


def softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_node_classifier(forward_fn, model, x, labels, labeled_idx, val_idx,
                          cfg, seed):
    """Full-batch GD training with validation-based early stopping.

    forward_fn(model, x_tensor, tape, train_mode, rng) -> logits tensor.
    Keeps the parameter snapshot with the best validation accuracy; stops
    once the count of consecutive non-improving epochs exceeds cfg.patience.
    Returns (model, best validation accuracy).
    """
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    val_idx = np.asarray(val_idx, dtype=np.int64)
    if len(labeled_idx) == 0:
        raise ConfigError("no labeled nodes to train on")
    rng = np.random.default_rng(seed)
    params = model.params()
    opt = AdamOptimizer(cfg)
    x_t = Tensor(x)
    best_acc = -1.0
    best_snap = snapshot_params(params)
    stale = 0
    for _ in range(cfg.max_epochs):
        tape = Tape()
        logits = forward_fn(model, x_t, tape, True, rng)
        loss = ad.cross_entropy(tape, ad.gather_rows(tape, logits, labeled_idx),
                                labels[labeled_idx])
        zero_grads(params)
        tape.backward(loss)
        opt.step(params)
        logits_eval = forward_fn(model, x_t, None, False, None)
        pred = logits_eval.data.argmax(axis=1)
        acc = float((pred[val_idx] == labels[val_idx]).mean()) if len(val_idx) else 0.0
        if acc >= best_acc:
            # Ties go to the later epoch: among equally accurate snapshots the
            # most-trained one generalizes no worse and keeps fitting the
            # labeled set.
            best_snap = snapshot_params(params)
        if acc > best_acc:
            best_acc = acc
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    restore_params(params, best_snap)
    return model, best_acc


def save_checkpoint(model, path):
    """Line-delimited checkpoint: header record, then one record per matrix."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"format": CHECKPOINT_FORMAT,
                            "kind": type(model).__name__}) + "\n")
        for name, p in model.params().items():
            rec = {"name": name, "shape": list(p.data.shape),
                   "data": p.data.ravel().tolist()}
            f.write(json.dumps(rec) + "\n")


def load_checkpoint(model, path):
    """Load matrices by name into an already-shaped model."""
    params = model.params()
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DatasetError(f"unsupported checkpoint format: {header.get('format')}")
        for line in f:
            rec = json.loads(line)
            name = rec["name"]
            if name not in params:
                raise DatasetError(f"unknown parameter {name!r} in checkpoint")
            arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
            if arr.shape != params[name].data.shape:
                raise DatasetError(f"shape mismatch for {name!r}")
            params[name].data = arr
    return model
