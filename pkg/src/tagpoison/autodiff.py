"""Minimal reverse-mode autodiff over rank <= 2 float64 tensors.

Operations executed against a Tape record a backward closure; Tape.backward
replays the records in reverse, accumulating gradients into Tensor.grad.
Passing tape=None runs the forward computation without recording
(inference mode).
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def _accum(tensor, grad):
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


class Tape:
    def __init__(self):
        self._records = []  # (output tensor, backward closure), in execution order

    def record(self, out, backward):
        self._records.append((out, backward))

    def backward(self, loss):
        if loss.data.shape != ():
            raise ShapeError("backward requires a scalar loss")
        loss.grad = np.ones(())
        for out, bwd in reversed(self._records):
            if out.grad is not None:
                bwd(out.grad)


def matmul(tape, a, b):
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    if tape is not None:
        a_data, b_data = a.data, b.data

        def bwd(g):
            _accum(a, g @ b_data.T)
            _accum(b, a_data.T @ g)
        tape.record(out, bwd)
    return out


def spmm(tape, sparse, x):
    """Sparse (constant) @ dense product."""
    if sparse.shape[1] != x.data.shape[0]:
        raise ShapeError(f"spmm {sparse.shape} x {x.data.shape}")
    out = Tensor(sparse @ x.data)
    if tape is not None:
        st = sparse.T.tocsr()

        def bwd(g):
            _accum(x, st @ g)
        tape.record(out, bwd)
    return out


def add(tape, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)
    if tape is not None:
        def bwd(g):
            _accum(a, g)
            _accum(b, g)
        tape.record(out, bwd)
    return out


def scale(tape, a, c):
    out = Tensor(a.data * c)
    if tape is not None:
        def bwd(g):
            _accum(a, g * c)
        tape.record(out, bwd)
    return out


def relu(tape, a):
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    if tape is not None:
        def bwd(g):
            _accum(a, g * mask)
        tape.record(out, bwd)
    return out


def dropout(tape, a, rate, rng):
    """Inverted dropout with an explicit seeded RNG (training mode only)."""
    if rate == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * mask)
    if tape is not None:
        def bwd(g):
            _accum(a, g * mask)
        tape.record(out, bwd)
    return out


def row_log_softmax(tape, a):
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(z - lse)
    if tape is not None:
        softmax = np.exp(out.data)

        def bwd(g):
            _accum(a, g - softmax * g.sum(axis=1, keepdims=True))
        tape.record(out, bwd)
    return out


def gather_rows(tape, a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx])
    if tape is not None:
        shape = a.data.shape

        def bwd(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            _accum(a, full)
        tape.record(out, bwd)
    return out


def row_scatter(tape, base, idx, p):
    """Copy of constant `base` with rows[idx] replaced by tensor `p`."""
    idx = np.asarray(idx, dtype=np.int64)
    if p.data.shape != (len(idx), base.shape[1]):
        raise ShapeError(f"row_scatter rows {p.data.shape} vs {(len(idx), base.shape[1])}")
    data = np.array(base, dtype=np.float64)
    data[idx] = p.data
    out = Tensor(data)
    if tape is not None:
        def bwd(g):
            _accum(p, g[idx])
        tape.record(out, bwd)
    return out


def unit_rows(tape, a):
    """L2-normalize each row; all-zero rows stay zero (zero gradient)."""
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    out = Tensor(a.data / safe)
    if tape is not None:
        unit = out.data

        def bwd(g):
            proj = (g * unit).sum(axis=1, keepdims=True)
            _accum(a, np.where(norms > 0, (g - unit * proj) / safe, 0.0))
        tape.record(out, bwd)
    return out


def cross_entropy(tape, logits, labels):
    """Mean negative log-softmax probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.data.shape[0]
    if n == 0:
        raise ShapeError("cross_entropy over an empty row set")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    out = Tensor(-logp[np.arange(n), labels].mean())
    if tape is not None:
        softmax = np.exp(logp)

        def bwd(g):
            grad = softmax.copy()
            grad[np.arange(n), labels] -= 1.0
            _accum(logits, grad * (float(g) / n))
        tape.record(out, bwd)
    return out


def cosine_sim_loss(tape, a, b):
    """Sum over rows of 1 - cos(a_i, b_i); a zero row contributes 1."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cosine_sim_loss {a.data.shape} vs {b.data.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    ok = (na > 0) & (nb > 0)
    dots = (a.data * b.data).sum(axis=1)
    cos = np.zeros(len(na))
    cos[ok] = dots[ok] / (na[ok] * nb[ok])
    out = Tensor(np.sum(1.0 - cos))
    if tape is not None:
        def bwd(g):
            ga = np.zeros_like(a.data)
            gb = np.zeros_like(b.data)
            d = float(g)
            denom = np.where(ok, na * nb, 1.0)[:, None]
            na2 = np.where(na > 0, na, 1.0) ** 2
            nb2 = np.where(nb > 0, nb, 1.0) ** 2
            # d(1-cos)/da = -(b/(|a||b|) - cos * a/|a|^2)
            ga[ok] = -d * (b.data[ok] / denom[ok]
                           - cos[ok, None] * a.data[ok] / na2[ok, None])
            gb[ok] = -d * (a.data[ok] / denom[ok]
                           - cos[ok, None] * b.data[ok] / nb2[ok, None])
            _accum(a, ga)
            _accum(b, gb)
        tape.record(out, bwd)
    return out


def entropy(probs):
    """Shannon entropy of a distribution; 0 log 0 taken as 0. Not on tape."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.min() < -1e-9 or abs(probs.sum() - 1.0) > 1e-9:
        raise ShapeError("entropy requires a probability distribution")
    p = np.clip(probs, 0.0, 1.0)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())
