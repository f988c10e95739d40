"""Shared fixtures: small graphs, vocabularies, and a finite-difference
gradient checker used across the unit and acceptance suites."""
import numpy as np
import pytest

from tagpoison import graph as g
from tagpoison.codec import build_vocab, encode_all


@pytest.fixture
def path_graph():
    """Undirected path 0 - 1 - 2 with one-word texts."""
    offsets, neighbors = g.build_adjacency(3, [(0, 1), (1, 2)])
    return g.TextAttributedGraph(3, offsets, neighbors,
                                 ("alpha", "beta", "gamma"),
                                 np.array([0, 1, 0], dtype=np.int64), 2)


@pytest.fixture
def small_synthetic():
    spec = g.SyntheticSpec(num_classes=2, nodes_per_class=20, p_intra=0.2,
                           p_inter=0.02, class_vocab_size=5,
                           shared_vocab_size=5, words_per_text=4, seed=0)
    return g.generate_synthetic(spec)


@pytest.fixture
def small_encoded(small_synthetic):
    vocab = build_vocab(small_synthetic.texts, 64)
    x = encode_all(small_synthetic.texts, vocab)
    return small_synthetic, vocab, x


def finite_difference_check(forward, params, step=1e-5, rel_tol=1e-4):
    """Central finite differences against recorded gradients.

    `forward` takes no arguments and returns a scalar loss Tensor after
    running a fresh tape backward; `params` is a list of Tensors whose
    .grad fields the closure populates.
    """
    loss = forward()
    grads = [None if p.grad is None else p.grad.copy() for p in params]
    for p, analytic in zip(params, grads):
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        # probe a handful of coordinates per tensor to keep runtime bounded
        rng = np.random.default_rng(0)
        n_probe = min(flat.size, 6)
        idx = rng.choice(flat.size, size=n_probe, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(forward().data)
            flat[i] = orig - step
            down = float(forward().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            got = analytic.reshape(-1)[i]
            denom = max(abs(numeric), abs(got), 1.0)
            assert abs(numeric - got) / denom < rel_tol, (
                f"gradient mismatch: numeric {numeric}, analytic {got}")
    return float(loss.data)
