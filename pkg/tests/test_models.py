"""Classifier / generator models, the optimizer, and the training loop."""
import numpy as np
import pytest

from tagpoison import graph as g
from tagpoison.autodiff import Tape, Tensor
from tagpoison import autodiff as ad
from tagpoison.codec import build_vocab, encode_all
from tagpoison.errors import ConfigError, DatasetError
from tagpoison.models import (AdamOptimizer, GcnModel, MlpGenerator,
                              OptimizerConfig, SageModel, gcn_forward,
                              generator_forward, gd_step, load_checkpoint,
                              sage_forward, save_checkpoint, snapshot_params,
                              restore_params, softmax_rows,
                              train_node_classifier, zero_grads)


def quadratic_loss(w):
    tape = Tape()
    target = Tensor(np.full_like(w.data, 3.0))
    diff = ad.add(tape, w, ad.scale(tape, target, -1.0))
    loss = ad.cosine_sim_loss(tape, diff, Tensor(np.ones_like(w.data)))
    return tape, loss


def test_adam_reduces_training_loss():
    rng = np.random.default_rng(0)
    w = Tensor(rng.standard_normal((4, 3)))
    labels = np.array([0, 1, 2, 0])
    x = Tensor(rng.standard_normal((4, 4)))
    opt = AdamOptimizer(OptimizerConfig(learning_rate=0.05, weight_decay=0.0))
    losses = []
    for _ in range(50):
        tape = Tape()
        loss = ad.cross_entropy(tape, ad.matmul(tape, x, w), labels)
        zero_grads({"w": w})
        tape.backward(loss)
        opt.step({"w": w})
        losses.append(float(loss.data))
    assert losses[-1] < 0.1 * losses[0]


def test_gd_step_applies_gradient_and_decay():
    cfg = OptimizerConfig(learning_rate=0.1, weight_decay=0.5)
    w = Tensor(np.array([[2.0]]))
    w.grad = np.array([[1.0]])
    gd_step({"w": w}, cfg)
    # 2 - 0.1 * (1 + 0.5 * 2) = 1.8
    assert w.data[0, 0] == pytest.approx(1.8)


def test_snapshot_restore_round_trip():
    w = Tensor(np.arange(4.0).reshape(2, 2))
    params = {"w": w}
    snap = snapshot_params(params)
    w.data += 100.0
    restore_params(params, snap)
    np.testing.assert_array_equal(w.data, np.arange(4.0).reshape(2, 2))


def test_softmax_rows():
    probs = softmax_rows(np.array([[0.0, 0.0], [100.0, 0.0]]))
    np.testing.assert_allclose(probs[0], [0.5, 0.5])
    assert probs[1, 0] > 0.999


def _toy_problem(seed=0):
    spec = g.SyntheticSpec(2, 25, 0.25, 0.02, 4, 2, 5, seed=seed)
    graph = g.generate_synthetic(spec)
    vocab = build_vocab(graph.texts, 32)
    x = encode_all(graph.texts, vocab)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(graph.num_nodes)
    return graph, x, perm[:20], perm[20:35]


def test_gcn_training_fits_separable_classes():
    graph, x, labeled, val = _toy_problem()
    adj = g.normalized_adjacency(graph)

    def fwd(m, x_t, tape, train, rng):
        return gcn_forward(m, adj, x_t, tape, train, rng)[0]

    model = GcnModel.init(np.random.default_rng(1), x.shape[1], 2, hidden=16,
                          dropout=0.5)
    cfg = OptimizerConfig(max_epochs=100, patience=30)
    model, val_acc = train_node_classifier(fwd, model, x, graph.labels,
                                           labeled, val, cfg, seed=2)
    assert val_acc >= 0.9


def test_sage_training_fits_separable_classes():
    graph, x, labeled, val = _toy_problem(seed=3)
    adj = g.mean_adjacency(graph)

    def fwd(m, x_t, tape, train, rng):
        return sage_forward(m, adj, x_t, tape, train, rng)

    model = SageModel.init(np.random.default_rng(1), x.shape[1], 2, hidden=16,
                           dropout=0.5)
    cfg = OptimizerConfig(max_epochs=100, patience=30)
    model, val_acc = train_node_classifier(fwd, model, x, graph.labels,
                                           labeled, val, cfg, seed=2)
    assert val_acc >= 0.9


def test_training_requires_labeled_nodes():
    graph, x, _, val = _toy_problem()
    adj = g.normalized_adjacency(graph)
    model = GcnModel.init(np.random.default_rng(1), x.shape[1], 2, hidden=8)

    def fwd(m, x_t, tape, train, rng):
        return gcn_forward(m, adj, x_t, tape, train, rng)[0]

    with pytest.raises(ConfigError):
        train_node_classifier(fwd, model, x, graph.labels, [], val,
                              OptimizerConfig(), seed=0)


def test_training_early_stops_before_max_epochs():
    graph, x, labeled, val = _toy_problem()
    adj = g.normalized_adjacency(graph)
    calls = {"n": 0}

    def fwd(m, x_t, tape, train, rng):
        if train:
            calls["n"] += 1
        return gcn_forward(m, adj, x_t, tape, train, rng)[0]

    model = GcnModel.init(np.random.default_rng(1), x.shape[1], 2, hidden=16)
    cfg = OptimizerConfig(max_epochs=300, patience=5)
    train_node_classifier(fwd, model, x, graph.labels, labeled, val, cfg, 0)
    assert calls["n"] < 300


def test_training_is_seed_deterministic():
    graph, x, labeled, val = _toy_problem()
    adj = g.normalized_adjacency(graph)

    def fwd(m, x_t, tape, train, rng):
        return gcn_forward(m, adj, x_t, tape, train, rng)[0]

    outs = []
    for _ in range(2):
        model = GcnModel.init(np.random.default_rng(1), x.shape[1], 2,
                              hidden=16)
        cfg = OptimizerConfig(max_epochs=40, patience=10)
        model, _ = train_node_classifier(fwd, model, x, graph.labels, labeled,
                                         val, cfg, seed=5)
        outs.append(model.w1.data.copy())
    np.testing.assert_array_equal(outs[0], outs[1])


def test_generator_forward_shapes():
    gen = MlpGenerator.init(np.random.default_rng(0), 8, 20, hidden=16)
    out = generator_forward(gen, Tensor(np.ones((3, 8))))
    assert out.data.shape == (3, 20)


def test_gcn_forward_eval_has_no_dropout_noise():
    graph, x, _, _ = _toy_problem()
    adj = g.normalized_adjacency(graph)
    model = GcnModel.init(np.random.default_rng(0), x.shape[1], 2, hidden=8,
                          dropout=0.9)
    a, _ = gcn_forward(model, adj, Tensor(x))
    b, _ = gcn_forward(model, adj, Tensor(x))
    np.testing.assert_array_equal(a.data, b.data)


def test_checkpoint_round_trip(tmp_path):
    model = GcnModel.init(np.random.default_rng(0), 5, 3, hidden=4)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    other = GcnModel.init(np.random.default_rng(99), 5, 3, hidden=4)
    load_checkpoint(other, path)
    np.testing.assert_array_equal(other.w1.data, model.w1.data)
    np.testing.assert_array_equal(other.w2.data, model.w2.data)
    path.write_text('{"format": "bogus"}\n')
    with pytest.raises(DatasetError):
        load_checkpoint(other, path)
