"""Graph data model: ingestion, splits, synthetic fixtures, adjacency normalization.

Graphs are undirected, stored in compressed sparse form (offset array +
neighbor array), with per-node raw text and a class label. All operations
here are pure; graph values are immutable after construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DatasetError

# Node roles used by the split assignment.
ROLE_LABELED = 0
ROLE_UNLABELED = 1
ROLE_VALIDATION = 2
ROLE_TEST_CLEAN = 3
ROLE_TEST_TARGET = 4

ROLE_NAMES = ("labeled", "unlabeled", "validation", "test_clean", "test_target")


@dataclass(frozen=True)
class TextAttributedGraph:
    num_nodes: int
    offsets: np.ndarray      # int64, length num_nodes + 1
    neighbors: np.ndarray    # int64, directed neighbor entries
    texts: tuple
    labels: np.ndarray       # int64, length num_nodes
    num_classes: int

    def validate(self):
        if len(self.offsets) != self.num_nodes + 1 or self.offsets[0] != 0:
            raise DatasetError("bad offset array")
        if np.any(np.diff(self.offsets) < 0) or self.offsets[-1] != len(self.neighbors):
            raise DatasetError("offset array inconsistent with neighbor array")
        if len(self.texts) != self.num_nodes or len(self.labels) != self.num_nodes:
            raise DatasetError("texts/labels length mismatch")
        if self.num_nodes and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError("label out of range")
        if len(self.neighbors) and (self.neighbors.min() < 0 or self.neighbors.max() >= self.num_nodes):
            raise DatasetError("neighbor index out of range")
        edge_set = set()
        for u in range(self.num_nodes):
            row = self.neighbors[self.offsets[u]:self.offsets[u + 1]]
            if len(set(row.tolist())) != len(row):
                raise DatasetError(f"duplicate neighbor entries at node {u}")
            if u in row:
                raise DatasetError(f"self-loop stored at node {u}")
            for v in row:
                edge_set.add((u, int(v)))
        for (u, v) in edge_set:
            if (v, u) not in edge_set:
                raise DatasetError(f"asymmetric edge ({u}, {v})")

    def neighbors_of(self, i):
        return self.neighbors[self.offsets[i]:self.offsets[i + 1]]

    @property
    def num_undirected_edges(self):
        return len(self.neighbors) // 2

    def undirected_edges(self):
        """Edge list with u < v, ordered by (u, v)."""
        out = []
        for u in range(self.num_nodes):
            for v in self.neighbors_of(u):
                if u < v:
                    out.append((u, int(v)))
        return out


@dataclass(frozen=True)
class SplitAssignment:
    roles: np.ndarray  # int64, one role per node

    def ids_with_role(self, role):
        return np.flatnonzero(self.roles == role)

    @property
    def num_nodes(self):
        return len(self.roles)


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    nodes_per_class: int
    p_intra: float
    p_inter: float
    class_vocab_size: int
    shared_vocab_size: int
    words_per_text: int
    seed: int

    def validate(self):
        counts = (self.num_classes, self.nodes_per_class, self.class_vocab_size,
                  self.shared_vocab_size, self.words_per_text)
        if any(c < 1 for c in counts):
            raise ConfigError("synthetic spec counts must be >= 1")
        if not (0.0 <= self.p_inter < self.p_intra <= 1.0):
            raise ConfigError("need 0 <= p_inter < p_intra <= 1")


def build_adjacency(num_nodes, edges):
    """Symmetrize, dedupe, drop self-loops; return (offsets, neighbors).

    Neighbor lists are sorted ascending per node.
    """
    pairs = set()
    for u, v in edges:
        if u == v:
            continue
        pairs.add((u, v))
        pairs.add((v, u))
    counts = np.zeros(num_nodes, dtype=np.int64)
    for u, _ in pairs:
        counts[u] += 1
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    neighbors = np.zeros(len(pairs), dtype=np.int64)
    fill = offsets[:-1].copy()
    for u, v in sorted(pairs):
        neighbors[fill[u]] = v
        fill[u] += 1
    return offsets, neighbors


def load_dataset(nodes_path, edges_path):
    """Load a graph from a JSONL node file and a TSV edge file.

    Node ids are remapped to dense 0..N-1 in first-appearance order.
    """
    ids = {}
    texts = []
    labels = []
    with open(nodes_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                node_id = str(rec["id"])
                text = str(rec["text"])
                label = int(rec["label"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{nodes_path}:{lineno}: malformed node record: {exc}") from exc
            if node_id in ids:
                raise DatasetError(f"{nodes_path}:{lineno}: duplicate node id {node_id!r}")
            ids[node_id] = len(ids)
            texts.append(text)
            labels.append(label)
    if min(labels, default=0) < 0:
        raise DatasetError(f"{nodes_path}: negative label")
    num_classes = max(labels, default=-1) + 1
    edges = []
    with open(edges_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{edges_path}:{lineno}: expected source<TAB>target")
            src, dst = parts
            if src not in ids or dst not in ids:
                raise DatasetError(f"{edges_path}:{lineno}: edge references unknown id")
            edges.append((ids[src], ids[dst]))
    offsets, neighbors = build_adjacency(len(ids), edges)
    graph = TextAttributedGraph(len(ids), offsets, neighbors, tuple(texts),
                                np.asarray(labels, dtype=np.int64), num_classes)
    graph.validate()
    return graph


def save_dataset(graph, nodes_path, edges_path):
    """Inverse of load_dataset for the same file formats."""
    with open(nodes_path, "w", encoding="utf-8") as f:
        for i in range(graph.num_nodes):
            rec = {"id": str(i), "text": graph.texts[i], "label": int(graph.labels[i])}
            f.write(json.dumps(rec) + "\n")
    with open(edges_path, "w", encoding="utf-8") as f:
        for u, v in graph.undirected_edges():
            f.write(f"{u}\t{v}\n")


def make_split(graph, test_fraction=0.20, labeled_fraction=0.10, val_fraction=0.10, seed=0):
    """Random role assignment.

    test_fraction of nodes become test (halved into clean/target, the odd
    node going to target); of the remainder, labeled_fraction become labeled
    train and val_fraction validation; the rest are unlabeled train.
    """
    for name, frac in (("test_fraction", test_fraction),
                       ("labeled_fraction", labeled_fraction),
                       ("val_fraction", val_fraction)):
        if not (0.0 < frac < 1.0):
            raise ConfigError(f"{name} must lie in (0, 1), got {frac}")
    if labeled_fraction + val_fraction >= 1.0:
        raise ConfigError("labeled_fraction + val_fraction must be < 1")
    n = graph.num_nodes
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(n * test_fraction)
    n_target = (n_test + 1) // 2
    rest = n - n_test
    n_lab = int(rest * labeled_fraction)
    n_val = int(rest * val_fraction)
    roles = np.full(n, ROLE_UNLABELED, dtype=np.int64)
    roles[perm[:n_target]] = ROLE_TEST_TARGET
    roles[perm[n_target:n_test]] = ROLE_TEST_CLEAN
    roles[perm[n_test:n_test + n_lab]] = ROLE_LABELED
    roles[perm[n_test + n_lab:n_test + n_lab + n_val]] = ROLE_VALIDATION
    return SplitAssignment(roles)


def induced_training_graph(graph, split):
    """Subgraph on non-test nodes, plus an old-id -> new-id map (-1 = dropped)."""
    keep = (split.roles != ROLE_TEST_CLEAN) & (split.roles != ROLE_TEST_TARGET)
    old_ids = np.flatnonzero(keep)
    index_map = np.full(graph.num_nodes, -1, dtype=np.int64)
    index_map[old_ids] = np.arange(len(old_ids))
    edges = []
    for u in old_ids:
        for v in graph.neighbors_of(u):
            if keep[v] and u < v:
                edges.append((index_map[u], index_map[v]))
    offsets, neighbors = build_adjacency(len(old_ids), edges)
    sub = TextAttributedGraph(len(old_ids), offsets, neighbors,
                              tuple(graph.texts[i] for i in old_ids),
                              graph.labels[old_ids].copy(), graph.num_classes)
    return sub, index_map


def generate_synthetic(spec):
    """Planted-partition graph with class-conditional vocabulary texts.

    Each text samples words_per_text tokens, 80% from the node's class
    vocabulary and 20% from the shared vocabulary.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.num_classes * spec.nodes_per_class
    labels = np.repeat(np.arange(spec.num_classes), spec.nodes_per_class)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, spec.p_intra, spec.p_inter)
    hit = rng.random(len(iu)) < prob
    edges = list(zip(iu[hit].tolist(), ju[hit].tolist()))
    offsets, neighbors = build_adjacency(n, edges)
    class_vocab = [[f"c{c}w{j}" for j in range(spec.class_vocab_size)]
                   for c in range(spec.num_classes)]
    shared_vocab = [f"sw{j}" for j in range(spec.shared_vocab_size)]
    texts = []
    for i in range(n):
        words = []
        for _ in range(spec.words_per_text):
            if rng.random() < 0.8:
                words.append(class_vocab[labels[i]][rng.integers(spec.class_vocab_size)])
            else:
                words.append(shared_vocab[rng.integers(spec.shared_vocab_size)])
        texts.append(" ".join(words))
    graph = TextAttributedGraph(n, offsets, neighbors, tuple(texts),
                                labels, spec.num_classes)
    return graph


def _adjacency_csr(graph):
    indptr = graph.offsets.astype(np.int64)
    data = np.ones(len(graph.neighbors), dtype=np.float64)
    return sp.csr_matrix((data, graph.neighbors, indptr),
                         shape=(graph.num_nodes, graph.num_nodes))


def normalized_adjacency(graph):
    """Symmetric GCN normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}."""
    a = _adjacency_csr(graph) + sp.identity(graph.num_nodes, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def mean_adjacency(graph):
    """Row-normalized adjacency without self-loops (mean aggregation).

    Rows of isolated nodes are all-zero, so the neighbor mean is the zero
    vector.
    """
    a = _adjacency_csr(graph)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (sp.diags(inv) @ a).tocsr()


def adjacency_checksum(graph):
    """Stable digest of the adjacency structure (topology-invariance audits)."""
    return hash((graph.offsets.tobytes(), graph.neighbors.tobytes()))
