"""Structural defenses applied to the (possibly poisoned) training graph:
similarity-based edge pruning and embedding-space outlier filtering."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graph import TextAttributedGraph, build_adjacency

PRUNE_ABSOLUTE = "absolute"
PRUNE_PERCENTILE = "percentile"


@dataclass
class PruneConfig:
    threshold_mode: str = PRUNE_PERCENTILE
    value: float = 0.05

    def validate(self):
        if self.threshold_mode == PRUNE_PERCENTILE:
            if not (0.0 < self.value < 1.0):
                raise ConfigError("percentile value must lie in (0, 1)")
        elif self.threshold_mode == PRUNE_ABSOLUTE:
            if not (-1.0 <= self.value <= 1.0):
                raise ConfigError("absolute threshold must lie in [-1, 1]")
        else:
            raise ConfigError(f"unknown prune mode {self.threshold_mode!r}")


@dataclass
class OdConfig:
    k: int = 10
    removal_fraction: float = 0.05

    def validate(self):
        if self.k < 1:
            raise ConfigError("neighbor count k must be >= 1")
        if not (0.0 < self.removal_fraction < 0.5):
            raise ConfigError("removal_fraction must lie in (0, 0.5)")


def _cosine_rows(a, b):
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    denom = np.where((na > 0) & (nb > 0), na * nb, 1.0)
    sims = (a * b).sum(axis=-1) / denom
    return np.where((na > 0) & (nb > 0), sims, 0.0)


def prune_edges(graph, embeddings, cfg):
    """Drop undirected edges with low endpoint cosine similarity.

    Percentile mode removes the ceil(value * |E|) lowest-similarity edges
    (ties by edge id ascending); absolute mode removes edges whose
    similarity is strictly below the threshold.
    Returns (pruned graph, list of (u, v, similarity) removed).
    """
    cfg.validate()
    edges = graph.undirected_edges()
    if not edges:
        return graph, []
    us = np.array([e[0] for e in edges])
    vs = np.array([e[1] for e in edges])
    sims = _cosine_rows(embeddings[us], embeddings[vs])
    if cfg.threshold_mode == PRUNE_ABSOLUTE:
        removed_idx = np.flatnonzero(sims < cfg.value)
    else:
        n_remove = math.ceil(cfg.value * len(edges))
        order = np.lexsort((np.arange(len(edges)), sims))
        removed_idx = np.sort(order[:n_remove])
    removed_set = set(removed_idx.tolist())
    kept = [edges[i] for i in range(len(edges)) if i not in removed_set]
    offsets, neighbors = build_adjacency(graph.num_nodes, kept)
    pruned = TextAttributedGraph(graph.num_nodes, offsets, neighbors,
                                 graph.texts, graph.labels, graph.num_classes)
    removed = [(int(us[i]), int(vs[i]), float(sims[i])) for i in removed_idx]
    return pruned, removed


def detect_outliers(embeddings, training_ids, cfg):
    """Flag embedding-space outliers among training nodes.

    Score = mean cosine distance to the k nearest training neighbors;
    the top ceil(removal_fraction * |train|) scores are flagged (ties by
    node id ascending). Returns list of (node_id, score), flagged nodes
    should have their labels masked before target training.
    """
    cfg.validate()
    ids = np.asarray(training_ids, dtype=np.int64)
    if len(ids) < cfg.k + 1:
        raise ConfigError(f"need at least k+1 = {cfg.k + 1} training nodes")
    x = embeddings[ids]
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[:, None]
    sims = unit @ unit.T
    zero = norms == 0
    sims[zero, :] = 0.0
    sims[:, zero] = 0.0
    dist = 1.0 - sims
    np.fill_diagonal(dist, np.inf)
    part = np.sort(dist, axis=1)[:, :cfg.k]
    scores = part.mean(axis=1)
    n_flag = math.ceil(cfg.removal_fraction * len(ids))
    order = np.lexsort((ids, -scores))
    flagged = order[:n_flag]
    return [(int(ids[i]), float(scores[i])) for i in sorted(flagged.tolist())]
