"""Bag-of-words text codec and a bigram language model for perplexity.

Tokenization is lowercase splitting on any non-alphanumeric run; empty
tokens are dropped. BOW vectors are term-frequency counts over the
vocabulary, L2-normalized (zero vector when no token is in-vocabulary).
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MetricError, ShapeError

_TOKEN_RE = re.compile(r"[a-z0-9]+")

DEFAULT_VOCAB_SIZE = 1024

BOS = "<BOS>"
UNK = "<UNK>"


def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple            # index -> token
    index: dict              # token -> index
    frequencies: tuple       # corpus frequency per token

    @property
    def size(self):
        return len(self.tokens)


def build_vocab(texts, max_size=DEFAULT_VOCAB_SIZE):
    """Top max_size tokens by corpus frequency, lexicographic tie-break."""
    if max_size < 1:
        raise ConfigError("max_size must be >= 1")
    counts = Counter()
    for text in texts:
        counts.update(tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    tokens = tuple(tok for tok, _ in ranked)
    freqs = tuple(c for _, c in ranked)
    return Vocabulary(tokens, {tok: i for i, tok in enumerate(tokens)}, freqs)


def encode(text, vocab):
    """L2-normalized term-frequency vector; OOV tokens ignored."""
    vec = np.zeros(vocab.size, dtype=np.float64)
    for tok in tokenize(text):
        idx = vocab.index.get(tok)
        if idx is not None:
            vec[idx] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def encode_all(texts, vocab):
    return np.stack([encode(t, vocab) for t in texts]) if texts else \
        np.zeros((0, vocab.size))


def decode(vec, vocab, max_tokens):
    """Tokens with positive weight, by descending weight (ties by index)."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (vocab.size,):
        raise ShapeError(f"expected vector of length {vocab.size}, got {vec.shape}")
    pos = np.flatnonzero(vec > 0)
    order = pos[np.lexsort((pos, -vec[pos]))]
    return " ".join(vocab.tokens[i] for i in order[:max_tokens])


def export_vocab(vocab, path):
    """Audit export: one `index<TAB>token<TAB>frequency` line per entry."""
    with open(path, "w", encoding="utf-8") as f:
        for i, (tok, freq) in enumerate(zip(vocab.tokens, vocab.frequencies)):
            f.write(f"{i}\t{tok}\t{freq}\n")


@dataclass
class BigramLm:
    tokens: tuple                 # LM vocabulary, without BOS/UNK
    index: dict
    k: float
    context_counts: dict = field(default_factory=dict)   # context token -> count
    bigram_counts: dict = field(default_factory=dict)    # (context, next) -> count

    @property
    def smoothing_denom_size(self):
        # successors range over vocabulary plus UNK
        return len(self.tokens) + 1

    def cond_prob(self, prev, tok):
        """Add-k smoothed p(tok | prev); OOV tokens map to UNK."""
        prev_k = prev if prev == BOS else (prev if prev in self.index else UNK)
        tok_k = tok if tok in self.index else UNK
        num = self.bigram_counts.get((prev_k, tok_k), 0) + self.k
        den = self.context_counts.get(prev_k, 0) + self.k * self.smoothing_denom_size
        return num / den


def train_bigram_lm(texts, k=1.0):
    if k <= 0:
        raise ConfigError("smoothing constant k must be > 0")
    token_lists = [tokenize(t) for t in texts]
    all_tokens = sorted({tok for toks in token_lists for tok in toks})
    if not all_tokens:
        raise ConfigError("cannot train a language model on an empty corpus")
    lm = BigramLm(tuple(all_tokens), {t: i for i, t in enumerate(all_tokens)}, k)
    for toks in token_lists:
        prev = BOS
        for tok in toks:
            lm.context_counts[prev] = lm.context_counts.get(prev, 0) + 1
            lm.bigram_counts[(prev, tok)] = lm.bigram_counts.get((prev, tok), 0) + 1
            prev = tok
    return lm


def perplexity(lm, text):
    """exp(-mean log p(t_i | t_{i-1})) over i = 1..n-1."""
    toks = tokenize(text)
    if len(toks) < 2:
        raise MetricError("perplexity needs at least 2 tokens")
    total = 0.0
    for prev, tok in zip(toks, toks[1:]):
        total += math.log(lm.cond_prob(prev, tok))
    return math.exp(-total / (len(toks) - 1))
